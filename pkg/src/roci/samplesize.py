"""Power over a grid of sample sizes, loess smoothing and the sample-size choice."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InsufficientRangeError, ValidationError
from .inference import Method
from .montecarlo import MCConfig, PerfReport, performance, run_replicates
from .trial import ArmGrid, Margin, Scenario


@dataclass
class PowerCurve:
    points: list[tuple[int, float, float]]
    smoothed: list[tuple[int, float]] = field(default_factory=list)
    span: float = 0.75
    reports: list[PerfReport] = field(default_factory=list)


@dataclass
class SampleSizeResult:
    recommended_n: int
    validated: bool
    validation_power: float
    validation_lo: float
    validation_hi: float
    final_n: int
    inflation_step: float
    rounds: list[PerfReport] = field(default_factory=list)


def round_up(n: float, granularity: int) -> int:
    # guard against 1550 * 1.1 style products landing a hair above a multiple
    return int(math.ceil(n / granularity - 1e-9) * granularity)


def power_grid(scenario: Scenario, grid: ArmGrid, margin: Margin, N_values, mc: MCConfig, workers: int = 1, min_nsim: int = 100) -> PowerCurve:
    N_values = [int(v) for v in N_values]
    if not N_values:
        raise ValidationError("N_values is empty")
    if any(b <= a for a, b in zip(N_values, N_values[1:])):
        raise ValidationError("N_values must be strictly increasing")
    if mc.nsim < min_nsim:
        raise ValidationError(f"power grid needs nsim >= {min_nsim}, got {mc.nsim}")
    reports = []
    for N in N_values:
        counts = run_replicates(scenario, grid, N, margin, mc, workers)
        reports.append(performance(counts, scenario, grid, margin, min_nsim))
    points = [(r.N, r.optimal_power.value, r.optimal_power.se) for r in reports]
    return PowerCurve(points, reports=reports)


def loess_smooth(points, span: float = 0.75, out_grid=None) -> list[tuple[float, float]]:
    """Tricube-weighted local linear smoother evaluated on ``out_grid``.

    Each output location uses its ``ceil(span * k)`` nearest input points.
    """
    pts = sorted((float(p[0]), float(p[1])) for p in points)
    if len(pts) < 4:
        raise ValidationError(f"loess needs at least 4 points, got {len(pts)}; report the raw points instead")
    if not 0 < span <= 1:
        raise ValidationError(f"span must lie in (0, 1], got {span}")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    out = x if out_grid is None else np.asarray(out_grid, dtype=float)
    q = max(int(math.ceil(span * len(x) - 1e-12)), 2)
    res = []
    for x0 in out:
        d = np.abs(x - x0)
        idx = np.argsort(d, kind="stable")[:q]
        dmax = d[idx].max()
        w = np.ones(q) if dmax == 0 else (1 - np.clip(d[idx] / dmax, 0, 1) ** 3) ** 3
        xi, yi = x[idx], y[idx]
        sw = w.sum()
        xbar = np.dot(w, xi) / sw
        ybar = np.dot(w, yi) / sw
        sxx = np.dot(w, (xi - xbar) ** 2)
        if sxx <= 1e-12 * max(1.0, xbar**2) * sw:
            fit = ybar
        else:
            slope = np.dot(w, (xi - xbar) * (yi - ybar)) / sxx
            fit = ybar + slope * (x0 - xbar)
        res.append((float(x0), float(min(max(fit, 0.0), 1.0))))
    return res


def smooth_curve(curve: PowerCurve, span: float, dense_step: int) -> PowerCurve:
    if len(curve.points) < 4:
        curve.smoothed = []
        return curve
    lo, hi = curve.points[0][0], curve.points[-1][0]
    dense = np.arange(lo, hi + 1, dense_step)
    curve.smoothed = [(int(round(n)), p) for n, p in loess_smooth(curve.points, span, dense)]
    curve.span = span
    return curve


def recommend_n(curve: PowerCurve, target: float, granularity: int = 50) -> int:
    """Smallest N whose smoothed power reaches ``target``, rounded up to ``granularity``."""
    if not curve.smoothed:
        raise ValidationError("power curve has not been smoothed")
    for n, p in curve.smoothed:
        if p >= target:
            return round_up(n, granularity)
    best = max(p for _, p in curve.smoothed)
    raise InsufficientRangeError(
        f"target power {target} not reached on the N grid (max smoothed power {best:.3f})", max_power=best
    )


def validate_bootstrap(scenario: Scenario, grid: ArmGrid, margin: Margin, n: int, target: float, inflation_step: float, mc: MCConfig, granularity: int = 50, max_rounds: int = 1, workers: int = 1, runner=None) -> SampleSizeResult:
    """Check ``n`` with bootstrap inference and inflate it if power falls short.

    ``runner(N)`` may be supplied to reuse precomputed reports; it must return a
    :class:`PerfReport` for the bootstrap method at ``N``.
    """
    if inflation_step < 0:
        raise ValidationError("inflation_step must be non-negative")
    mc = replace(mc, method=Method.BOOTSTRAP)
    if runner is None:
        def runner(N):
            return performance(run_replicates(scenario, grid, N, margin, mc, workers), scenario, grid, margin)

    rounds = [runner(n)]
    current = n
    while rounds[-1].optimal_power.value < target and len(rounds) <= max_rounds and inflation_step > 0:
        current = round_up(current * (1 + inflation_step), granularity)
        rounds.append(runner(current))
    last = rounds[-1].optimal_power
    return SampleSizeResult(
        recommended_n=n,
        validated=last.value >= target,
        validation_power=rounds[0].optimal_power.value,
        validation_lo=rounds[0].optimal_power.lo,
        validation_hi=rounds[0].optimal_power.hi,
        final_n=current,
        inflation_step=inflation_step,
        rounds=rounds,
    )
