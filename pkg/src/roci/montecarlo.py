"""Monte Carlo replication of whole trials and their operating characteristics."""

from __future__ import annotations

import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import fp
from .errors import ValidationError
from .inference import Method, Rule, _resample_rr, delta_log_rr, select_arm
from .trial import ArmGrid, Margin, Scenario, classify_arms

# Replicates are analysed in blocks of a fixed size; the block layout never
# depends on the worker count, which keeps results bitwise reproducible.
DELTA_BLOCK = 250
BOOTSTRAP_BLOCK = 5


@dataclass(frozen=True)
class MCConfig:
    nsim: int = 1000
    method: Method = Method.DELTA
    B: int = 1000
    alpha: float = 0.05
    rule: Rule = Rule.MAX_PREFERRED_PASSING
    allocation: str = "equal"
    master_seed: int = 20240101
    scale: float | None = None
    fit: fp.FitControl = field(default_factory=fp.FitControl)
    candidates: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "rule", Rule(self.rule))
        if self.nsim < 1:
            raise ValidationError(f"nsim must be >= 1, got {self.nsim}")
        if self.method is Method.BOOTSTRAP and self.B < 100:
            raise ValidationError(f"bootstrap needs B >= 100, got {self.B}")
        if not 0 < self.alpha < 0.5:
            raise ValidationError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if self.allocation != "equal":
            raise ValidationError(f"only equal allocation is supported, got {self.allocation!r}")
        if not 0 <= self.master_seed < 2**64:
            raise ValidationError("master_seed must be a 64-bit unsigned integer")


def scenario_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def replicate_rng(master_seed: int, scenario: str, N: int, r: int) -> np.random.Generator:
    """Independent counter-based stream for replicate ``r``."""
    ss = np.random.SeedSequence([master_seed, scenario_key(scenario), N, r])
    return np.random.Generator(np.random.Philox(ss))


def allocate(N: int, grid: ArmGrid) -> np.ndarray:
    """Equal split; leftover patients go to the arms nearest the control."""
    J = len(grid)
    if N < J:
        raise ValidationError(f"N = {N} is smaller than the number of arms ({J})")
    n = np.full(J, N // J)
    for i in grid.preference_order[: N % J]:
        n[i] += 1
    return n


def simulate_dataset(scenario: Scenario, grid: ArmGrid, N: int, rng: np.random.Generator) -> fp.TrialDataset:
    n = allocate(N, grid)
    if len(scenario.probs) != len(grid):
        raise ValidationError("scenario and grid lengths differ")
    events = rng.binomial(n, np.asarray(scenario.probs))
    return fp.TrialDataset(grid, tuple(n), tuple(events))


@dataclass(frozen=True)
class SelectionCounts:
    scenario: str
    N: int
    counts: tuple[int, ...]
    failures: int

    @property
    def nsim(self) -> int:
        return sum(self.counts)


def _delta_select(X, n, y, grid: ArmGrid, margin_rr, z, rule, control):
    """Selected arm per dataset under delta-method bounds; also a failure mask."""
    c = grid.control_index
    fit = fp.irls_batch(X, n, y, control)
    k = fp.select_from_batch(fit)
    M = len(k)
    safe = np.maximum(k, 0)
    Xs = X[safe]
    beta = fit.beta[np.arange(M), safe]
    cov, ok = fp.fisher_covariance(Xs, n, beta)
    log_rr, var = delta_log_rr(Xs, beta, cov, c)
    others = np.arange(len(grid)) != c
    good_var = np.all((var[:, others] > 0) & np.isfinite(var[:, others]), axis=-1)
    failed = (k < 0) | ~ok | ~good_var
    lb = np.exp(log_rr - z * np.sqrt(np.maximum(var, 0.0)))
    passing = (lb > margin_rr) & others
    passing[failed] = False
    return select_arm(passing, grid.ranks, c, rule), failed


def _bootstrap_select(X, n, y, grid: ArmGrid, margin_rr, alpha, rule, control, B, rng):
    c = grid.control_index
    fit = fp.irls_batch(X, n[None], y[None], control)
    if fp.select_from_batch(fit)[0] < 0:
        # no converged model on the trial data itself; resamples are still drawn
        # so that every replicate consumes its stream identically
        rng.binomial(n, y / np.maximum(n, 1), size=(B, len(n)))
        return c, True
    p = np.where(n > 0, y / np.maximum(n, 1), 0.0)
    ystar = rng.binomial(n.astype(np.int64), p, size=(B, len(n)))
    rr = _resample_rr(X, np.broadcast_to(n, ystar.shape), ystar, c, control)
    lower = np.quantile(rr, alpha, axis=0, method="linear")
    passing = lower > margin_rr
    passing[c] = False
    return int(select_arm(passing, grid.ranks, c, rule)), False


def _run_block(args):
    scenario, grid, N, margin_rr, mc, start, stop = args
    X = fp.candidate_designs(
        grid,
        fp.enumerate_fp2() if mc.candidates is None else [tuple(c) for c in mc.candidates],
        fp.default_scale(grid) if mc.scale is None else mc.scale,
    )
    counts = np.zeros(len(grid), dtype=np.int64)
    failures = 0
    rngs = [replicate_rng(mc.master_seed, scenario.name, N, r) for r in range(start, stop)]
    datasets = [simulate_dataset(scenario, grid, N, g) for g in rngs]
    n = np.array([d.n for d in datasets], dtype=float)
    y = np.array([d.events for d in datasets], dtype=float)
    if mc.method is Method.DELTA:
        sel, failed = _delta_select(X, n, y, grid, margin_rr, norm.ppf(1 - mc.alpha), mc.rule, mc.fit)
        np.add.at(counts, sel, 1)
        failures = int(failed.sum())
    else:
        for i, g in enumerate(rngs):
            s, f = _bootstrap_select(X, n[i], y[i], grid, margin_rr, mc.alpha, mc.rule, mc.fit, mc.B, g)
            counts[s] += 1
            failures += int(f)
    return counts, failures


def _blocks(nsim: int, size: int):
    return [(s, min(s + size, nsim)) for s in range(0, nsim, size)]


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_replicates(scenario: Scenario, grid: ArmGrid, N: int, margin: Margin, mc: MCConfig, workers: int = 1) -> SelectionCounts:
    """Simulate and analyse ``mc.nsim`` trials; returns per-arm selection counts.

    Replicate ``r`` always uses the stream keyed on (master_seed, scenario, N, r),
    so the counts do not depend on ``workers``.
    """
    allocate(N, grid)
    size = DELTA_BLOCK if mc.method is Method.DELTA else BOOTSTRAP_BLOCK
    tasks = [(scenario, grid, N, margin.rr, mc, a, b) for a, b in _blocks(mc.nsim, size)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_block, tasks))
    else:
        results = [_run_block(t) for t in tasks]
    counts = np.sum([r[0] for r in results], axis=0)
    failures = sum(r[1] for r in results)
    return SelectionCounts(scenario.name, N, tuple(int(c) for c in counts), failures)


@dataclass(frozen=True)
class Estimate:
    value: float
    lo: float
    hi: float
    se: float

    @classmethod
    def binomial(cls, hits: int, nsim: int) -> "Estimate":
        p = hits / nsim
        se = math.sqrt(p * (1 - p) / nsim)
        return cls(p, p - 1.96 * se, p + 1.96 * se, se)


@dataclass(frozen=True)
class PerfReport:
    scenario: str
    N: int
    nsim: int
    selection_dist: tuple[float, ...]
    optimal_power: Estimate
    acceptable_power: Estimate
    type1_error: Estimate
    control_share: float
    intermediate_powers: dict[int, float]
    failures: int
    optimal_index: int


def performance(counts: SelectionCounts, scenario: Scenario, grid: ArmGrid, margin: Margin, min_nsim: int = 100) -> PerfReport:
    nsim = counts.nsim
    if nsim < min_nsim:
        raise ValidationError(f"performance measures need nsim >= {min_nsim}, got {nsim}")
    cls = classify_arms(scenario, grid, margin)
    c = np.asarray(counts.counts)
    opt = int(c[cls.optimal_index]) if cls.optimal_index != grid.control_index else 0
    acc = int(sum(c[i] for i in cls.acceptable))
    bad = int(sum(c[i] for i in cls.unacceptable))
    ranks = grid.ranks
    inter = {k: int(c[ranks >= k].sum()) / nsim for k in range(1, len(grid))}
    return PerfReport(
        scenario=scenario.name,
        N=counts.N,
        nsim=nsim,
        selection_dist=tuple(c / nsim),
        optimal_power=Estimate.binomial(opt, nsim),
        acceptable_power=Estimate.binomial(acc, nsim),
        type1_error=Estimate.binomial(bad, nsim),
        control_share=int(c[grid.control_index]) / nsim,
        intermediate_powers=inter,
        failures=counts.failures,
        optimal_index=cls.optimal_index,
    )
