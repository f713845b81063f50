"""Sizing the two-arm interim comparison on progression-free survival.

Events come from the Schoenfeld formula; a log-rank simulation with
exponential event times and administrative censoring checks the formula.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .errors import ValidationError

REPORTED_APPROX_N = 150


class Sided(str, enum.Enum):
    ONE = "one"
    TWO = "two"


@dataclass(frozen=True)
class InterimSpec:
    p0: float = 0.5
    p1: float = 0.3
    alpha: float = 0.05
    sided: Sided = Sided.TWO
    power: float = 0.8
    allocation: float = 0.5
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sided", Sided(self.sided))
        for name in ("p0", "p1"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValidationError(f"{name} must lie in (0, 1), got {v}")
        if not 0 < self.alpha < 0.5:
            raise ValidationError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not 0.5 <= self.power < 1:
            raise ValidationError(f"power must lie in [0.5, 1), got {self.power}")
        if not 0 < self.allocation < 1:
            raise ValidationError(f"allocation must lie in (0, 1), got {self.allocation}")
        if not self.tau > 0:
            raise ValidationError("tau must be positive")

    @property
    def alpha_star(self) -> float:
        return self.alpha / 2 if self.sided is Sided.TWO else self.alpha

    @property
    def hr(self) -> float:
        return hr_from_rates(self.p0, self.p1)


@dataclass(frozen=True)
class InterimResult:
    spec: InterimSpec
    hr: float
    events_required: int
    n_total: int
    control_events: int
    sim_power: float | None = None


def hr_from_rates(p0: float, p1: float) -> float:
    """Hazard ratio (experimental vs control) for exponential survival over a common horizon."""
    for p in (p0, p1):
        if not 0 < p < 1:
            raise ValidationError(f"event probabilities must lie in (0, 1), got {p}")
    return math.log1p(-p1) / math.log1p(-p0)


def schoenfeld_events(spec: InterimSpec) -> int:
    hr = spec.hr
    if hr == 1.0:
        raise ValidationError("hazard ratio is 1: no effect to detect")
    a = spec.allocation
    z = norm.ppf(1 - spec.alpha_star) + norm.ppf(spec.power)
    return int(math.ceil(z**2 / (a * (1 - a) * math.log(hr) ** 2) - 1e-9))


def events_to_n(D: int, p0: float, p1: float, allocation: float = 0.5) -> tuple[int, int]:
    """Total sample size giving ``D`` expected events, and the expected control-arm events."""
    a = allocation
    rate = a * p0 + (1 - a) * p1
    n = int(math.ceil(D / rate - 1e-9))
    if a == 0.5 and n % 2:
        n += 1
    return n, int(round(a * n * p0))


def logrank_z(time, event, group) -> float:
    """Two-sample log-rank Z = (O - E) / sqrt(V) for ``group == 1``.

    Uses the hypergeometric variance at each distinct event time. Returns nan
    when there are no events.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    group = np.asarray(group, dtype=bool)
    order = np.argsort(time, kind="stable")
    t, e, g = time[order], event[order], group[order]
    n_total = len(t)
    # at-risk counts just before each time: everything at index >= first occurrence
    uniq, first = np.unique(t, return_index=True)
    at_risk = n_total - first
    at_risk1 = np.cumsum(g[::-1])[::-1][first]
    d = np.add.reduceat(e.astype(float), first)
    d1 = np.add.reduceat((e & g).astype(float), first)
    mask = d > 0
    if not mask.any():
        return float("nan")
    n_, n1, d, d1 = at_risk[mask].astype(float), at_risk1[mask].astype(float), d[mask], d1[mask]
    expected = d * n1 / n_
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(n_ > 1, d * (n1 / n_) * (1 - n1 / n_) * (n_ - d) / (n_ - 1), 0.0)
    V = v.sum()
    if V <= 0:
        return float("nan")
    return float((d1.sum() - expected.sum()) / math.sqrt(V))


def simulate_logrank_power(spec: InterimSpec, n_total: int, nsim: int, seed=0, return_tally: bool = False):
    """Rejection rate of the log-rank test over simulated two-arm trials."""
    if n_total < 10:
        raise ValidationError(f"n_total must be >= 10, got {n_total}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    n0 = int(round(spec.allocation * n_total))
    n1 = n_total - n0
    lam0 = -math.log1p(-spec.p0) / spec.tau
    lam1 = spec.hr * lam0
    crit = norm.ppf(1 - spec.alpha_star)
    # one-sided tests look in the direction of the hypothesised effect
    direction = -1.0 if spec.hr < 1 else 1.0
    group = np.r_[np.zeros(n0, bool), np.ones(n1, bool)]
    rates = np.where(group, lam1, lam0)
    rejections = 0
    no_events = 0
    for _ in range(nsim):
        t = rng.exponential(1.0 / rates)
        event = t <= spec.tau
        t = np.minimum(t, spec.tau)
        z = logrank_z(t, event, group)
        if math.isnan(z):
            no_events += 1
            continue
        if spec.sided is Sided.TWO:
            rejections += abs(z) > crit
        else:
            rejections += direction * z > crit
    power = rejections / nsim
    return (power, no_events) if return_tally else power


def size_interim(spec: InterimSpec, simulate: bool = False, nsim: int = 4000, seed=0) -> InterimResult:
    D = schoenfeld_events(spec)
    n, ce = events_to_n(D, spec.p0, spec.p1, spec.allocation)
    sim = simulate_logrank_power(spec, n, nsim, seed) if simulate else None
    return InterimResult(spec, spec.hr, D, n, ce, sim)


class Varying(str, enum.Enum):
    ALPHA_BY_P0 = "alpha_by_p0"
    ALPHA_BY_P1 = "alpha_by_p1"
    ALPHA_BY_POWER = "alpha_by_power"


PRESET_FIXED = {
    Varying.ALPHA_BY_P0: dict(power=0.8, p1=0.3),
    Varying.ALPHA_BY_P1: dict(power=0.8, p0=0.5),
    Varying.ALPHA_BY_POWER: dict(p0=0.5, p1=0.3),
}
_AXIS = {Varying.ALPHA_BY_P0: "p0", Varying.ALPHA_BY_P1: "p1", Varying.ALPHA_BY_POWER: "power"}


def interim_grid(varying, fixed: InterimSpec, alpha_values, other_values, simulate=False, nsim=4000, seed=0, preset=True) -> list[dict]:
    """One row per (alpha, varied parameter) cell; failing cells carry an ``error`` entry.

    With ``preset`` the parameters held fixed in the matching figure preset
    override ``fixed``.
    """
    varying = Varying(varying)
    base = replace(fixed, **PRESET_FIXED[varying]) if preset else fixed
    axis = _AXIS[varying]
    rows = []
    for a in alpha_values:
        for v in other_values:
            row = {"alpha": float(a), "sided": base.sided.value, "power": base.power, "p0": base.p0, "p1": base.p1}
            row[axis] = float(v)
            try:
                spec = replace(base, alpha=float(a), **{axis: float(v)})
                res = size_interim(spec, simulate, nsim, seed)
                row.update(hr=res.hr, events=res.events_required, n_total=res.n_total,
                           control_events=res.control_events, sim_power=res.sim_power, error="")
            except ValidationError as exc:
                row.update(hr=float("nan"), events=None, n_total=None, control_events=None,
                           sim_power=None, error=str(exc))
            rows.append(row)
    return rows


def bracket_note(two_sided: InterimResult, one_sided: InterimResult, reported_n: int = REPORTED_APPROX_N) -> str:
    lo, hi = sorted((one_sided.n_total, two_sided.n_total))
    bracket = "brackets" if lo <= reported_n <= hi else "does NOT bracket"
    return (
        f"Schoenfeld sizing gives n={one_sided.n_total} (one-sided, D={one_sided.events_required}) and "
        f"n={two_sided.n_total} (two-sided, D={two_sided.events_required}); this {bracket} the design "
        f"figure of approximately {reported_n} patients, which neither convention reproduces exactly."
    )
