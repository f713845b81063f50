"""Arm grids, scenarios, margins and estimand metadata."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


RR_TOL = 1e-12


class Preference(str, enum.Enum):
    PREFER_HIGH = "prefer_high"
    PREFER_LOW = "prefer_low"


@dataclass(frozen=True)
class ArmGrid:
    values: tuple[float, ...]
    control_index: int
    preference: Preference = Preference.PREFER_HIGH

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "preference", Preference(self.preference))
        vals = self.values
        if len(vals) < 2:
            raise ValidationError(f"arm grid needs at least 2 arms, got {len(vals)}")
        for v in vals:
            if not math.isfinite(v) or v <= 0:
                raise ValidationError(f"arm values must be positive and finite, got {v}")
        for a, b in zip(vals, vals[1:]):
            if b == a:
                raise ValidationError(f"duplicate arm value {a}")
            if b < a:
                raise ValidationError(f"arm values must be strictly increasing ({a} before {b})")
        if not 0 <= self.control_index < len(vals):
            raise ValidationError(f"control_index {self.control_index} out of range for {len(vals)} arms")
        expected = 0 if self.preference is Preference.PREFER_HIGH else len(vals) - 1
        if self.control_index != expected:
            raise ValidationError(
                f"control arm {vals[self.control_index]:g} (index {self.control_index}) is not at the "
                f"{self.preference.value} extreme; expected arm {vals[expected]:g} (index {expected})"
            )
        if len(vals) < 5:
            warnings.warn(
                f"{len(vals)} arms is fewer than the 5 needed to support a two-term fractional polynomial",
                stacklevel=3,
            )

    def __len__(self):
        return len(self.values)

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.values)

    @property
    def control_value(self) -> float:
        return self.values[self.control_index]

    @property
    def preference_order(self) -> tuple[int, ...]:
        """Arm indices from the control outwards (least to most preferred)."""
        idx = tuple(range(len(self.values)))
        return idx if self.preference is Preference.PREFER_HIGH else idx[::-1]

    @property
    def ranks(self) -> np.ndarray:
        """Preference rank of each arm; the control has rank 0."""
        r = np.empty(len(self.values), dtype=int)
        r[list(self.preference_order)] = np.arange(len(self.values))
        return r

    @property
    def far_index(self) -> int:
        return self.preference_order[-1]


def make_arm_grid(values, control_index: int = 0, preference="prefer_high") -> ArmGrid:
    vals = [float(v) for v in values]
    if not vals:
        raise ValidationError("arm grid is empty")
    for v in vals:
        if not math.isfinite(v) or v <= 0:
            raise ValidationError(f"arm values must be positive and finite, got {v}")
    if len(set(vals)) != len(vals):
        dup = sorted(v for v in set(vals) if vals.count(v) > 1)
        raise ValidationError(f"duplicate arm value {dup[0]:g}")
    if not 0 <= control_index < len(vals):
        raise ValidationError(f"control_index {control_index} out of range for {len(vals)} arms")
    control_value = vals[control_index]
    ordered = sorted(vals)
    return ArmGrid(tuple(ordered), ordered.index(control_value), Preference(preference))


@dataclass(frozen=True)
class Scenario:
    name: str
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        for p in self.probs:
            if not 0.0 < p < 1.0:
                raise ValidationError(f"scenario {self.name!r}: probability {p} outside (0, 1)")

    def true_rr(self, grid: ArmGrid) -> np.ndarray:
        _check_length(self, grid)
        p = np.asarray(self.probs)
        rr = p / p[grid.control_index]
        rr[grid.control_index] = 1.0
        return rr


def _check_length(scenario: Scenario, grid: ArmGrid):
    if len(scenario.probs) != len(grid):
        raise ValidationError(
            f"scenario {scenario.name!r} has {len(scenario.probs)} probabilities for {len(grid)} arms"
        )


@dataclass(frozen=True)
class Margin:
    rr: float
    alpha: float = 0.05
    scale: str = "risk_ratio"

    def __post_init__(self):
        if not 0.0 < self.rr < 1.0:
            raise ValidationError(f"margin rr must lie in (0, 1), got {self.rr}")
        if not 0.0 < self.alpha < 0.5:
            raise ValidationError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if self.scale != "risk_ratio":
            raise ValidationError(f"only the risk_ratio scale is supported, got {self.scale!r}")


@dataclass(frozen=True)
class EstimandSpec:
    treatment: str
    population: str
    variable: str
    summary_measure: str = "risk_ratio"
    intercurrent_handling: str = "treatment_policy"

    def __post_init__(self):
        for name in ("treatment", "population", "variable"):
            if not str(getattr(self, name)).strip():
                raise ValidationError(f"estimand {name} must be non-empty")
        if self.summary_measure != "risk_ratio":
            raise ValidationError(f"unsupported summary measure {self.summary_measure!r}")
        if self.intercurrent_handling != "treatment_policy":
            raise ValidationError(f"unsupported intercurrent-event strategy {self.intercurrent_handling!r}")


@dataclass(frozen=True)
class ArmClassification:
    acceptable: frozenset[int]
    unacceptable: frozenset[int]
    optimal_index: int
    true_rr: tuple[float, ...] = field(default=())


def flat_scenario(grid: ArmGrid, pi0: float, name: str = "flat") -> Scenario:
    if not 0.0 < pi0 < 1.0:
        raise ValidationError(f"pi0 must lie in (0, 1), got {pi0}")
    return Scenario(name, (float(pi0),) * len(grid))


def margin_scenarios(grid: ArmGrid, pi0: float, margin_rr: float, count: int, prefix: str = "margin"):
    """Plateau-then-linear-decline scenarios with the far arm sitting on the margin.

    Scenario ``k`` keeps the first ``k`` arms (counting outwards from the control)
    at ``pi0`` and declines linearly in x from there to ``margin_rr * pi0`` at the
    most extended arm.
    """
    J = len(grid)
    if J < 3:
        raise ValidationError("margin scenarios need at least 3 arms")
    if not 1 <= count <= J - 1:
        raise ValidationError(f"count must be in [1, {J - 1}], got {count}")
    if not 0.0 < pi0 < 1.0:
        raise ValidationError(f"pi0 must lie in (0, 1), got {pi0}")
    target = margin_rr * pi0
    if target <= 0 or target >= pi0:
        raise ValidationError(f"margin_rr * pi0 = {target} must lie in (0, pi0)")
    order = grid.preference_order
    x = grid.x
    x_far = x[order[-1]]
    out = []
    for k in range(1, count + 1):
        x_end = x[order[k - 1]]
        probs = np.full(J, pi0)
        for i in order[k:]:
            probs[i] = pi0 + (x[i] - x_end) * (target - pi0) / (x_far - x_end)
        probs[order[-1]] = target
        out.append(Scenario(f"{prefix}_{k}", tuple(probs)))
    return out


def classify_arms(scenario: Scenario, grid: ArmGrid, margin: Margin) -> ArmClassification:
    rr = scenario.true_rr(grid)
    others = [i for i in range(len(grid)) if i != grid.control_index]
    # an arm placed on the margin as pi0 * rr can round a hair above it
    acceptable = frozenset(i for i in others if rr[i] - margin.rr > RR_TOL)
    unacceptable = frozenset(others) - acceptable
    ranks = grid.ranks
    optimal = max(acceptable, key=lambda i: ranks[i]) if acceptable else grid.control_index
    return ArmClassification(acceptable, unacceptable, optimal, tuple(rr))
