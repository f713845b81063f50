"""Risk-ratio confidence bounds against control and the arm-selection rule."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from . import fp
from .errors import InferenceError, ValidationError
from .trial import ArmGrid, Margin


class Method(str, enum.Enum):
    DELTA = "delta"
    BOOTSTRAP = "bootstrap"


class Rule(str, enum.Enum):
    MAX_PREFERRED_PASSING = "max_preferred_passing"
    CONTIGUOUS_FROM_CONTROL = "contiguous_from_control"


@dataclass(frozen=True)
class ArmInference:
    arm_index: int
    rr_hat: float
    lower_bound: float
    method: Method


@dataclass(frozen=True)
class Decision:
    selected_index: int
    passing: tuple[bool, ...]
    rule: Rule


def delta_log_rr(X, beta, cov, control_index: int):
    """Log risk ratios vs control and their delta-method variances.

    Works on stacks: ``X (..., J, p)``, ``beta (..., p)``, ``cov (..., p, p)``.
    """
    eta = np.einsum("...jk,...k->...j", X, beta)
    pi = expit(eta)
    log_pi = -np.logaddexp(0.0, -eta)
    log_rr = log_pi - log_pi[..., control_index : control_index + 1]
    g = (1.0 - pi)[..., None] * X
    g = g - g[..., control_index : control_index + 1, :]
    var = np.einsum("...ji,...ik,...jk->...j", g, cov, g)
    var[..., control_index] = 0.0
    return log_rr, var


def rr_delta(model: fp.FPModel, grid: ArmGrid, alpha: float) -> list[ArmInference]:
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    X = fp.design_matrix(grid.x, model.powers, model.scale)
    log_rr, var = delta_log_rr(X, model.beta, model.cov, grid.control_index)
    z = norm.ppf(1 - alpha)
    out = []
    for j in range(len(grid)):
        if j == grid.control_index:
            out.append(ArmInference(j, 1.0, 1.0, Method.DELTA))
            continue
        if not (var[j] > 0 and np.isfinite(var[j])) and not model.fallback:
            raise InferenceError(f"non-positive delta-method variance for arm {grid.values[j]:g}")
        se = np.sqrt(max(var[j], 0.0))
        out.append(ArmInference(j, float(np.exp(log_rr[j])), float(np.exp(log_rr[j] - z * se)), Method.DELTA))
    return out


def bootstrap_rr(data: fp.TrialDataset, B: int, seed, scale=None, control: fp.FitControl = fp.FitControl(), candidates=None):
    """Risk ratios vs control from ``B`` within-arm resamples, shape ``(B, J)``.

    Each arm's event count is redrawn as Binomial(n_j, events_j / n_j), which is
    the same as resampling that arm's patients with replacement. Resamples with
    no converged FP2 fit give a flat curve (all ratios 1).
    """
    if B < 100:
        raise ValidationError(f"bootstrap needs B >= 100, got {B}")
    grid = data.grid
    scale = fp.default_scale(grid) if scale is None else float(scale)
    candidates = fp.enumerate_fp2() if candidates is None else [tuple(c) for c in candidates]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.Philox(seed))
    n = np.asarray(data.n)
    p = np.where(n > 0, np.asarray(data.events) / np.maximum(n, 1), 0.0)
    ystar = rng.binomial(n, p, size=(B, len(n)))
    X = fp.candidate_designs(grid, candidates, scale)
    return _resample_rr(X, np.broadcast_to(n, ystar.shape), ystar, grid.control_index, control)


def _resample_rr(X, n, y, control_index, control):
    fit = fp.irls_batch(X, n, y, control)
    k = fp.select_from_batch(fit)
    safe = np.maximum(k, 0)
    mu = fit.mu[np.arange(len(k)), safe]
    rr = mu / mu[:, control_index : control_index + 1]
    rr[k < 0] = 1.0
    return rr


def bootstrap_bounds(data: fp.TrialDataset, B: int, alpha: float, scale=None, seed=0, control: fp.FitControl = fp.FitControl(), candidates=None, model: fp.FPModel | None = None) -> list[ArmInference]:
    """Percentile lower bounds (type-7 quantiles) of the bootstrap risk ratios."""
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    rr_star = bootstrap_rr(data, B, seed, scale, control, candidates)
    lower = np.quantile(rr_star, alpha, axis=0, method="linear")
    if model is None:
        model = fp.select_best(data, scale, control, candidates)
    rr_hat = _fitted_rr(model, data.grid)
    c = data.grid.control_index
    return [
        ArmInference(j, 1.0 if j == c else float(rr_hat[j]), 1.0 if j == c else float(lower[j]), Method.BOOTSTRAP)
        for j in range(len(data.grid))
    ]


def _fitted_rr(model: fp.FPModel, grid: ArmGrid) -> np.ndarray:
    X = fp.design_matrix(grid.x, model.powers, model.scale)
    log_rr, _ = delta_log_rr(X, model.beta, model.cov, grid.control_index)
    return np.exp(log_rr)


def select_arm(passing, ranks, control_index: int, rule: Rule):
    """Apply the decision rule to pass/fail flags; vectorised over leading dims."""
    passing = np.asarray(passing, dtype=bool)
    ranks = np.asarray(ranks)
    order = np.argsort(ranks)
    ordered = passing[..., order].copy()
    ordered[..., 0] = False  # control never "passes" as a candidate
    rule = Rule(rule)
    if rule is Rule.CONTIGUOUS_FROM_CONTROL:
        run = np.cumprod(passing[..., order[1:]], axis=-1).astype(bool)
        ordered[..., 1:] = run
    J = ordered.shape[-1]
    # most-preferred passing position, 0 (control) when none
    pos = np.where(ordered.any(axis=-1), J - 1 - np.argmax(ordered[..., ::-1], axis=-1), 0)
    return order[pos]


def decide(inferences, grid: ArmGrid, margin: Margin, rule=Rule.MAX_PREFERRED_PASSING) -> Decision:
    if len(inferences) != len(grid):
        raise ValidationError(f"expected {len(grid)} arm inferences, got {len(inferences)}")
    lb = {inf.arm_index: inf.lower_bound for inf in inferences}
    passing = tuple(
        bool(j != grid.control_index and lb[j] > margin.rr) for j in range(len(grid))
    )
    sel = int(select_arm(passing, grid.ranks, grid.control_index, rule))
    return Decision(sel, passing, Rule(rule))


@dataclass
class AnalysisRecord:
    model: fp.FPModel
    inferences: list[ArmInference]
    decision: Decision
    method: Method
    warnings: list[str] = field(default_factory=list)

    def table(self, grid: ArmGrid) -> list[dict]:
        rows = []
        for inf in self.inferences:
            rows.append({
                "arm_value": grid.values[inf.arm_index],
                "rr_hat": inf.rr_hat,
                "lower_bound": inf.lower_bound,
                "passing": self.decision.passing[inf.arm_index],
                "selected": inf.arm_index == self.decision.selected_index,
            })
        return rows


def analyze(data: fp.TrialDataset, margin: Margin, method=Method.DELTA, rule=Rule.MAX_PREFERRED_PASSING, B: int = 1000, seed=0, scale=None, control: fp.FitControl = fp.FitControl(), candidates=None) -> AnalysisRecord:
    """Fit the curve, bound each arm's risk ratio, and pick the recommended arm."""
    method = Method(method)
    grid = data.grid
    model = fp.select_best(data, scale, control, candidates)
    notes = []
    if method is Method.DELTA:
        infs = rr_delta(model, grid, margin.alpha)
    else:
        infs = bootstrap_bounds(data, B, margin.alpha, scale, seed, control, candidates, model=model)
    decision = decide(infs, grid, margin, rule)
    if model.fallback:
        msg = f"no FP2 model converged ({model.reason or 'fallback'}); using flat curve and recommending control"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
        decision = Decision(grid.control_index, tuple(False for _ in grid.values), Rule(rule))
    return AnalysisRecord(model, infs, decision, method, notes)
