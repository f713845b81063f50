"""Fractional-polynomial logistic regression on grouped binomial data.

The fitting kernel works on batches: a stack of design matrices (one per
candidate power combination) against a stack of datasets sharing the same arm
grid. Each fit in a batch stops updating as soon as it converges, so the result
for a dataset does not depend on what else is in the batch.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .errors import DataError, ValidationError
from .trial import ArmGrid

FP_POWERS = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0)

OK, SINGULAR, SEPARATION, MAX_ITER = 0, 1, 2, 3
STATUS_REASON = {OK: "", SINGULAR: "singular", SEPARATION: "separation", MAX_ITER: "max_iter"}


@dataclass(frozen=True)
class FitControl:
    tol: float = 1e-10
    max_iter: int = 50
    beta_bound: float = 50.0
    # fitted probabilities closer than this to 0 or 1 also count as separation
    prob_eps: float = 1e-8


@dataclass(frozen=True)
class TrialDataset:
    grid: ArmGrid
    n: tuple[int, ...]
    events: tuple[int, ...]

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        ev = tuple(int(v) for v in self.events)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "events", ev)
        if len(n) != len(self.grid) or len(ev) != len(self.grid):
            raise DataError(f"dataset has {len(n)} counts and {len(ev)} event counts for {len(self.grid)} arms")
        for j, (nj, ej) in enumerate(zip(n, ev)):
            if nj < 0 or not 0 <= ej <= nj:
                raise DataError(f"arm {self.grid.values[j]:g}: need 0 <= events <= n, got events={ej}, n={nj}")

    @property
    def total(self) -> int:
        return sum(self.n)

    @property
    def proportions(self) -> np.ndarray:
        n = np.asarray(self.n, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, np.asarray(self.events) / n, np.nan)


@dataclass(frozen=True)
class FPModel:
    powers: tuple[float, ...]
    scale: float
    beta: np.ndarray
    cov: np.ndarray
    deviance: float
    converged: bool
    iterations: int
    reason: str = ""
    fallback: bool = False
    x_range: tuple[float, float] = (0.0, np.inf)

    def linear_predictor(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return design_matrix(x, self.powers, self.scale) @ self.beta


def enumerate_fp2() -> list[tuple[float, float]]:
    """All 36 second-degree power pairs ``p1 <= p2`` in lexicographic order."""
    return list(itertools.combinations_with_replacement(FP_POWERS, 2))


def fp_basis(x, powers, scale: float) -> np.ndarray:
    """FP terms of ``x / scale``; power 0 means log and a repeated power gains a log factor.

    Returns an array of shape ``x.shape + (len(powers),)``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValidationError("fractional polynomial terms need x > 0")
    if not scale > 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    u = x / scale
    logu = np.log(u)
    cols = []
    prev = None
    prev_col = None
    for p in powers:
        p = float(p)
        if prev is not None and p == prev:
            col = prev_col * logu
        else:
            col = logu if p == 0 else u**p
        cols.append(col)
        prev, prev_col = p, col
    return np.stack(cols, axis=-1) if cols else np.empty(x.shape + (0,))


def design_matrix(x, powers, scale: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    basis = fp_basis(x, powers, scale)
    return np.concatenate([np.ones(x.shape + (1,)), basis], axis=-1)


def binomial_deviance(y, n, mu) -> np.ndarray:
    """Grouped binomial deviance summed over the last axis (0 * log 0 = 0)."""
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    fitted = n * mu
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = xlogy(y, np.where(y > 0, y / fitted, 1.0))
        t2 = xlogy(n - y, np.where(n - y > 0, (n - y) / (n - fitted), 1.0))
    return 2.0 * np.sum(t1 + t2, axis=-1)


def _spd_solve(A, b, rel_tol=1e-13):
    """Solve stacked small SPD systems by elimination without pivoting.

    Returns ``(x, ok)``; ``ok`` is False where a pivot collapsed (singular system).
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    p = A.shape[-1]
    scale = np.max(np.abs(np.diagonal(A, axis1=-2, axis2=-1)), axis=-1)
    ok = scale > 0
    for k in range(p):
        piv = A[..., k, k]
        good = piv > rel_tol * scale
        ok &= good
        piv = np.where(good, piv, 1.0)
        for i in range(k + 1, p):
            f = A[..., i, k] / piv
            A[..., i, k:] -= f[..., None] * A[..., k, k:]
            b[..., i] -= f * b[..., k]
    x = np.zeros_like(b)
    for k in range(p - 1, -1, -1):
        acc = b[..., k]
        for j in range(k + 1, p):
            acc = acc - A[..., k, j] * x[..., j]
        piv = A[..., k, k]
        x[..., k] = acc / np.where(ok, piv, 1.0)
    x[~ok] = 0.0
    return x, ok


@dataclass
class BatchFit:
    """Arrays from :func:`irls_batch`, leading dims ``(datasets, candidates)``."""

    beta: np.ndarray
    mu: np.ndarray
    deviance: np.ndarray
    status: np.ndarray
    iterations: np.ndarray


def irls_batch(X, n, y, control: FitControl = FitControl()) -> BatchFit:
    """Fit logistic models by IRLS for every (dataset, design) pair.

    ``X`` has shape ``(K, J, p)``; ``n`` and ``y`` have shape ``(B, J)``.
    """
    X = np.asarray(X, dtype=float)
    n = np.asarray(n, dtype=float)[:, None, :]
    y = np.asarray(y, dtype=float)[:, None, :]
    B, K, p = n.shape[0], X.shape[0], X.shape[-1]
    shape = (B, K)
    Xb = X[None]

    mu0 = (y + 0.5) / (n + 1.0)
    eta = np.broadcast_to(np.log(mu0 / (1 - mu0)), shape + (X.shape[1],))
    mu = np.broadcast_to(mu0, eta.shape)
    beta = np.zeros(shape + (p,))
    dev_old = np.full(shape, np.inf)
    dev = np.full(shape, np.inf)
    status = np.full(shape, MAX_ITER, dtype=np.int8)
    iters = np.zeros(shape, dtype=np.int16)
    active = np.ones(shape, dtype=bool)

    for it in range(1, control.max_iter + 1):
        w = n * mu * (1.0 - mu)
        xw = Xb * w[..., None]
        A = np.einsum("...ji,...jk->...ik", xw, Xb)
        rhs = np.einsum("...ji,...j->...i", Xb, w * eta + (y - n * mu))
        new_beta, ok = _spd_solve(A, rhs)

        singular = active & ~ok
        status[singular] = SINGULAR
        active &= ok

        beta = np.where(active[..., None], new_beta, beta)
        new_eta = np.einsum("...jk,...k->...j", Xb, beta)
        eta = np.where(active[..., None], new_eta, eta)
        mu = expit(eta)
        dev_new = binomial_deviance(y, n, mu)
        dev = np.where(active, dev_new, dev)
        iters = np.where(active, it, iters).astype(np.int16)

        diverged = active & (np.max(np.abs(beta), axis=-1) > control.beta_bound)
        status[diverged] = SEPARATION
        active &= ~diverged

        with np.errstate(invalid="ignore"):
            done = active & (np.abs(dev - dev_old) / (np.abs(dev) + 0.1) < control.tol)
        status[done] = OK
        active &= ~done
        dev_old = np.where(active, dev, dev_old)
        if not active.any():
            break

    live = n > 0
    extreme = np.any(live & ((mu < control.prob_eps) | (mu > 1 - control.prob_eps)), axis=-1)
    status[(status == OK) & extreme] = SEPARATION
    return BatchFit(beta, np.ascontiguousarray(mu), dev, status, iters)


def fisher_covariance(X, n, beta):
    """Inverse Fisher information for stacked designs ``X (..., J, p)`` at ``beta``.

    Returns ``(cov, ok)``.
    """
    X = np.asarray(X, dtype=float)
    n = np.asarray(n, dtype=float)
    mu = expit(np.einsum("...jk,...k->...j", X, beta))
    w = n * mu * (1.0 - mu)
    info = np.einsum("...ji,...jk->...ik", X * w[..., None], X)
    p = X.shape[-1]
    eye = np.broadcast_to(np.eye(p), info.shape)
    cols = []
    ok = np.ones(info.shape[:-2], dtype=bool)
    for k in range(p):
        c, ok_k = _spd_solve(info, eye[..., k])
        cols.append(c)
        ok &= ok_k
    cov = np.stack(cols, axis=-1)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    return cov, ok


def candidate_designs(grid: ArmGrid, candidates, scale: float) -> np.ndarray:
    return np.stack([design_matrix(grid.x, pw, scale) for pw in candidates])


def default_scale(grid: ArmGrid) -> float:
    return float(max(grid.values))


def _as_arrays(data: TrialDataset):
    return np.asarray([data.n], dtype=float), np.asarray([data.events], dtype=float)


def fit_glm(data: TrialDataset, powers, scale: float | None = None, control: FitControl = FitControl()) -> FPModel:
    """Maximum-likelihood FP logistic fit for a single power combination."""
    powers = tuple(float(p) for p in powers)
    scale = default_scale(data.grid) if scale is None else float(scale)
    X = design_matrix(data.grid.x, powers, scale)
    n, y = _as_arrays(data)
    fit = irls_batch(X[None], n, y, control)
    return _model_from_batch(data, powers, scale, X, fit, 0, 0)


def _model_from_batch(data, powers, scale, X, fit: BatchFit, b, k) -> FPModel:
    beta = fit.beta[b, k].copy()
    status = int(fit.status[b, k])
    cov, ok = fisher_covariance(X, np.asarray(data.n, dtype=float), beta)
    converged = status == OK and bool(ok)
    reason = STATUS_REASON[status] if status != OK else ("" if ok else "singular")
    return FPModel(
        powers=powers,
        scale=scale,
        beta=beta,
        cov=cov,
        deviance=float(fit.deviance[b, k]),
        converged=converged,
        iterations=int(fit.iterations[b, k]),
        reason=reason,
        x_range=(min(data.grid.values), max(data.grid.values)),
    )


def intercept_only(data: TrialDataset, scale: float | None = None, prob_floor: float = 1e-10) -> FPModel:
    """Closed-form flat curve at the pooled proportion, flagged as a fallback."""
    if data.total <= 0:
        raise DataError("dataset has no patients")
    scale = default_scale(data.grid) if scale is None else float(scale)
    pooled = sum(data.events) / data.total
    p = min(max(pooled, prob_floor), 1 - prob_floor)
    beta = np.array([np.log(p / (1 - p))])
    mu = np.full(len(data.grid), p)
    dev = float(binomial_deviance(np.asarray(data.events), np.asarray(data.n), mu))
    cov = np.array([[1.0 / (data.total * p * (1 - p))]])
    return FPModel(
        powers=(),
        scale=scale,
        beta=beta,
        cov=cov,
        deviance=dev,
        converged=0 < pooled < 1,
        iterations=0,
        reason="" if 0 < pooled < 1 else "separation",
        fallback=True,
        x_range=(min(data.grid.values), max(data.grid.values)),
    )


def select_from_batch(fit: BatchFit, tie_tol: float = 1e-9) -> np.ndarray:
    """Index of the best converged candidate per dataset, or -1 when none converged.

    Deviances within ``tie_tol`` of the minimum count as ties; the first in
    enumeration order wins.
    """
    dev = np.where(fit.status == OK, fit.deviance, np.inf)
    best = np.min(dev, axis=-1)
    first = np.argmax(dev <= best[:, None] + tie_tol, axis=-1)
    return np.where(np.isfinite(best), first, -1)


def select_best(data: TrialDataset, scale: float | None = None, control: FitControl = FitControl(), candidates=None) -> FPModel:
    """Best-fitting FP2 model by deviance, falling back to the flat curve."""
    if data.total <= 0:
        raise DataError("dataset has no patients")
    scale = default_scale(data.grid) if scale is None else float(scale)
    candidates = enumerate_fp2() if candidates is None else [tuple(c) for c in candidates]
    X = candidate_designs(data.grid, candidates, scale)
    n, y = _as_arrays(data)
    fit = irls_batch(X, n, y, control)
    k = int(select_from_batch(fit)[0])
    if k < 0:
        return intercept_only(data, scale)
    model = _model_from_batch(data, candidates[k], scale, X[k], fit, 0, k)
    if not model.converged:
        return intercept_only(data, scale)
    return model


def predict_risk(model: FPModel, x, extrapolate: bool = False):
    x_arr = np.asarray(x, dtype=float)
    lo, hi = model.x_range
    if not extrapolate and np.any((x_arr < lo - 1e-9) | (x_arr > hi + 1e-9)):
        raise ValidationError(f"x outside the fitted range [{lo:g}, {hi:g}]; pass extrapolate=True to override")
    p = expit(model.linear_predictor(x_arr))
    return float(p) if np.ndim(p) == 0 else p
