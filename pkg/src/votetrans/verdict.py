"""Score ecological estimates against individual-level truth."""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import DimensionMismatch, SeparationWarning, ValidationError
from .logit import CovariateDesign, LogitModel, _eta, unit_probs
from .tables import UnitCounts, UnitMargins, margins_of, stack_counts, stack_margins

COEF_CAP = 30.0


def reconstruct_overall(model: LogitModel, design: CovariateDesign, data: Sequence[UnitMargins]) -> np.ndarray:
    """Pool the model-implied unit tables into an overall table.

    Each unit's rows are weighted by its row totals, exactly as the overall
    table of individual data pools the observed ones.
    """
    m = stack_margins(data)
    probs = unit_probs(model, design, m)
    counts = probs * m.row_totals[:, :, None]
    total = counts.sum(axis=0)
    return total / total.sum(axis=1, keepdims=True)


def fit_individual_logistic(individual: Sequence[UnitCounts], design: CovariateDesign = CovariateDesign(),
                            covariates: Sequence[dict] | None = None, fixed_beta=None,
                            tol: float = 1e-10, max_iter: int = 5000) -> LogitModel:
    """Multinomial-logit maximum likelihood on the true within-unit splits.

    Responses are the counts ``n[u, i, :]`` grouped per unit, which gives
    the same likelihood as one record per voter.  Covariates are resolved
    from each unit's margins (and ``covariates`` for external ones) exactly
    as in the ecological fits.  All coefficients are bounded by
    ``COEF_CAP`` in magnitude; hitting the bound warns of separation.

    ``fixed_beta`` holds the slopes at given values and fits the intercepts
    only.
    """
    units = list(individual)
    covariates = covariates if covariates is not None else [{}] * len(units)
    if len(covariates) != len(units):
        raise ValidationError("covariates must align with units")
    n = stack_counts(units).astype(float)
    N, R, C = n.shape
    m = stack_margins([margins_of(u, c) for u, c in zip(units, covariates)])
    design.check_shape(R, C)
    raw = design.raw_values(m)
    centers = design.centers_for(raw)
    Z = raw - centers
    k = R * (C - 1)
    E = len(design)
    rows = n.sum(axis=2)
    scale = n.sum()
    idx = [e.cell for e in design.entries]

    if fixed_beta is not None:
        fixed_beta = np.asarray(fixed_beta, dtype=float).reshape(-1)
        if fixed_beta.size != E:
            raise DimensionMismatch(f"fixed_beta needs {E} values")

    def full(theta):
        return theta if fixed_beta is None else np.concatenate([theta, fixed_beta])

    def nll(theta):
        th = full(theta)
        eta = _eta(th, Z, design, R, C)
        eta = eta - eta.max(axis=2, keepdims=True)
        logp = eta - np.log(np.exp(eta).sum(axis=2, keepdims=True))
        f = -float(np.sum(n * logp)) / scale
        g_eta = -(n - rows[:, :, None] * np.exp(logp)) / scale
        grad = np.empty(k + E)
        grad[:k] = g_eta[:, :, :-1].sum(axis=0).ravel()
        for e, (i, j) in enumerate(idx):
            grad[k + e] = g_eta[:, i, j] @ Z[:, e]
        return f, grad if fixed_beta is None else grad[:k]

    t = n.sum(axis=0) + 0.5
    alpha0 = np.log(t[:, :-1] / t[:, -1:]).ravel()
    theta0 = alpha0 if fixed_beta is not None else np.concatenate([alpha0, np.zeros(E)])
    bounds = [(-COEF_CAP, COEF_CAP)] * theta0.size
    res = minimize(nll, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"gtol": tol, "ftol": 1e-15, "maxiter": max_iter, "maxcor": 30})
    theta = full(res.x)
    capped = np.abs(res.x) >= COEF_CAP - 1e-9
    if np.any(capped):
        warnings.warn(
            f"{int(capped.sum())} coefficients reached the cap {COEF_CAP}; possible separation",
            SeparationWarning,
            stacklevel=2,
        )
    _, g = nll(res.x)
    return LogitModel.from_theta(
        theta, (R, C), centers,
        info={"method": "individual-logistic", "objective": float(res.fun),
              "grad_norm": float(np.max(np.abs(g))) if g.size else 0.0,
              "converged": bool(res.success), "separation": bool(np.any(capped))},
    )


def score(est, truth, row_weights=None) -> dict:
    """Error metrics of ``est`` against ``truth``.

    Returns ``signed`` (per-cell est - truth), ``max_abs`` and
    ``mean_abs``, the mean over rows of the row's mean absolute error,
    rows weighted by ``row_weights`` (default equal).
    """
    est = np.asarray(getattr(est, "table", est), dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise DimensionMismatch(f"estimate shape {est.shape} differs from truth shape {truth.shape}")
    diff = est - truth
    w = np.ones(est.shape[0]) if row_weights is None else np.asarray(row_weights, dtype=float)
    w = w / w.sum()
    return {
        "signed": diff.tolist(),
        "max_abs": float(np.abs(diff).max()),
        "mean_abs": float(w @ np.abs(diff).mean(axis=1)),
    }
