"""Goodman's linear ecological regression.

For each new-election option ``j`` the shares ``y[u, j]`` are regressed on an
intercept and ``x[u, 1:]``; the intercept estimates ``pi[0, j]`` and
``intercept + slope_i`` estimates ``pi[i, j]``.  Estimated rows are then
projected onto the probability simplex.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import RankDeficient, TooFewUnits, VoteTransError
from .tables import UnitMargins, stack_margins


@dataclass(frozen=True)
class TransitionEstimate:
    table: np.ndarray
    stderr: np.ndarray | None = None
    method: str = ""
    raw: np.ndarray | None = None  # estimate before projection


def simplex_project(row) -> np.ndarray:
    """Euclidean projection of ``row`` onto the probability simplex.

    Sort-based algorithm: find the threshold ``tau`` such that
    ``max(row - tau, 0)`` sums to 1.
    """
    v = np.asarray(row, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def _design(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(x.shape[0]), x[:, 1:]])


def fit_goodman(data: Sequence[UnitMargins], weights: bool = True) -> TransitionEstimate:
    """Fit Goodman's regression to unit margins.

    Parameters
    ----------
    data : list of UnitMargins, or a stacked MarginArrays
    weights : bool
        Weight each unit by its size ``n[u, +, +]`` (default) instead of
        ordinary least squares.

    Returns
    -------
    TransitionEstimate
        ``table`` is the projected estimate, ``raw`` the unconstrained one
        and ``stderr`` the classical standard errors of ``raw``.
    """
    m = stack_margins(data)
    R, C = m.shape
    N = m.n_units
    if N < R:
        raise TooFewUnits(f"need at least {R} units, got {N}")
    X = _design(m.x)
    Y = m.y
    w = m.sizes / m.sizes.mean() if weights else np.ones(N)
    sw = np.sqrt(w)[:, None]
    Xw, Yw = X * sw, Y * sw
    if np.linalg.matrix_rank(Xw) < R:
        raise RankDeficient("row margins are collinear across units")

    coef, *_ = np.linalg.lstsq(Xw, Yw, rcond=None)  # (R, C)
    # columns of y sum to 1, so coefficient columns must sum to (1, 0, ..., 0)
    target = np.zeros(R)
    target[0] = 1.0
    if np.max(np.abs(coef.sum(axis=1) - target)) > 1e-8:
        raise VoteTransError("Goodman column fits are inconsistent; check input shares")

    # contrast L maps coefficients to table rows: row 0 = intercept, row i = intercept + slope_i
    L = np.eye(R)
    L[:, 0] = 1.0
    raw = L @ coef

    stderr = None
    if N > R:
        resid = Yw - Xw @ coef
        sigma2 = (resid**2).sum(axis=0) / (N - R)
        cov = np.linalg.pinv(Xw.T @ Xw)
        var_rows = np.einsum("ik,kl,il->i", L, cov, L)
        stderr = np.sqrt(np.outer(var_rows, sigma2))

    table = np.stack([simplex_project(r) for r in raw])
    label = "goodman" if weights else "goodman-unweighted"
    return TransitionEstimate(table=table, stderr=stderr, method=label, raw=raw)
