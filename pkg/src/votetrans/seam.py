"""Fit estimated transition tables to each unit's observed margins.

A unit's estimated rows, scaled by its row totals, seed an iterative
proportional fitting run against the unit's row and column totals.  IPF
multiplies rows and columns only, so every cross-product ratio of the seed
survives; the result is the table closest to the seed in Kullback-Leibler
divergence among those with the observed margins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NoConvergence, StructuralZero, ValidationError, VoteTransError
from .tables import UnitMargins, aggregate_counts

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000


@dataclass
class IPFResult:
    table: np.ndarray
    iterations: int
    discrepancy: float  # max absolute margin error, in counts
    history: list[float] = field(default_factory=list)  # L1 margin error per sweep


def _discrepancy(t: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> tuple[float, float]:
    dr = t.sum(axis=1) - rows
    dc = t.sum(axis=0) - cols
    return max(np.abs(dr).max(), np.abs(dc).max()), float(np.abs(dr).sum() + np.abs(dc).sum())


def _safe_ratio(target: np.ndarray, current: np.ndarray) -> np.ndarray:
    out = np.zeros_like(current)
    np.divide(target, current, out=out, where=current > 0)
    return out


def ipf(seed, rows, cols, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> IPFResult:
    """Iterative proportional fitting of a 2-d ``seed`` to ``rows`` and ``cols``.

    Each sweep rescales columns then rows.  Zero seed cells stay zero.

    Raises
    ------
    StructuralZero
        A positive margin has no positive seed cell to carry it.
    NoConvergence
        ``max_iter`` sweeps did not bring the discrepancy below ``tol``;
        the last iterate is attached.
    """
    t = np.array(seed, dtype=float)
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    if t.ndim != 2 or t.shape != (rows.size, cols.size):
        raise DimensionMismatch(f"seed shape {t.shape} does not match margins ({rows.size}, {cols.size})")
    if not tol > 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValidationError("seed must be finite and non-negative")
    if abs(rows.sum() - cols.sum()) > tol:
        raise ValidationError(f"row total {rows.sum()} differs from column total {cols.sum()}")
    bad_rows = np.flatnonzero((rows > 0) & (t.sum(axis=1) <= 0))
    bad_cols = np.flatnonzero((cols > 0) & (t.sum(axis=0) <= 0))
    if bad_rows.size or bad_cols.size:
        raise StructuralZero(
            f"margins unattainable: rows {bad_rows.tolist()} / columns {bad_cols.tolist()} "
            "are positive but have only zero seed cells"
        )

    worst, l1 = _discrepancy(t, rows, cols)
    history = [l1]
    it = 0
    while worst > tol:
        if it >= max_iter:
            raise NoConvergence(
                f"IPF did not converge in {max_iter} sweeps (discrepancy {worst:.3g})", t, worst
            )
        t *= _safe_ratio(cols, t.sum(axis=0))[None, :]
        t *= _safe_ratio(rows, t.sum(axis=1))[:, None]
        it += 1
        worst, l1 = _discrepancy(t, rows, cols)
        history.append(l1)
    return IPFResult(t, it, worst, history)


def adjust_to_margins(est, m: UnitMargins, tol: float = DEFAULT_TOL,
                      max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Expected counts with ``m``'s margins and the odds ratios of ``est``."""
    est = np.asarray(est, dtype=float)
    seed = est * m.row_totals[:, None]
    return ipf(seed, m.row_totals, m.col_totals, tol, max_iter).table


def _with_unit(exc: VoteTransError, unit_id) -> VoteTransError:
    msg = f"unit {unit_id!r}: {exc}"
    if isinstance(exc, NoConvergence):
        return NoConvergence(msg, exc.table, exc.discrepancy)
    return type(exc)(msg)


def adjusted_tables(estimate, data: Sequence[UnitMargins], design=None,
                    tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Margin-adjusted expected counts of every unit, shape (N, R, C).

    ``estimate`` is either one table used for every unit or a
    :class:`~votetrans.logit.LogitModel` evaluated with ``design``.
    """
    from .logit import CovariateDesign, LogitModel, unit_probs

    data = list(data)
    if isinstance(estimate, LogitModel):
        probs = unit_probs(estimate, design or CovariateDesign(), data)
    else:
        table = np.asarray(getattr(estimate, "table", estimate), dtype=float)
        probs = np.broadcast_to(table, (len(data),) + table.shape)
    out = np.empty(probs.shape)
    for k, m in enumerate(data):
        try:
            out[k] = adjust_to_margins(probs[k], m, tol, max_iter)
        except VoteTransError as exc:
            raise _with_unit(exc, m.unit_id) from exc
    return out


def adjusted_overall(estimate, data: Sequence[UnitMargins], design=None,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Overall row proportions after adjusting every unit to its margins."""
    return aggregate_counts(adjusted_tables(estimate, data, design, tol, max_iter))
