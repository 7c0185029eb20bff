"""Diagnostics of ecological bias computed from individual-level tables.

All three diagnostics look at the within-unit row proportions ``f[u, i, j]``,
which aggregated data do not reveal, so they only accept
:class:`~votetrans.tables.UnitCounts` ("oracle mode").
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, InsufficientUnits, InsufficientVariation, OracleModeError, ValidationError
from .tables import UnitCounts, aggregate_counts, stack_counts

__all__ = [
    "QuantileProfile",
    "GeometryExport",
    "bias_correlation",
    "quantile_profile",
    "two_by_two_geometry",
]


def _individual(units) -> np.ndarray:
    units = list(units)
    if not units:
        raise InsufficientUnits("no units")
    if not all(isinstance(u, UnitCounts) for u in units):
        raise OracleModeError(
            "this diagnostic needs individual-level tables; aggregated margins cannot reveal "
            "within-unit proportions"
        )
    return stack_counts(units).astype(float)


def _wcorr(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    w = w / w.sum()
    da = a - w @ a
    db = b - w @ b
    return float(w @ (da * db)), float(w @ (da * da)), float(w @ (db * db))


def bias_correlation(individual: Sequence[UnitCounts], weighted: bool = True) -> np.ndarray:
    """Correlations between within-unit proportions and row margins.

    Entry ``[i, j, k]`` is the correlation across units of ``f[u, i, j]``
    with ``x[u, k]``, weighted by ``n[u, i, +]`` when ``weighted``.  Units
    with an empty row ``i`` are left out of the ``[i, :, :]`` entries.
    Values near zero everywhere are what unbiased ecological regression
    needs.
    """
    n = _individual(individual)
    N, R, C = n.shape
    rows = n.sum(axis=2)
    x = rows / rows.sum(axis=1, keepdims=True)
    out = np.zeros((R, C, R))
    for i in range(R):
        keep = rows[:, i] > 0
        if keep.sum() < 2:
            raise InsufficientUnits(f"row {i} is populated in fewer than two units")
        w = rows[keep, i] if weighted else np.ones(keep.sum())
        f = n[keep, i, :] / rows[keep, i][:, None]
        for k in range(R):
            xk = x[keep, k]
            for j in range(C):
                cov, vf, vx = _wcorr(f[:, j], xk, w)
                if not vx > 1e-24:
                    raise InsufficientVariation(f"row margin {k} is constant across units")
                out[i, j, k] = 0.0 if vf <= 1e-24 else cov / np.sqrt(vf * vx)
    return out


@dataclass(frozen=True)
class QuantileProfile:
    """Group-level averages of within-unit proportions.

    ``group_edges`` has ``n_groups + 1`` entries: the smallest grouping share,
    the first share of each later group, the largest share.  ``x[g]`` is the
    pooled grouping share of group ``g`` and ``y[g, i, j]`` the pooled
    proportion ``n[g, i, j] / n[g, i, +]`` (NaN for an empty row).
    """

    group_by: int
    group_edges: np.ndarray
    x: np.ndarray
    y: np.ndarray
    group_sizes: np.ndarray

    def series(self, col: int | None = None):
        """Tidy ``(series, x, y)`` records, one series per (row, column)."""
        G, R, C = self.y.shape
        cols = range(C) if col is None else [col]
        out = []
        for i in range(R):
            for j in cols:
                for g in range(G):
                    out.append((f"row{i}_col{j}", float(self.x[g]), float(self.y[g, i, j])))
        return out


def quantile_profile(individual: Sequence[UnitCounts], group_by: int, n_groups: int = 20) -> QuantileProfile:
    """Group units by quantiles of row share ``x[u, group_by]``.

    Quantiles are taken on the size-weighted empirical distribution; units
    are ordered by share with ties kept in input order, and a unit falls in
    the group containing the midpoint of its cumulative weight.

    Raises
    ------
    InsufficientUnits
        Some group would be empty.
    """
    n = _individual(individual)
    N, R, C = n.shape
    if not 0 <= group_by < R:
        raise ValidationError(f"group_by {group_by} outside 0..{R - 1}")
    if n_groups < 1:
        raise ValidationError("n_groups must be at least 1")
    sizes = n.sum(axis=(1, 2))
    share = n[:, group_by, :].sum(axis=1) / sizes
    order = np.argsort(share, kind="stable")
    w = sizes[order]
    mid = (np.cumsum(w) - w / 2) / w.sum()
    group = np.minimum((mid * n_groups).astype(int), n_groups - 1)
    counts = np.bincount(group, minlength=n_groups)
    if np.any(counts == 0):
        raise InsufficientUnits(
            f"{int((counts == 0).sum())} of {n_groups} quantile groups are empty; use fewer groups"
        )
    xs = np.empty(n_groups)
    ys = np.empty((n_groups, R, C))
    edges = np.empty(n_groups + 1)
    sorted_share = share[order]
    for g in range(n_groups):
        members = order[group == g]
        pooled = n[members].sum(axis=0)
        xs[g] = pooled[group_by].sum() / pooled.sum()
        rsum = pooled.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            ys[g] = np.where(rsum > 0, pooled / np.where(rsum > 0, rsum, 1), np.nan)
        edges[g] = sorted_share[group == g][0]
    edges[0] = sorted_share[0]
    edges[-1] = sorted_share[-1]
    return QuantileProfile(group_by, edges, xs, ys, counts)


@dataclass(frozen=True)
class GeometryExport:
    """Line geometry of 2 x 2 units.

    Unit ``u`` is the segment from ``(0, start[u])`` to ``(1, end[u])`` with
    ``start = f[u, 0, 1]`` and ``end = f[u, 1, 1]``; its ecological
    observation ``(x2[u], y2[u])`` lies on it.
    """

    unit_ids: tuple
    start: np.ndarray
    end: np.ndarray
    x2: np.ndarray
    y2: np.ndarray
    intercept: float
    slope: float
    overall: tuple[float, float]

    @property
    def unit_slopes(self) -> np.ndarray:
        return self.end - self.start

    def on_segment_error(self) -> np.ndarray:
        return np.abs(self.y2 - ((1 - self.x2) * self.start + self.x2 * self.end))

    def series(self):
        """Tidy ``(series, x, y)`` records for plotting."""
        out = []
        for uid, a, b in zip(self.unit_ids, self.start, self.end):
            out += [(f"unit:{uid}", 0.0, float(a)), (f"unit:{uid}", 1.0, float(b))]
        out += [("ecological", float(x), float(y)) for x, y in zip(self.x2, self.y2)]
        out += [("regression", 0.0, self.intercept), ("regression", 1.0, self.intercept + self.slope)]
        out += [("overall", 0.0, self.overall[0]), ("overall", 1.0, self.overall[1])]
        return out


def two_by_two_geometry(individual: Sequence[UnitCounts]) -> GeometryExport:
    """Segments, ecological points, ecological regression and overall line."""
    units = list(individual)
    n = _individual(units)
    if n.shape[1:] != (2, 2):
        raise DimensionError(f"geometry needs 2 x 2 tables, got {n.shape[1:]}")
    rows = n.sum(axis=2)
    if np.any(rows <= 0):
        bad = [units[k].unit_id for k in np.flatnonzero((rows <= 0).any(axis=1))]
        raise ValidationError(f"units {bad} have an empty row")
    f = n / rows[:, :, None]
    sizes = rows.sum(axis=1)
    x2 = rows[:, 1] / sizes
    y2 = n[:, :, 1].sum(axis=1) / sizes
    if x2.size < 2 or np.ptp(x2) == 0:
        raise InsufficientVariation("ecological regression needs at least two distinct x values")
    dx = x2 - x2.mean()
    slope = float(dx @ (y2 - y2.mean()) / (dx @ dx))
    intercept = float(y2.mean() - slope * x2.mean())
    overall = aggregate_counts(n)
    return GeometryExport(
        unit_ids=tuple(u.unit_id for u in units),
        start=f[:, 0, 1],
        end=f[:, 1, 1],
        x2=x2,
        y2=y2,
        intercept=intercept,
        slope=slope,
        overall=(float(overall[0, 1]), float(overall[1, 1])),
    )
