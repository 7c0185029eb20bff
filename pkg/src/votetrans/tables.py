"""Individual and aggregated electoral tables.

A polling station (unit) ``u`` is described at the individual level by an
R x C count table ``n[u, i, j]``: voters with previous choice ``i`` and new
choice ``j``.  Only its margins are normally observed.  This module holds the
two record types, the overall-table aggregation and the accounting residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyRowMargin, ValidationError

ROW_SUM_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _as_counts(values, ndim: int, what: str) -> np.ndarray:
    a = np.asarray(values)
    if a.ndim != ndim:
        raise DimensionMismatch(f"{what} must be {ndim}-dimensional, got shape {a.shape}")
    if a.dtype.kind == "f":
        if not np.all(np.isfinite(a)) or np.any(a != np.round(a)):
            raise ValidationError(f"{what} must hold integers")
    elif a.dtype.kind not in "iu":
        raise ValidationError(f"{what} must hold integers, got dtype {a.dtype}")
    a = a.astype(np.int64)
    if np.any(a < 0):
        raise ValidationError(f"{what} must be non-negative")
    return a


@dataclass(frozen=True)
class UnitCounts:
    """Individual-level R x C table of one polling station."""

    unit_id: Hashable
    counts: np.ndarray

    def __post_init__(self):
        counts = _as_counts(self.counts, 2, f"counts of unit {self.unit_id!r}")
        if counts.shape[0] < 2 or counts.shape[1] < 2:
            raise DimensionMismatch(
                f"unit {self.unit_id!r}: need R >= 2 and C >= 2, got {counts.shape}"
            )
        object.__setattr__(self, "counts", _frozen(counts))

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_proportions(self) -> np.ndarray:
        """``f[i, j] = n[i, j] / n[i, +]``; rows with no voters are NaN."""
        rows = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, self.counts / np.where(rows > 0, rows, 1), np.nan)


@dataclass(frozen=True)
class UnitMargins:
    """Ecological observation of one polling station.

    ``covariates`` holds optional external unit-level variables by name.
    """

    unit_id: Hashable
    row_totals: np.ndarray
    col_totals: np.ndarray
    covariates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        rows = _as_counts(self.row_totals, 1, f"row totals of unit {self.unit_id!r}")
        cols = _as_counts(self.col_totals, 1, f"column totals of unit {self.unit_id!r}")
        if rows.sum() != cols.sum():
            raise ValidationError(
                f"unit {self.unit_id!r}: row totals sum to {rows.sum()} "
                f"but column totals sum to {cols.sum()}"
            )
        if rows.sum() == 0:
            raise ValidationError(f"unit {self.unit_id!r} has no voters")
        object.__setattr__(self, "row_totals", _frozen(rows))
        object.__setattr__(self, "col_totals", _frozen(cols))
        object.__setattr__(
            self, "covariates", MappingProxyType({str(k): float(v) for k, v in self.covariates.items()})
        )

    @property
    def total(self) -> int:
        return int(self.row_totals.sum())

    @property
    def x(self) -> np.ndarray:
        return self.row_totals / self.total

    @property
    def y(self) -> np.ndarray:
        return self.col_totals / self.total


def check_proportion_table(table, tol: float = ROW_SUM_TOL) -> np.ndarray:
    """Validate a row-stochastic table and return it as a float array."""
    t = np.asarray(table, dtype=float)
    if t.ndim != 2:
        raise DimensionMismatch(f"proportion table must be 2-dimensional, got shape {t.shape}")
    if not np.all(np.isfinite(t)) or np.any(t < 0) or np.any(t > 1):
        raise ValidationError("proportion table entries must lie in [0, 1]")
    bad = np.abs(t.sum(axis=1) - 1.0) > tol
    if np.any(bad):
        raise ValidationError(f"rows {np.flatnonzero(bad).tolist()} do not sum to 1")
    return t


def margins_of(t: UnitCounts, covariates: Mapping[str, float] | None = None) -> UnitMargins:
    return UnitMargins(
        unit_id=t.unit_id,
        row_totals=t.counts.sum(axis=1),
        col_totals=t.counts.sum(axis=0),
        covariates=covariates or {},
    )


def _common_shape(shapes: Iterable[tuple[int, ...]]) -> tuple[int, ...]:
    shapes = list(shapes)
    if not shapes:
        raise ValidationError("empty list of units")
    first = shapes[0]
    for k, s in enumerate(shapes):
        if s != first:
            raise DimensionMismatch(f"unit #{k} has shape {s}, expected {first}")
    return first


def stack_counts(units: Sequence[UnitCounts]) -> np.ndarray:
    """Stack unit tables into an (N, R, C) integer array."""
    _common_shape(u.shape for u in units)
    return np.stack([u.counts for u in units])


def aggregate_counts(counts: np.ndarray) -> np.ndarray:
    """Overall row proportions ``n[+, i, j] / n[+, i, +]`` of an (N, R, C) array."""
    total = np.asarray(counts, dtype=float).sum(axis=0)
    rows = total.sum(axis=1)
    empty = np.flatnonzero(rows <= 0)
    if empty.size:
        raise EmptyRowMargin(f"rows {empty.tolist()} have no voters in any unit")
    return total / rows[:, None]


def aggregate_units(units: Sequence[UnitCounts]) -> np.ndarray:
    """Overall table of row proportions after pooling the units.

    Equal to the ``n[u, i, +]``-weighted average of the unit-level row
    proportions; units whose row ``i`` is empty contribute nothing to it.
    """
    return aggregate_counts(stack_counts(units))


def accounting_residual(m: UnitMargins, f) -> np.ndarray:
    """Return ``y[j] - sum_i x[i] f[i, j]`` for one unit."""
    f = np.asarray(f, dtype=float)
    if f.shape != (m.row_totals.size, m.col_totals.size):
        raise DimensionMismatch(
            f"table shape {f.shape} does not match margins "
            f"({m.row_totals.size}, {m.col_totals.size})"
        )
    return m.y - m.x @ f


@dataclass(frozen=True)
class MarginArrays:
    """Column-stacked view of a list of :class:`UnitMargins`.

    Estimators work on these arrays rather than on per-unit records.
    """

    unit_ids: tuple
    row_totals: np.ndarray  # (N, R)
    col_totals: np.ndarray  # (N, C)
    covariates: Mapping[str, np.ndarray]

    @property
    def n_units(self) -> int:
        return self.row_totals.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.row_totals.shape[1], self.col_totals.shape[1]

    @property
    def sizes(self) -> np.ndarray:
        return self.row_totals.sum(axis=1).astype(float)

    @property
    def x(self) -> np.ndarray:
        return self.row_totals / self.sizes[:, None]

    @property
    def y(self) -> np.ndarray:
        return self.col_totals / self.sizes[:, None]


def stack_margins(data: Sequence[UnitMargins]) -> MarginArrays:
    if isinstance(data, MarginArrays):
        return data
    data = list(data)
    _common_shape((m.row_totals.size, m.col_totals.size) for m in data)
    names = set(data[0].covariates)
    for m in data[1:]:
        names &= set(m.covariates)
    covariates = {k: np.array([m.covariates[k] for m in data]) for k in sorted(names)}
    return MarginArrays(
        unit_ids=tuple(m.unit_id for m in data),
        row_totals=np.stack([m.row_totals for m in data]),
        col_totals=np.stack([m.col_totals for m in data]),
        covariates=covariates,
    )


def units_from_table(table, row_totals: Sequence[Sequence[int]], prefix: str = "u") -> list[UnitCounts]:
    """Build noiseless units whose rows split exactly as ``table``.

    Every ``row_totals[u][i] * table[i, j]`` must be an integer.
    """
    table = check_proportion_table(table)
    units = []
    for k, rows in enumerate(row_totals):
        rows = np.asarray(rows, dtype=float)
        counts = rows[:, None] * table
        rounded = np.round(counts)
        if np.any(np.abs(counts - rounded) > 1e-9):
            raise ValidationError(f"row totals {rows.tolist()} do not split exactly")
        units.append(UnitCounts(f"{prefix}{k}", rounded.astype(np.int64)))
    return units
