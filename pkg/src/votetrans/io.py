"""CSV and JSON readers and writers.

Individual data: ``unit_id,row_index,col_index,count`` with 0-based indices.
Aggregated data: ``unit_id,x_0..x_{R-1},y_0..y_{C-1}`` as integer counts,
followed by any number of named covariate columns.
Estimate tables: a header ``row,<column labels>`` and one line per row.

Floats are written with ``repr`` so files round-trip exactly and identical
inputs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, ValidationError
from .tables import UnitCounts, UnitMargins

_X = re.compile(r"^x_(\d+)$")
_Y = re.compile(r"^y_(\d+)$")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _open_write(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open("w", newline="")


def _int_field(value: str, where: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{where}: expected an integer, got {value!r}") from None


def write_individual_csv(path, units: Sequence[UnitCounts]) -> None:
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "row_index", "col_index", "count"])
        for u in units:
            R, C = u.shape
            for i in range(R):
                for j in range(C):
                    w.writerow([u.unit_id, i, j, int(u.counts[i, j])])


def read_individual_csv(path) -> list[UnitCounts]:
    """Read individual tables; units keep their first-appearance order."""
    cells: dict[str, dict[tuple[int, int], int]] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"unit_id", "row_index", "col_index", "count"}
        missing = need - set(reader.fieldnames or [])
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for line, rec in enumerate(reader, start=2):
            where = f"{path} line {line}"
            i = _int_field(rec["row_index"], f"{where}, column row_index")
            j = _int_field(rec["col_index"], f"{where}, column col_index")
            n = _int_field(rec["count"], f"{where}, column count")
            if i < 0 or j < 0:
                raise ValidationError(f"{where}: negative index")
            if n < 0:
                raise ValidationError(f"{where}, column count: negative count {n}")
            unit = cells.setdefault(rec["unit_id"], {})
            if (i, j) in unit:
                raise ValidationError(f"{where}: duplicate cell ({i}, {j}) for unit {rec['unit_id']!r}")
            unit[(i, j)] = n
    if not cells:
        raise ValidationError(f"{path}: no data rows")
    R = 1 + max(i for u in cells.values() for i, _ in u)
    C = 1 + max(j for u in cells.values() for _, j in u)
    units = []
    for uid, unit in cells.items():
        counts = np.zeros((R, C), dtype=np.int64)
        for (i, j), n in unit.items():
            counts[i, j] = n
        units.append(UnitCounts(uid, counts))
    return units


def write_aggregated_csv(path, margins: Sequence[UnitMargins]) -> None:
    margins = list(margins)
    R = margins[0].row_totals.size
    C = margins[0].col_totals.size
    names = sorted(margins[0].covariates)
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id"] + [f"x_{i}" for i in range(R)] + [f"y_{j}" for j in range(C)] + names)
        for m in margins:
            w.writerow(
                [m.unit_id]
                + [int(v) for v in m.row_totals]
                + [int(v) for v in m.col_totals]
                + [_fmt(float(m.covariates[k])) for k in names]
            )


def read_aggregated_csv(path, shape: tuple[int, int] | None = None) -> list[UnitMargins]:
    """Read aggregated margins, optionally checking the table shape."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if not header or header[0] != "unit_id":
            raise ValidationError(f"{path}: first column must be unit_id")
        xs = sorted((int(_X.match(h).group(1)), k) for k, h in enumerate(header) if _X.match(h))
        ys = sorted((int(_Y.match(h).group(1)), k) for k, h in enumerate(header) if _Y.match(h))
        if [i for i, _ in xs] != list(range(len(xs))) or [j for j, _ in ys] != list(range(len(ys))):
            raise ValidationError(f"{path}: x_ and y_ columns must be numbered 0, 1, ... without gaps")
        R, C = len(xs), len(ys)
        if R < 2 or C < 2:
            raise ValidationError(f"{path}: need at least x_0,x_1 and y_0,y_1 columns")
        if shape is not None and tuple(shape) != (R, C):
            raise DimensionMismatch(
                f"{path}: data are {R} x {C} (x_0..x_{R - 1}, y_0..y_{C - 1}) "
                f"but {shape[0]} x {shape[1]} was expected"
            )
        used = {k for _, k in xs} | {k for _, k in ys} | {0}
        extra = [(h, k) for k, h in enumerate(header) if k not in used]
        out = []
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ValidationError(f"{path} line {line}: expected {len(header)} fields, got {len(rec)}")
            rows = [_int_field(rec[k], f"{path} line {line}, column {header[k]}") for _, k in xs]
            cols = [_int_field(rec[k], f"{path} line {line}, column {header[k]}") for _, k in ys]
            cov = {}
            for h, k in extra:
                try:
                    cov[h] = float(rec[k])
                except ValueError:
                    raise ValidationError(f"{path} line {line}, column {h}: not a number {rec[k]!r}") from None
            try:
                out.append(UnitMargins(rec[0], rows, cols, cov))
            except ValidationError as exc:
                raise ValidationError(f"{path} line {line}: {exc}") from None
    if not out:
        raise ValidationError(f"{path}: no data rows")
    return out


def write_table_csv(path, table, row_labels=None, col_labels=None) -> None:
    table = np.asarray(table, dtype=float)
    R, C = table.shape
    row_labels = list(row_labels) if row_labels else [str(i) for i in range(R)]
    col_labels = list(col_labels) if col_labels else [str(j) for j in range(C)]
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row"] + col_labels)
        for label, r in zip(row_labels, table):
            w.writerow([label] + [_fmt(v) for v in r])


def read_table_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    try:
        return np.array([[float(v) for v in r[1:]] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_records_csv(path, header: Sequence[str], records) -> None:
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for rec in records:
            w.writerow([_fmt(v) for v in rec])


def write_json(path, obj) -> None:
    with _open_write(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with Path(path).open() as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
