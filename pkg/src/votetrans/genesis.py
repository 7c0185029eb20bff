"""Synthetic electoral data with known individual-level truth.

Each polling station is generated in four steps:

1. station size and row margins (the previous-election shares);
2. expected transition rows, obtained from a base table by shifting chosen
   cells on the log-odds scale with centered covariates;
3. realized rows, a Dirichlet perturbation of the expected rows;
4. individual counts, drawn row by row from a multinomial.

Under a mixture the voters of every row are first split into two latent
types, each with its own table, and steps 2-4 run per type.

Every station draws from its own RNG stream spawned from the spec seed, so
the output does not depend on how many workers are used.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy.special import expit

from .errors import InvalidPrecision, SpecError, VoteTransError
from .tables import UnitCounts, UnitMargins, check_proportion_table, margins_of

__all__ = [
    "SizeLaw",
    "MarginLaw",
    "CovariateEffect",
    "ExternalCovariate",
    "WeightLaw",
    "MixtureSpec",
    "ClusterSpec",
    "GeneratorSpec",
    "GeneratedData",
    "dirichlet_row",
    "largest_remainder",
    "generate",
    "generate_mixture",
]


def _parse_source(source: str) -> tuple[str, Any]:
    kind, _, arg = str(source).partition(":")
    if kind == "row_margin":
        try:
            return kind, int(arg)
        except ValueError:
            raise SpecError(f"bad row_margin index in source {source!r}") from None
    if kind == "external" and arg:
        return kind, arg
    raise SpecError(f"unknown covariate source {source!r}")


def _precision_from_json(value) -> float:
    if value is None or value in ("inf", "Infinity", "infinity"):
        return math.inf
    return float(value)


@dataclass
class SizeLaw:
    """Station sizes ``n[u, +, +]``: ``uniform`` integers in [min, max] or ``fixed``."""

    law: str = "uniform"
    min: int = 500
    max: int = 1500

    def validate(self):
        if self.law not in ("uniform", "fixed"):
            raise SpecError(f"unknown size law {self.law!r}")
        if self.min < 1 or self.max < self.min:
            raise SpecError(f"size law needs 1 <= min <= max, got [{self.min}, {self.max}]")

    def draw(self, rng: np.random.Generator) -> int:
        if self.law == "fixed":
            return int(self.min)
        return int(rng.integers(self.min, self.max + 1))


@dataclass
class MarginLaw:
    """Row-margin proportions ``x[u]``: ``dirichlet`` or ``fixed``."""

    law: str = "dirichlet"
    concentration: list[float] | None = None
    proportions: list[float] | None = None

    def validate(self, n_rows: int):
        if self.law == "dirichlet":
            c = np.asarray(self.concentration if self.concentration is not None else [], float)
            if c.shape != (n_rows,) or np.any(c <= 0):
                raise SpecError(f"dirichlet margin law needs {n_rows} positive concentrations")
        elif self.law == "fixed":
            p = np.asarray(self.proportions if self.proportions is not None else [], float)
            if p.shape != (n_rows,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                raise SpecError(f"fixed margin law needs {n_rows} proportions summing to 1")
        else:
            raise SpecError(f"unknown margin law {self.law!r}")

    def mean(self) -> np.ndarray:
        if self.law == "fixed":
            return np.asarray(self.proportions, float)
        c = np.asarray(self.concentration, float)
        return c / c.sum()

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self.law == "fixed":
            return np.asarray(self.proportions, float)
        return rng.dirichlet(np.asarray(self.concentration, float))


@dataclass
class CovariateEffect:
    cell: tuple[int, int]
    source: str
    slope: float

    def __post_init__(self):
        self.cell = tuple(int(c) for c in self.cell)


@dataclass
class ExternalCovariate:
    """Unit-level covariate drawn from a normal law."""

    name: str
    mean: float = 0.0
    sd: float = 1.0


@dataclass
class WeightLaw:
    """Share of latent type V=1 in a station.

    ``logistic``: ``expit(intercept + slope * z)`` with ``z`` from ``source``;
    ``constant``: ``value`` everywhere.
    """

    law: str = "logistic"
    intercept: float = 0.0
    slope: float = 0.0
    source: str = "row_margin:1"
    value: float = 0.5

    def validate(self, n_rows: int):
        if self.law == "constant":
            if not 0.0 <= self.value <= 1.0:
                raise SpecError(f"constant weight {self.value} outside [0, 1]")
        elif self.law == "logistic":
            kind, arg = _parse_source(self.source)
            if kind != "row_margin" or not 0 <= arg < n_rows:
                raise SpecError(f"weight source must be a row margin, got {self.source!r}")
        else:
            raise SpecError(f"unknown weight law {self.law!r}")

    def weight(self, x: np.ndarray) -> float:
        if self.law == "constant":
            return float(self.value)
        _, k = _parse_source(self.source)
        return float(expit(self.intercept + self.slope * x[k]))


@dataclass
class MixtureSpec:
    """Two latent voter types, ``tables[v]`` being the table for V=v.

    With ``per_row`` the voters of each row are split independently with the
    station weight; otherwise the station's V=1 total is drawn once and dealt
    out to the rows at random.
    """

    tables: tuple
    weight_law: WeightLaw = field(default_factory=WeightLaw)
    per_row: bool = True

    def __post_init__(self):
        if isinstance(self.weight_law, dict):
            self.weight_law = WeightLaw(**self.weight_law)


@dataclass
class ClusterSpec:
    """Second-stage clustering of voters within each row.

    Voters come in clusters of geometric size with the given mean; each
    cluster shares one probability vector drawn from a Dirichlet with
    ``precision`` around the unit's realized row.
    """

    mean_size: float = 5.0
    precision: float = 50.0


@dataclass
class GeneratorSpec:
    """Full description of a synthetic-data scenario.

    ``dispersion`` is the Dirichlet precision of unit-level variation of the
    transition rows; ``math.inf`` turns the variation off.  ``count_law`` is
    ``multinomial`` or ``expected`` (largest-remainder rounding of the
    expected counts, i.e. no sampling noise).
    """

    n_units: int
    base_table: Any
    size_law: SizeLaw = field(default_factory=SizeLaw)
    margin_law: MarginLaw | None = None
    covariate_effects: list[CovariateEffect] = field(default_factory=list)
    dispersion: float = math.inf
    mixture: MixtureSpec | None = None
    seed: int = 0
    count_law: str = "multinomial"
    external_covariates: list[ExternalCovariate] = field(default_factory=list)
    clusters: ClusterSpec | None = None

    def __post_init__(self):
        self.base_table = np.asarray(self.base_table, dtype=float)
        if isinstance(self.size_law, dict):
            self.size_law = SizeLaw(**self.size_law)
        if isinstance(self.margin_law, dict):
            self.margin_law = MarginLaw(**self.margin_law)
        if self.margin_law is None and self.base_table.ndim == 2:
            self.margin_law = MarginLaw("dirichlet", [5.0] * self.base_table.shape[0])
        self.covariate_effects = [
            CovariateEffect(**e) if isinstance(e, dict) else e for e in self.covariate_effects
        ]
        self.external_covariates = [
            ExternalCovariate(**e) if isinstance(e, dict) else e for e in self.external_covariates
        ]
        if isinstance(self.mixture, dict):
            self.mixture = MixtureSpec(**self.mixture)
        if isinstance(self.clusters, dict):
            self.clusters = ClusterSpec(**self.clusters)
        self.dispersion = _precision_from_json(self.dispersion)
        if self.mixture is not None:
            self.mixture.tables = tuple(np.asarray(t, dtype=float) for t in self.mixture.tables)

    @property
    def shape(self) -> tuple[int, int]:
        return self.base_table.shape

    def validate(self) -> "GeneratorSpec":
        if not isinstance(self.n_units, (int, np.integer)) or self.n_units < 1:
            raise SpecError(f"n_units must be a positive integer, got {self.n_units!r}")
        try:
            check_proportion_table(self.base_table, tol=1e-9)
        except VoteTransError as exc:
            raise SpecError(f"base_table: {exc}") from None
        R, C = self.shape
        if R < 2 or C < 2:
            raise SpecError(f"base_table must be at least 2 x 2, got {self.shape}")
        if not self.dispersion > 0:
            raise SpecError(f"dispersion must be > 0, got {self.dispersion}")
        if self.count_law not in ("multinomial", "expected"):
            raise SpecError(f"unknown count law {self.count_law!r}")
        self.size_law.validate()
        self.margin_law.validate(R)
        names = {c.name for c in self.external_covariates}
        if len(names) != len(self.external_covariates):
            raise SpecError("duplicate external covariate names")
        for e in self.covariate_effects:
            i, j = e.cell
            if not (0 <= i < R and 0 <= j < C):
                raise SpecError(f"covariate effect cell {e.cell} outside {R} x {C} table")
            kind, arg = _parse_source(e.source)
            if kind == "row_margin" and not 0 <= arg < R:
                raise SpecError(f"row_margin index {arg} out of range")
            if kind == "external" and arg not in names:
                raise SpecError(f"external covariate {arg!r} is not declared")
            if not math.isfinite(e.slope):
                raise SpecError(f"non-finite slope in effect on cell {e.cell}")
        if self.mixture is not None:
            if len(self.mixture.tables) != 2:
                raise SpecError("mixture needs exactly two tables")
            for v, t in enumerate(self.mixture.tables):
                if t.shape != self.shape:
                    raise SpecError(f"mixture table {v} has shape {t.shape}, expected {self.shape}")
                try:
                    check_proportion_table(t, tol=1e-9)
                except VoteTransError as exc:
                    raise SpecError(f"mixture table {v}: {exc}") from None
            self.mixture.weight_law.validate(R)
        if self.clusters is not None:
            if self.clusters.mean_size < 1 or not self.clusters.precision > 0:
                raise SpecError("clusters need mean_size >= 1 and precision > 0")
        return self

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base_table"] = self.base_table.tolist()
        d["dispersion"] = "inf" if math.isinf(self.dispersion) else self.dispersion
        d["covariate_effects"] = [
            {"cell": list(e.cell), "source": e.source, "slope": e.slope}
            for e in self.covariate_effects
        ]
        if self.mixture is not None:
            d["mixture"]["tables"] = [t.tolist() for t in self.mixture.tables]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        try:
            return cls(**d)
        except TypeError as exc:
            raise SpecError(f"bad generator spec: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorSpec":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


@dataclass
class GeneratedData:
    """Generator output: individual tables, external covariates, latent tallies.

    ``latent`` has shape (N, 2, R, C) with the counts split by latent type
    when the spec has a mixture, else ``None``.  ``weights`` holds the V=1
    share of every station under a mixture.
    """

    units: list[UnitCounts]
    covariates: list[dict[str, float]]
    latent: np.ndarray | None = None
    weights: np.ndarray | None = None

    def margins(self) -> list[UnitMargins]:
        return [margins_of(u, c) for u, c in zip(self.units, self.covariates)]

    def counts(self) -> np.ndarray:
        return np.stack([u.counts for u in self.units])


def dirichlet_row(mean, precision: float, rng: np.random.Generator) -> np.ndarray:
    """Draw a probability vector from Dirichlet(``precision * mean``).

    ``precision = math.inf`` returns ``mean`` itself.  Zero entries of
    ``mean`` stay zero.
    """
    mean = np.asarray(mean, dtype=float)
    if not precision > 0:
        raise InvalidPrecision(f"precision must be positive, got {precision}")
    if math.isinf(precision):
        return mean.copy()
    support = mean > 0
    out = np.zeros_like(mean)
    if support.sum() == 1:
        out[support] = 1.0
        return out
    out[support] = rng.dirichlet(precision * mean[support])
    return out


def largest_remainder(total: int, proportions) -> np.ndarray:
    """Integers proportional to ``proportions`` that sum exactly to ``total``."""
    p = np.asarray(proportions, dtype=float)
    raw = total * p / p.sum()
    base = np.floor(raw).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        # stable sort: ties go to the lower index
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def _covariate_values(spec: GeneratorSpec, x: np.ndarray, ext: dict[str, float], centered: bool):
    means = spec.margin_law.mean()
    ext_means = {c.name: c.mean for c in spec.external_covariates}
    out = []
    for e in spec.covariate_effects:
        kind, arg = _parse_source(e.source)
        if kind == "row_margin":
            z = x[arg] - (means[arg] if centered else 0.0)
        else:
            z = ext[arg] - (ext_means[arg] if centered else 0.0)
        out.append(z)
    return out


def expected_rows(spec: GeneratorSpec, table: np.ndarray, x: np.ndarray, ext: dict[str, float]) -> np.ndarray:
    """Apply the covariate effects to ``table`` on the log-odds scale.

    Covariates are centered at their population means, so at average
    covariates the result equals ``table``.
    """
    if not spec.covariate_effects:
        return table.copy()
    with np.errstate(divide="ignore"):
        eta = np.log(table)
    for e, z in zip(spec.covariate_effects, _covariate_values(spec, x, ext, centered=True)):
        i, j = e.cell
        if np.isfinite(eta[i, j]):
            eta[i, j] += e.slope * z
    eta -= eta.max(axis=1, keepdims=True)
    p = np.exp(eta)
    return p / p.sum(axis=1, keepdims=True)


def _draw_row(n: int, p: np.ndarray, spec: GeneratorSpec, rng: np.random.Generator) -> np.ndarray:
    """Counts of ``n`` voters over the columns given expected row ``p``."""
    if n == 0:
        return np.zeros(p.size, dtype=np.int64)
    realized = dirichlet_row(p, spec.dispersion, rng)
    if spec.count_law == "expected":
        return largest_remainder(n, realized)
    if spec.clusters is None:
        return rng.multinomial(n, realized)
    out = np.zeros(p.size, dtype=np.int64)
    remaining = n
    q = 1.0 / spec.clusters.mean_size
    while remaining > 0:
        size = min(int(rng.geometric(q)), remaining)
        shared = dirichlet_row(realized, spec.clusters.precision, rng) if np.count_nonzero(realized) > 1 else realized
        out += rng.multinomial(size, shared)
        remaining -= size
    return out


def _unit_frame(spec: GeneratorSpec, rng: np.random.Generator):
    size = spec.size_law.draw(rng)
    x = spec.margin_law.draw(rng)
    rows = largest_remainder(size, x)
    ext = {c.name: float(rng.normal(c.mean, c.sd)) for c in spec.external_covariates}
    return rows, x, ext


def _simple_unit(spec: GeneratorSpec, rng: np.random.Generator):
    rows, x, ext = _unit_frame(spec, rng)
    pi = expected_rows(spec, spec.base_table, rows / rows.sum(), ext)
    counts = np.stack([_draw_row(int(n), pi[i], spec, rng) for i, n in enumerate(rows)])
    return counts, ext, None, None


def _mixture_unit(spec: GeneratorSpec, rng: np.random.Generator):
    rows, x, ext = _unit_frame(spec, rng)
    mix = spec.mixture
    xr = rows / rows.sum()
    w = mix.weight_law.weight(xr)
    if mix.per_row:
        ones = np.array([rng.binomial(int(n), w) for n in rows], dtype=np.int64)
    else:
        total_ones = int(rng.binomial(int(rows.sum()), w))
        ones = rng.multivariate_hypergeometric(rows, total_ones)
    split = np.stack([rows - ones, ones])
    latent = np.zeros((2,) + spec.shape, dtype=np.int64)
    for v in (0, 1):
        pi = expected_rows(spec, mix.tables[v], xr, ext)
        for i in range(spec.shape[0]):
            latent[v, i] = _draw_row(int(split[v, i]), pi[i], spec, rng)
    return latent.sum(axis=0), ext, latent, w


def _run(spec: GeneratorSpec, unit_fn, workers: int | None):
    spec.validate()
    streams = np.random.SeedSequence(int(spec.seed)).spawn(spec.n_units)

    def one(k):
        return unit_fn(spec, np.random.default_rng(streams[k]))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(spec.n_units)))
    else:
        results = [one(k) for k in range(spec.n_units)]

    width = len(str(spec.n_units - 1))
    units, covs, latent, weights = [], [], [], []
    for k, (counts, ext, lat, w) in enumerate(results):
        if counts.sum() == 0:
            raise SpecError(f"unit {k} has no voters")
        units.append(UnitCounts(f"u{k:0{width}d}", counts))
        covs.append(ext)
        latent.append(lat)
        weights.append(w)
    if spec.mixture is None:
        return GeneratedData(units, covs)
    return GeneratedData(units, covs, np.stack(latent), np.array(weights))


def generate(spec: GeneratorSpec, workers: int | None = None) -> GeneratedData:
    """Generate ground-truth station tables for ``spec``.

    Deterministic in ``spec.seed``; ``workers`` only changes the speed.  Specs
    with a mixture are delegated to :func:`generate_mixture`.
    """
    if spec.mixture is not None:
        return generate_mixture(spec, workers)
    return _run(spec, _simple_unit, workers)


def generate_mixture(spec: GeneratorSpec, workers: int | None = None) -> GeneratedData:
    """Generate stations whose voters are a mixture of two latent types.

    The returned ``latent`` array keeps the per-type tallies; the emitted
    tables are their sum over types.
    """
    if spec.mixture is None:
        raise SpecError("generate_mixture needs a spec with a mixture")
    return _run(spec, _mixture_unit, workers)
