"""Built-in scenarios.

``constant``, ``diagonal-covariate`` and ``mixture`` are generator specs;
``fig1a`` .. ``fig2b`` are fixed sets of 2 x 2 units showing ecological
fallacies in line geometry.  Station-size and margin laws are our own
choices; they are tuned so each scenario shows its qualitative pattern at a
desk-scale number of units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpecError
from .genesis import CovariateEffect, GeneratorSpec, MarginLaw, MixtureSpec, SizeLaw, WeightLaw
from .logit import CovariateDesign, DesignEntry
from .tables import UnitCounts

GENERATED = ("constant", "diagonal-covariate", "mixture")
CONSTRUCTED = ("fig1a", "fig1b", "fig2a", "fig2b")
SCENARIOS = GENERATED + CONSTRUCTED

CONSTANT_TABLE = [[0.75, 0.25], [0.35, 0.65]]

DIAGONAL_TABLE = [
    [0.72, 0.19, 0.09],
    [0.09, 0.63, 0.28],
    [0.09, 0.09, 0.82],
]
DIAGONAL_SLOPE = 3.0

# column 0 = voted, column 1 = did not; rows M, F
MIXTURE_TABLES = (
    [[0.005, 0.995], [0.001, 0.999]],
    [[0.402, 0.598], [0.400, 0.600]],
)


@dataclass
class Scenario:
    name: str
    spec: GeneratorSpec | None = None
    design: CovariateDesign = field(default_factory=CovariateDesign)
    units: list[UnitCounts] | None = None
    row_labels: tuple[str, ...] = ()
    col_labels: tuple[str, ...] = ()


def constant_spec(n_units: int = 2000, seed: int = 0, dispersion: float = 200.0) -> GeneratorSpec:
    return GeneratorSpec(
        n_units=n_units,
        base_table=CONSTANT_TABLE,
        size_law=SizeLaw("uniform", 500, 1500),
        margin_law=MarginLaw("dirichlet", [4.0, 4.0]),
        dispersion=dispersion,
        seed=seed,
    )


def diagonal_design(R: int) -> CovariateDesign:
    """Diagonal cell ``(i, i)`` depends on its own row share ``x[u, i]``."""
    return CovariateDesign(tuple(DesignEntry((i, i), f"row_margin:{i}") for i in range(R)))


def diagonal_spec(n_units: int = 2000, seed: int = 0) -> GeneratorSpec:
    return GeneratorSpec(
        n_units=n_units,
        base_table=DIAGONAL_TABLE,
        size_law=SizeLaw("uniform", 500, 1500),
        margin_law=MarginLaw("dirichlet", [2.0, 2.0, 2.0]),
        covariate_effects=[
            CovariateEffect((i, i), f"row_margin:{i}", DIAGONAL_SLOPE) for i in range(3)
        ],
        dispersion=500.0,
        seed=seed,
    )


def mixture_design() -> CovariateDesign:
    """Voting propensity of both rows depends on the female share."""
    return CovariateDesign((DesignEntry((0, 0), "row_margin:1"), DesignEntry((1, 0), "row_margin:1")))


def mixture_spec(n_units: int = 2000, seed: int = 0) -> GeneratorSpec:
    return GeneratorSpec(
        n_units=n_units,
        base_table=MIXTURE_TABLES[0],
        size_law=SizeLaw("uniform", 500, 1500),
        margin_law=MarginLaw("dirichlet", [20.0, 20.0]),
        dispersion=200.0,
        mixture=MixtureSpec(
            tables=MIXTURE_TABLES,
            weight_law=WeightLaw("logistic", intercept=-3.4, slope=4.0, source="row_margin:1"),
            per_row=True,
        ),
        seed=seed,
    )


def _two_by_two(uid: str, size: int, x2: float, start: float, end: float) -> UnitCounts:
    """Unit with row shares (1-x2, x2) and P(Y=2 | X=1), P(Y=2 | X=2) = start, end."""
    r1 = round(size * (1 - x2))
    r2 = size - r1
    n12 = round(r1 * start)
    n22 = round(r2 * end)
    if abs(n12 - r1 * start) > 1e-9 or abs(n22 - r2 * end) > 1e-9:
        raise SpecError(f"construction {uid} does not split into whole voters")
    return UnitCounts(uid, np.array([[r1 - n12, n12], [r2 - n22, n22]]))


def fig_units(name: str) -> list[UnitCounts]:
    """The four fixed 2 x 2 constructions.

    fig1a: parallel positive unit lines whose level falls with x, so the
    ecological slope is negative.  fig1b: common intercept, slopes growing
    with x, so the ecological slope exceeds every unit slope.  fig2a: five
    units, common slope 0.2 and intercept 0.7 - 0.5 x; the ecological
    points are collinear with slope -0.3.  fig2b: five units, common slope
    0.2 and intercept 0.3 + (x - 0.5)**2 at x symmetric about 0.5, so the
    biases cancel and the ecological slope equals 0.2.
    """
    if name == "fig1a":
        return [_two_by_two("a", 1000, 0.2, 0.6, 0.8), _two_by_two("b", 1000, 0.8, 0.1, 0.3)]
    if name == "fig1b":
        return [_two_by_two("a", 1000, 0.2, 0.3, 0.4), _two_by_two("b", 1000, 0.8, 0.3, 0.6)]
    xs = [0.1, 0.3, 0.5, 0.7, 0.9]
    if name == "fig2a":
        level = [0.7 - 0.5 * x for x in xs]
    elif name == "fig2b":
        level = [0.3 + (x - 0.5) ** 2 for x in xs]
    else:
        raise SpecError(f"unknown construction {name!r}")
    return [
        _two_by_two(f"u{k}", 1000, x, round(a, 12), round(a + 0.2, 12))
        for k, (x, a) in enumerate(zip(xs, level))
    ]


def get_scenario(name: str, n_units: int = 2000, seed: int = 0) -> Scenario:
    if name == "constant":
        return Scenario(name, constant_spec(n_units, seed), CovariateDesign(),
                        row_labels=("X1", "X2"), col_labels=("Y1", "Y2"))
    if name == "diagonal-covariate":
        return Scenario(name, diagonal_spec(n_units, seed), diagonal_design(3),
                        row_labels=("A", "B", "C"), col_labels=("A", "B", "C"))
    if name == "mixture":
        return Scenario(name, mixture_spec(n_units, seed), mixture_design(),
                        row_labels=("M", "F"), col_labels=("vote", "no-vote"))
    if name in CONSTRUCTED:
        return Scenario(name, units=fig_units(name), row_labels=("X1", "X2"), col_labels=("Y1", "Y2"))
    raise SpecError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
