"""Voter-transition estimation from aggregated election data, with synthetic truth."""

__version__ = "0.1.0"

from .errors import VoteTransError
from .genesis import GeneratorSpec, generate, generate_mixture
from .goodman import TransitionEstimate, fit_goodman, simplex_project
from .logit import (
    CovariateDesign,
    DesignEntry,
    LogitModel,
    OptimizerOptions,
    fit_logit_ols,
    fit_logit_wls,
    predicted_shares,
    transition_probs,
)
from .seam import adjust_to_margins, adjusted_overall
from .tables import (
    UnitCounts,
    UnitMargins,
    accounting_residual,
    aggregate_units,
    margins_of,
)
from .verdict import fit_individual_logistic, reconstruct_overall, score

__all__ = [
    "VoteTransError",
    "GeneratorSpec",
    "generate",
    "generate_mixture",
    "TransitionEstimate",
    "fit_goodman",
    "simplex_project",
    "CovariateDesign",
    "DesignEntry",
    "LogitModel",
    "OptimizerOptions",
    "fit_logit_ols",
    "fit_logit_wls",
    "predicted_shares",
    "transition_probs",
    "adjust_to_margins",
    "adjusted_overall",
    "UnitCounts",
    "UnitMargins",
    "accounting_residual",
    "aggregate_units",
    "margins_of",
    "fit_individual_logistic",
    "reconstruct_overall",
    "score",
]
