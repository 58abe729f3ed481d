"""Taxonomy-structured penalized GLMs.

Coefficients are factored along taxonomic lineages into per-taxon scales
and per-covariate effects; penalizing both yields group-aware selection at
every level of the hierarchy with a single tuning parameter. The package
provides the decomposition machinery, an adaptive-reweighting solver,
cross-validation and metric tooling, a correlated-design simulation
harness, and a command-line interface.
"""

from .decompose import (
    Decomposition,
    DecompositionError,
    compose,
    partial_inverse,
    penalty_decomposed,
    penalty_weighted,
    weights,
)
from .glm import GAUSSIAN, LOGIT, Dataset, gradient, log_likelihood, predict
from .sim import SimConfig, desk_config, full_config, gen_replicate, run_experiment
from .solver import (
    PhiLassoFit,
    SolverOptions,
    phi_lasso_fit,
    phi_lasso_path,
    soft_threshold,
    weighted_lasso,
)
from .taxonomy import (
    Lineage,
    Taxon,
    Taxonomy,
    TaxonomyError,
    balanced_taxonomy,
    lineages,
    parse_taxonomy,
    singleton_taxonomy,
    validate,
)
from .tuning import (
    CvResult,
    PerformanceRecord,
    SelectionSummary,
    auc,
    brier,
    estimation_errors,
    kfold_cv,
    lambda_grid,
    loo_cv,
    selection_summary,
    support_metrics,
    validation_tune,
)

__version__ = "0.1.0"
