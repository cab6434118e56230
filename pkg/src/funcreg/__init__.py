"""Functional principal components prediction in the functional linear model
``Y = a + <b, X> + eps`` on [0, 1]."""

from .flr import (
    Dataset,
    Deterministic,
    Fixed,
    IllConditionedComponent,
    RegimeParams,
    ScaledThreshold,
    SlopeFit,
    SpectralPath,
    Threshold,
    cutoff,
    estimate_g,
    fit,
    predict,
    rate_tau,
)
from .fpca import (
    CovOperator,
    EigenSystem,
    NumericFailure,
    PerturbationReport,
    eigendecompose,
    empirical_covariance,
    perturbation_report,
    population_covariance,
    sign_align,
)
from .funcgrid import (
    CoefVector,
    Grid,
    GridFunction,
    cosine_basis,
    inner_product,
    make_uniform_grid,
    project,
    synthesize,
)

__version__ = "0.1.0"
