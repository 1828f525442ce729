"""Covariance-structure SEM: specification, implied covariance, ML fitting."""

from .covariance import (
    Discrepancy,
    ModelMatrices,
    NotPositiveDefinite,
    ParameterVector,
    implied_covariance,
    ml_discrepancy,
    unpack,
)
from .estimate import (
    BoundaryWarning,
    EstimationError,
    FitOptions,
    FitResult,
    NotPositiveDefiniteSample,
    SampleMoments,
    UnidentifiedModel,
    fit,
    fit_statistics,
    standard_errors,
    standardize,
)
from .model import Block, ModelSpec, Param, SpecError, load_model, parse_model
