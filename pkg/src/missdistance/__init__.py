"""Likelihood inference for satellite miss distance."""

from .errors import (
    ConjunctionError,
    DegenerateGeometry,
    Indeterminate,
    InvalidLosses,
    InvalidProfile,
    NonConvergence,
    NumericalFailure,
    OutOfRange,
    SingularInformation,
    ValidationError,
)
from .kernels import BACKEND

__version__ = "0.1.0"
