"""Optimal dividend barriers for a capital process absorbed at its cumulative dividends."""

from .barrier import (Barrier, BarrierCurve, SolutionClassification, barrier_inverse,
                      classification_sweep, field_F, find_d, integrate_barrier, minimal_barrier,
                      shoot_barrier, zeta)
from .errors import (DiagonalError, DivbarError, DomainError, IntegrationFailure,
                     MembershipViolation, NoConvergence, NonPositiveVolatility, NotFound,
                     ParameterError, StepFailure)
from .model import DiffusionSpec, FundamentalPair, generator_apply, make_fundamental
from .value import ResidualReport, ValueSurface, check_variational, value_ordering_check

__all__ = [
    "Barrier", "BarrierCurve", "SolutionClassification", "barrier_inverse", "classification_sweep",
    "field_F", "find_d", "integrate_barrier", "minimal_barrier", "shoot_barrier", "zeta",
    "DiagonalError", "DivbarError", "DomainError", "IntegrationFailure", "MembershipViolation",
    "NoConvergence", "NonPositiveVolatility", "NotFound", "ParameterError", "StepFailure",
    "DiffusionSpec", "FundamentalPair", "generator_apply", "make_fundamental",
    "ResidualReport", "ValueSurface", "check_variational", "value_ordering_check",
]
