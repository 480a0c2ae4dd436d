"""Exception types shared across the package."""


class KLCouplingError(Exception):
    """Base class for all package-specific errors."""


class FactorizationError(KLCouplingError):
    """A matrix expected to be symmetric positive definite was not."""


class DegenerateCoefficientError(KLCouplingError):
    """A physical coefficient became non-positive at a quadrature point."""


class RealizationError(KLCouplingError):
    """A random-field realization violated a positivity requirement."""


class DivergenceError(KLCouplingError):
    """A fixed-point iteration grew for several consecutive iterations."""


class IncompleteEvaluationError(KLCouplingError):
    """Quadrature-node values were missing from a projection input."""


class IncompatibleInputsError(KLCouplingError):
    """Two results built from different configurations were combined."""


class InsufficientDataError(KLCouplingError):
    """A diagnostic needed more iterations than the trace provides."""


class DecompositionError(KLCouplingError):
    """An eigenvalue decomposition failed to converge."""
