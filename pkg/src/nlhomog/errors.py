"""Exception classes raised across the package."""


class HomogenizationError(Exception):
    """Base class for all errors raised by nlhomog."""


class ConfigurationError(HomogenizationError, ValueError):
    """Inconsistent model, grid or solver configuration."""


class DomainError(HomogenizationError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class ValidationError(HomogenizationError, ValueError):
    """Input data violates a structural requirement (e.g. negative kernel)."""


class ResolutionError(HomogenizationError):
    """The requested accuracy cannot be reached with the given resolution."""


class SolvabilityError(HomogenizationError):
    """A corrector right-hand side violates its compatibility condition."""


class NonConvergenceError(HomogenizationError):
    """A burn-in or decay-rate estimate failed to show contraction."""


class StepSizeError(HomogenizationError):
    """Explicit time step too large (positivity or stability lost)."""


class ContractError(HomogenizationError):
    """A precondition of the diffusion-approximation contract is not met."""


class EstimationError(HomogenizationError):
    """A statistical estimate is of insufficient quality."""


class MixingError(EstimationError):
    """Autocovariance tail does not decay within the available window."""


class TruncationError(HomogenizationError):
    """Solution mass leaks out of the truncated physical box."""


class DependencyError(HomogenizationError):
    """A required upstream quantity is missing."""
