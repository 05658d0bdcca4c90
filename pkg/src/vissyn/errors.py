"""Exception types shared across the toolkit."""


class VissynError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(VissynError, ValueError):
    """A value violates a documented invariant or file-format rule."""


class GenerationError(VissynError, RuntimeError):
    """Scene synthesis or perturbation could not produce a valid result."""


class BackendError(VissynError, RuntimeError):
    """A detector/reconstructor backend failed or broke protocol."""


class MetricsError(VissynError, ValueError):
    """A metric is undefined for the given counts."""
