"""Exception hierarchy shared by all finslerlab modules."""


class FinslerError(Exception):
    """Base class for every error raised by finslerlab."""


class InvalidInputError(FinslerError, ValueError):
    pass


class MetricViolationError(FinslerError):
    pass


class DegenerateDirectionError(FinslerError, ValueError):
    pass


class DegenerateFlagError(FinslerError, ValueError):
    pass


class InvalidVolumeError(FinslerError, ValueError):
    pass


class InvalidParameterError(FinslerError, ValueError):
    pass


class OutOfDomainError(FinslerError, ValueError):
    pass


class UnsupportedDomainError(FinslerError, ValueError):
    pass


class UnreachableError(FinslerError):
    pass


class ZeroFieldError(FinslerError, ValueError):
    pass


class MeshQualityError(FinslerError):
    pass


class HypothesisUnmetError(FinslerError):
    pass


class ConfigError(FinslerError, ValueError):
    pass


class NumericFailureError(FinslerError, RuntimeError):
    """An iterative method failed to converge.

    ``residual`` carries the last residual norm and ``history`` any
    per-iteration diagnostics the caller recorded.
    """

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history


class DegenerateReferenceError(FinslerError, ValueError):
    """A reference vector vanished where a nonzero one is required."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell
