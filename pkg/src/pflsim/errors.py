"""Exception hierarchy shared across the toolkit."""


class PflsimError(Exception):
    """Base class for all library errors."""


class ShapeError(PflsimError):
    """Matrix argument has the wrong shape or is not symmetric."""


class NotPSDError(PflsimError):
    """Symmetric matrix is not positive semi-definite (after any ridge)."""


class DomainError(PflsimError):
    """Scalar argument outside the mathematical domain of an operation."""


class ConvergenceError(PflsimError):
    """An iterative series or solver failed to converge."""


class ConfigError(PflsimError):
    """Invalid, inconsistent, or unknown configuration."""


class CalibrationError(PflsimError):
    """Noise calibration target unreachable within the search bracket."""


class EncodeError(PflsimError):
    """Payload cannot be encoded (e.g. non-finite values)."""
