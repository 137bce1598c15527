"""Exception hierarchy shared across the package."""


class GvtError(Exception):
    pass


class DimensionError(GvtError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(GvtError, ValueError):
    """A configuration value violates an invariant."""


class ContractError(GvtError, RuntimeError):
    """A caller broke a precondition (non-scalar backward, asymmetric input, ...)."""


class NumericError(GvtError, ArithmeticError):
    """NaN/Inf produced, or an iterative method failed to converge."""


class IngestionError(GvtError, OSError):
    """A dataset file or directory is missing or unreadable."""


class FormatError(GvtError, ValueError):
    """A binary file does not match its declared layout."""
