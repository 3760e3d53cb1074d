"""Exception hierarchy shared by the package."""


class NfardError(Exception):
    """Base class for every error raised by nfard."""


class DimensionError(NfardError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class NumericalError(NfardError, ArithmeticError):
    """A factorization failed to converge or produced non-finite values."""


class TrainingError(NfardError):
    """Training diverged (the loss became non-finite)."""


class ParseError(NfardError, ValueError):
    """A model, dataset, matrix or manifest file is malformed."""


class ConfigError(NfardError, ValueError):
    """Invalid detection, training or zoo configuration."""
