"""Exception hierarchy shared across the package."""


class WindsrError(Exception):
    """Base class for all package errors."""


class ValidationError(WindsrError):
    """A value violates a documented precondition."""


class DimensionError(ValidationError):
    """Array shapes are incompatible with the requested operation."""


class FormatError(WindsrError):
    """An on-disk artifact (dataset, checkpoint, config) is malformed."""


class ConfigError(WindsrError):
    """An experiment configuration is invalid or has unknown keys."""


class NumericError(WindsrError):
    """A numerical operation left its valid domain (singular matrix, NaN loss, ...)."""


class TrainingDivergedError(NumericError):
    """Training loss became non-finite."""
