"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


class ShapeError(ValueError):
    """Array or grid shapes are incompatible with the operation."""


class NumericalError(FloatingPointError):
    """Non-finite values appeared during a sampling or training run."""

    def __init__(self, message: str, step: int | None = None, level: int | None = None):
        super().__init__(message)
        self.step = step
        self.level = level


class FileFormatError(ValueError):
    """A file exists but its contents are not in the expected format."""


class ConfigError(ValueError):
    """A run configuration is malformed or contains unknown keys."""
