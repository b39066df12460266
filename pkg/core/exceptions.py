"""
Error hierarchy for the lab. Every failure an operation reports derives from
BHKError so the CLI can turn it into a clean CommandError.
"""
from typing import Optional


class BHKError(Exception):
    """Base class for all lab errors."""


class ConfigurationError(BHKError, ValueError):
    """Invalid grid, preset or experiment configuration."""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


class PresetError(ConfigurationError):
    pass


class IndexRangeError(ConfigurationError):
    """Annulus or block index outside the grid's resolvable range."""


class TimeGridError(ConfigurationError):
    pass


class ExponentError(ConfigurationError):
    """Exponent arithmetic or embedding hypotheses violated."""

    def __init__(self, message: str, condition: Optional[str] = None):
        self.condition = condition
        super().__init__(message)


class AdmissibilityError(ExponentError):
    """A hypothesis of the well-posedness window fails; `code` names which."""

    def __init__(self, message: str, code: str):
        self.code = code
        super().__init__(message, condition=code)


class FieldError(BHKError, ValueError):
    """Wrong representation, component count or non-finite samples."""


class GridMismatchError(FieldError):
    pass


class FieldFormatError(FieldError):
    """Malformed BHF1 file."""

    def __init__(self, message: str, expected: Optional[int] = None, actual: Optional[int] = None):
        self.expected = expected
        self.actual = actual
        super().__init__(message)


class StepSizeError(BHKError):
    pass


class FitError(BHKError, ValueError):
    pass


class ExperimentError(BHKError):
    pass
