"""Exception hierarchy.

Each class carries the process exit code the command line maps it to:
1 for usage/configuration problems, 2 for data/format problems and 3 for
numeric failures.
"""


class ColdSEError(Exception):
    exit_code = 1


class InvalidParameterError(ColdSEError, ValueError):
    exit_code = 1


class ConfigurationError(ColdSEError):
    exit_code = 1


class ShapeError(ColdSEError, ValueError):
    exit_code = 2


class SeverityIndexError(ColdSEError, IndexError):
    exit_code = 1


class DegenerateSeverityError(ColdSEError, ValueError):
    """Raised when a formula would divide by sqrt(1 - alpha_t) ~ 0."""

    exit_code = 3


class DegenerateInputError(ColdSEError, ValueError):
    """Silent signals where a power ratio is required."""

    exit_code = 2


class FormatError(ColdSEError):
    exit_code = 2


class NumericError(ColdSEError, ArithmeticError):
    exit_code = 3
