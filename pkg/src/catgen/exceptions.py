"""Exception hierarchy shared across the package.

The CLI maps each family onto an exit code: configuration problems exit 2,
data problems exit 3 and estimation failures exit 4.
"""


class CatgenError(Exception):
    """Base class for all package errors."""

    exit_code = 4
    kind = "error"


class ConfigError(CatgenError, ValueError):
    """Invalid or incomplete run configuration."""

    exit_code = 2
    kind = "config"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DataError(CatgenError, ValueError):
    """Input data violate the cohort contract."""

    exit_code = 3
    kind = "data"

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SchemaError(DataError):
    """A referenced column is missing from the CSV header."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class InputError(CatgenError, ValueError):
    """Array arguments with wrong shape, dtype or non-finite entries."""

    exit_code = 4
    kind = "input"


class FitError(CatgenError, RuntimeError):
    """A model could not be fitted."""

    kind = "estimation"


class DegenerateWindowError(CatgenError, ArithmeticError):
    """Fewer than two distinct points carry kernel weight at a query point."""

    kind = "estimation"

    def __init__(self, message, count):
        super().__init__(message)
        self.count = count


class BandwidthError(CatgenError, RuntimeError):
    """Cross-validation could not score any candidate bandwidth."""

    kind = "estimation"
