"""Exception hierarchy.

The CLI maps each family to its own exit code, so new errors should
subclass one of the three families below rather than ``DSMError`` itself.
"""


class DSMError(Exception):
    """Base class for all package errors."""


class ConfigError(DSMError):
    """Invalid or inconsistent configuration (bad tag, bad field value)."""


class DataError(DSMError):
    """Problems with the input data: missing columns, unparsable cells."""


class SchemaError(DataError):
    """A column named by the schema does not exist in the data."""


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DomainError(DataError):
    """Data are well formed but violate an estimator precondition."""


class NumericalError(DSMError):
    """Numerical failure: rank deficiency, degenerate columns, failed fits."""


class DegenerateColumnError(NumericalError):
    def __init__(self, message, column):
        super().__init__(message)
        self.column = column


class RankDeficiencyError(NumericalError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)
