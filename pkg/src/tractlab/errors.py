"""Exception hierarchy shared by every stage of the toolkit."""


class TractlabError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(TractlabError, ValueError):
    pass


class SchemaMismatchError(SchemaError):
    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"column {column!r} required by the schema is missing")


class ParseError(TractlabError, ValueError):
    def __init__(self, row, column, value):
        self.row, self.column, self.value = row, column, value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as a number")


class RangeError(TractlabError, ValueError):
    def __init__(self, row, column, value, message=None):
        self.row, self.column, self.value = row, column, value
        super().__init__(message or f"row {row}, column {column!r}: value {value!r} out of range")


class MissingValueError(TractlabError, ValueError):
    def __init__(self, row, column):
        self.row, self.column = row, column
        super().__init__(
            f"row {row}, column {column!r}: missing value (use --impute-mean to fill with the column mean)"
        )


class ParameterError(TractlabError, ValueError):
    pass


class DegenerateBinningError(TractlabError, ValueError):
    pass


class InsufficientDataError(TractlabError, ValueError):
    pass


class MissingLabelsError(TractlabError, ValueError):
    pass


class DegenerateClassError(TractlabError, ValueError):
    pass


class MissingClassError(TractlabError, ValueError):
    pass


class ShapeError(TractlabError, ValueError):
    pass


class EmptyMatrixError(TractlabError, ValueError):
    pass


class MissingCoverError(TractlabError, ValueError):
    pass


class TractabilityError(TractlabError, ValueError):
    pass


class EmptyStratumError(TractlabError, ValueError):
    pass


class ConfigError(TractlabError, ValueError):
    pass
