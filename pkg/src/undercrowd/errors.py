"""Exception types; the CLI maps each to a distinct exit code."""


class UndercrowdError(Exception):
    exit_code = 1
    code = "error"


class SchemaError(UndercrowdError):
    """Input file does not match the expected column layout."""

    exit_code = 3
    code = "schema_mismatch"


class RecordError(UndercrowdError):
    """A single input record violates its field rules."""

    exit_code = 3
    code = "bad_record"

    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class CoverageError(UndercrowdError):
    """Auxiliary data (weather, calendar) does not cover required dates."""

    exit_code = 4
    code = "missing_coverage"

    def __init__(self, message, dates=()):
        self.dates = tuple(dates)
        super().__init__(message)


class ConvergenceError(UndercrowdError):
    exit_code = 5
    code = "non_convergence"


class DegenerateResponseError(UndercrowdError):
    """Response has a single class, so no model can be fitted."""

    exit_code = 6
    code = "degenerate_response"


class SeparationWarning(UserWarning):
    """Linear predictor diverges: the data are (quasi-)separated."""


class ExtrapolationWarning(UserWarning):
    pass
