"""Exception hierarchy shared across the package."""


class CesRiskError(Exception):
    """Base class for all package errors."""


class CesDomainError(CesRiskError, ValueError):
    """A functional form was evaluated outside its domain."""


class DataError(CesRiskError, ValueError):
    """Malformed or invalid input data.

    ``row`` is 1-based and counts the header as row 1, matching what a
    spreadsheet shows.
    """

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ConfigError(CesRiskError, ValueError):
    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{message} [key: {key}]"
        super().__init__(message)


class RankDeficientError(CesRiskError, ArithmeticError):
    """Design or Jacobian matrix lacks full column rank."""

    def __init__(self, message, columns=()):
        self.columns = tuple(columns)
        super().__init__(message)


class EstimationError(CesRiskError, RuntimeError):
    """Every start of a multi-start search failed."""

    def __init__(self, message, failures=()):
        self.failures = list(failures)
        if self.failures:
            detail = "; ".join(f"start {i}: {why}" for i, why in self.failures)
            message = f"{message}: {detail}"
        super().__init__(message)


class StageError(CesRiskError, RuntimeError):
    """A stage of the three-stage procedure failed.

    ``partial`` carries whatever stages completed before the failure.
    """

    def __init__(self, stage, cause, partial=None):
        self.stage = stage
        self.cause = cause
        self.partial = partial
        super().__init__(f"stage {stage} failed: {cause}")
