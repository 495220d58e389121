"""Exception hierarchy.

Every error carries a stable ``code`` string; the command-line front end maps
the three top-level families onto exit codes (config 2, data 3, estimation 4).
"""


class AutoDMLError(Exception):
    code = "AUTODML_ERROR"
    exit_code = 1


class ConfigError(AutoDMLError):
    code = "CONFIG_ERROR"
    exit_code = 2


class InvalidFoldCount(ConfigError):
    code = "INVALID_FOLD_COUNT"


class UnsupportedFamily(ConfigError):
    code = "UNSUPPORTED_FAMILY"


class DataError(AutoDMLError):
    code = "DATA_ERROR"
    exit_code = 3


class MissingColumn(DataError):
    code = "MISSING_COLUMN"


class NonNumericCell(DataError):
    code = "NON_NUMERIC_CELL"

    def __init__(self, row, column, value):
        super().__init__(f"non-numeric cell {value!r} at row {row}, column {column!r}")
        self.row = row
        self.column = column
        self.value = value


class InvalidBinary(DataError):
    code = "INVALID_BINARY"


class InvalidTime(DataError):
    code = "INVALID_TIME"


class MissingCovariate(DataError):
    code = "MISSING_COVARIATE"


class EstimationError(AutoDMLError):
    code = "ESTIMATION_ERROR"
    exit_code = 4


class DimensionMismatch(EstimationError):
    code = "DIMENSION_MISMATCH"


class MissingNuisance(EstimationError):
    code = "MISSING_NUISANCE"


class DomainError(EstimationError):
    code = "DOMAIN_ERROR"


class NumericRange(EstimationError):
    code = "NUMERIC_RANGE"


class SingularSystem(EstimationError):
    code = "SINGULAR_SYSTEM"


class NewtonDivergence(EstimationError):
    code = "NEWTON_DIVERGENCE"


class NoBracket(EstimationError):
    code = "NO_BRACKET"


class NotPointwise(EstimationError):
    code = "NOT_POINTWISE"


class DegenerateStabilization(EstimationError):
    code = "DEGENERATE_STABILIZATION"
