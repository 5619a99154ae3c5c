"""Exception hierarchy.

Every error carries a short upper-case ``code`` so the CLI can print a
single greppable line (``ERROR <CODE>: message``).
"""


class LLMPredError(Exception):
    code = "LLMPRED_ERROR"


# core-data
class MissingFile(LLMPredError):
    code = "MISSING_FILE"


class ParseError(LLMPredError):
    code = "PARSE_ERROR"

    def __init__(self, row, col, cell=None):
        self.row = row
        self.col = col
        self.cell = cell
        super().__init__(f"non-numeric cell {cell!r} at row {row}, column {col}")


class EmptyDataset(LLMPredError):
    code = "EMPTY_DATASET"


class SeriesTooShort(LLMPredError):
    code = "SERIES_TOO_SHORT"


class DegenerateSeries(LLMPredError):
    code = "DEGENERATE_SERIES"


class DimensionMismatch(LLMPredError):
    code = "DIMENSION_MISMATCH"


# decomposition
class InvalidCutoff(LLMPredError):
    code = "INVALID_CUTOFF"


class DegenerateCosine(LLMPredError):
    code = "DEGENERATE_COSINE"


class AllCandidatesDegenerate(LLMPredError):
    code = "ALL_CANDIDATES_DEGENERATE"


# codec
class OutOfRange(LLMPredError):
    code = "OUT_OF_RANGE"


class NotANumber(LLMPredError):
    code = "NOT_A_NUMBER"


class BandViolation(LLMPredError):
    code = "BAND_VIOLATION"


class OffsetMismatch(LLMPredError):
    code = "OFFSET_MISMATCH"


# llm gateway
class Transport(LLMPredError):
    code = "TRANSPORT"

    def __init__(self, status, body=""):
        self.status = status
        self.body = body
        super().__init__(f"HTTP {status}: {body[:200]}")


class GatewayTimeout(LLMPredError):
    code = "TIMEOUT"


class BudgetExceeded(LLMPredError):
    code = "BUDGET_EXCEEDED"


class UnparseablePrompt(LLMPredError):
    code = "UNPARSEABLE_PROMPT"


# postprocess
class InsufficientData(LLMPredError):
    code = "INSUFFICIENT_DATA"


class NonFiniteLoss(LLMPredError):
    code = "NON_FINITE_LOSS"


class UntrainedModel(LLMPredError):
    code = "UNTRAINED_MODEL"


class DegeneratePrediction(LLMPredError):
    code = "DEGENERATE_PREDICTION"


# metrics / cli
class EmptySample(LLMPredError):
    code = "EMPTY_SAMPLE"


class ConfigError(LLMPredError):
    code = "CONFIG_ERROR"

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ReportIOError(LLMPredError):
    code = "IO_ERROR"
