"""Exception hierarchy shared across the package.

Every error carries a stable ``code`` string so CLI output and sweep
summaries can be grepped without depending on exception class names.
"""


class TerrainSegError(Exception):
    code = "ERROR"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class InvalidLabelValueError(TerrainSegError):
    code = "INVALID_LABEL_VALUE"


class MissingMaskError(TerrainSegError):
    code = "MISSING_MASK"


class MissingImageError(TerrainSegError):
    code = "MISSING_IMAGE"


class EmptyDatasetError(TerrainSegError):
    code = "EMPTY_DATASET"


class CorruptFileError(TerrainSegError):
    code = "CORRUPT_FILE"


class ParseError(TerrainSegError):
    code = "PARSE_ERROR"


class InsufficientSourceError(TerrainSegError):
    code = "INSUFFICIENT_SOURCE"


class ZeroSampleError(TerrainSegError):
    code = "ZERO_SAMPLE"


class DuplicateSeedError(TerrainSegError):
    code = "DUPLICATE_SEED"


class AllPixelsIgnoredError(TerrainSegError):
    code = "ALL_PIXELS_IGNORED"


class ShapeMismatchError(TerrainSegError):
    code = "SHAPE_MISMATCH"


class DimensionMismatchError(TerrainSegError):
    code = "DIMENSION_MISMATCH"


class EmptyMatrixError(TerrainSegError):
    code = "EMPTY_MATRIX"


class WeightsNotFoundError(TerrainSegError):
    code = "WEIGHTS_NOT_FOUND"


class ConfigError(TerrainSegError):
    code = "CONFIG_ERROR"


class DivergedError(TerrainSegError):
    code = "DIVERGED"


class SplitViolationError(TerrainSegError):
    code = "SPLIT_VIOLATION"


class MissingAxisError(TerrainSegError):
    code = "MISSING_AXIS"
