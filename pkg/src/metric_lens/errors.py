"""Exception hierarchy for the whole package.

Every domain failure raises a distinct subclass of MetricLensError so that
callers (and the CLI, which maps them to exit code 1) can tell failure modes
apart without string matching.
"""


class MetricLensError(Exception):
    """Base class for all domain errors."""


# --- tensor file format -------------------------------------------------


class TensorFormatError(MetricLensError):
    """Base for malformed TNSR files."""


class BadMagic(TensorFormatError):
    pass


class UnsupportedVersion(TensorFormatError):
    pass


class UnsupportedDtype(TensorFormatError):
    pass


class BadHeader(TensorFormatError):
    """Header fields out of range (ndim not in 1..4, zero extent)."""


class TruncatedPayload(TensorFormatError):
    """File shorter (or longer) than the header promises."""


class NonFiniteData(TensorFormatError):
    """Tensor payload contains NaN or Inf."""


class IoFailure(MetricLensError):
    """Underlying OS error while reading or writing."""


# --- numeric operations -------------------------------------------------


class EmptyInput(MetricLensError):
    pass


class ShapeMismatch(MetricLensError):
    pass


class UnsupportedHead(MetricLensError):
    """Head contains a layer the linearizer cannot express as affine."""


class EmbeddingLengthMismatch(MetricLensError):
    pass


class OperatingPointMismatch(MetricLensError):
    """LinearizedHead was built for a different feature map."""


class PointOutOfRange(MetricLensError):
    pass


class DegenerateEmbedding(MetricLensError):
    """Embedding norm too small to normalize (|E| <= 1e-12)."""


# --- evaluation ---------------------------------------------------------


class EmptyMask(MetricLensError):
    """Thresholded activation map has no positive pixel."""


class CenterPixel(MetricLensError):
    """Aerial angle undefined at the exact image center."""


# --- retrieval / service ------------------------------------------------


class EmptyIndex(MetricLensError):
    pass


class UnknownId(MetricLensError):
    pass


class VariantUnsupported(MetricLensError):
    pass
