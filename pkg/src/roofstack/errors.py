"""Exception hierarchy shared by all pipeline modules."""


class RoofstackError(Exception):
    """Base class for every error raised by this package."""


class ParseError(RoofstackError):
    """Malformed GeoJSON document. Carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class FeatureError(RoofstackError):
    """A single GeoJSON feature violates the ingestion contract."""


class ChipError(RoofstackError):
    """Chip extraction failed for a building."""


class ChipCodecError(RoofstackError):
    """Chip PNG stream could not be decoded."""


class TensorFormatError(RoofstackError):
    """Tensor stream has a bad magic, truncation, or absurd dimensions."""


class DimensionError(RoofstackError):
    """Array shapes are incompatible with the requested operation."""


class ParameterError(RoofstackError):
    """An operation parameter is outside its documented range."""


class FoldError(RoofstackError):
    """Fold assignment is impossible for the given building set."""


class MetricError(RoofstackError):
    """Metric is undefined for the given input (for example, empty)."""


class DegenerateTargetError(RoofstackError):
    """Training targets contain fewer than two classes."""


class CapacityError(RoofstackError):
    """Synthetic map generation ran out of placement attempts."""
