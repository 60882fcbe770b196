"""Exception hierarchy. Every error raised by the package derives from DisganError."""


class DisganError(Exception):
    pass


class ShapeError(DisganError, ValueError):
    pass


class OddExtent(ShapeError):
    pass


class ShapeMismatch(ShapeError):
    pass


class ConfigError(DisganError, ValueError):
    pass


class DegenerateVolume(DisganError, ValueError):
    pass


class InvalidSize(DisganError, ValueError):
    pass


class InvalidSigma(DisganError, ValueError):
    pass


class InvalidScores(DisganError, ValueError):
    pass


class InvalidLoss(DisganError, ValueError):
    pass


class NonFiniteLoss(DisganError, FloatingPointError):
    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite loss term {term!r}: {value}")
        self.term = term
        self.value = value


class DegenerateReference(DisganError, ValueError):
    pass


class VolumeTooSmall(ShapeError):
    pass


class EmptyDataset(DisganError, ValueError):
    pass


class IncompatibleCheckpoint(DisganError):
    pass


class VolumeParseError(DisganError):
    """Malformed volume file. ``field`` names the header field at fault."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class UnsupportedFormat(VolumeParseError):
    pass


class BadMagic(VolumeParseError):
    pass


class TruncatedFile(VolumeParseError):
    pass


class UnsupportedDatatype(VolumeParseError):
    pass
