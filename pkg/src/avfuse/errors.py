"""Shared exception types."""


class AvfuseError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(AvfuseError):
    """Tensor/layer shape incompatibility. Message names the layer and both shapes."""


class TensorFileError(AvfuseError):
    """Malformed tensor container file."""


class BadMagicError(TensorFileError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(TensorFileError):
    """File ended mid-entry (header or payload shorter than declared)."""


class ManifestError(AvfuseError):
    """Malformed or inconsistent dataset manifest."""


class DivergenceError(AvfuseError):
    """Training produced NaN/inf loss or gradients."""
