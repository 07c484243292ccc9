"""Exception types shared across the package."""


class FftsrError(Exception):
    """Base class for all package errors."""


class ShapeError(FftsrError):
    """Operand shapes are incompatible with the requested operation."""


class AxisError(FftsrError):
    """A reduction axis is out of range for the operand."""


class DomainError(FftsrError):
    """A strict-mode elementwise op received an out-of-domain input."""


class ConfigError(FftsrError):
    """A run-config file or key is invalid."""


class ImageError(FftsrError):
    """Base class for image decode/encode/resample failures."""


class DecodeError(ImageError):
    """A byte stream could not be decoded as an image.

    ``offset`` is the byte position at which decoding failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(ImageError):
    """The image is syntactically valid but uses an unsupported variant."""


class TooSmallError(ImageError):
    """An image is too small for the requested operation."""


class CheckpointError(FftsrError):
    """A checkpoint file failed to load; names the failing section.

    ``section`` is one of: magic, version, config, tensor table, checksum.
    """

    def __init__(self, message, section):
        super().__init__(message)
        self.section = section


class OptimizerError(FftsrError):
    """An optimizer step was rejected (non-finite gradient)."""
