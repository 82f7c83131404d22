"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, I/O errors -> 3,
NumericError -> 4.
"""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class ShapeError(ValueError):
    """Tensor arguments have incompatible shapes."""


class NumericError(RuntimeError):
    """A computation produced non-finite values."""


class ImageIOError(IOError):
    """Base class for image decoding failures."""


class ImageHeaderError(ImageIOError):
    """Malformed or unsupported image header."""


class ImagePayloadError(ImageIOError):
    """Pixel payload is truncated or inconsistent with the header."""


class ImageDepthError(ImageIOError):
    """Unsupported sample bit depth."""


class CheckpointError(IOError):
    """Base class for checkpoint file failures."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the expected magic bytes."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint ended before all declared payload was read."""
