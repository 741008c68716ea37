"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI: ValidationError -> 1, everything else
derived from GifuseError -> 2.
"""


class GifuseError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GifuseError):
    """Bad input: wrong shapes, out-of-range values, malformed arguments."""


class ImageIOError(GifuseError):
    """Image or flow file could not be read or written."""

    def __init__(self, message, code="io_error"):
        super().__init__(message)
        self.code = code


class CheckpointError(GifuseError):
    """Missing, corrupt, or incompatible checkpoint."""


class NumericError(GifuseError):
    """Non-finite values encountered during training or inference."""
