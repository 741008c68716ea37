"""Guided-inpainting exposure fusion toolkit."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CheckpointError,
    GifuseError,
    ImageIOError,
    NumericError,
    ValidationError,
)
from .imgcore import BinaryMask, FlowField, ImageRGB, ImageYUV  # noqa: F401
