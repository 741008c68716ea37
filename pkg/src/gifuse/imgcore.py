"""Core image containers, color conversion, and image/mask/flow file I/O.

Images are stored as float64 arrays in [0,1]; 8/16-bit quantization only
happens at the PNG boundary. YUV is BT.601 full-range with zero-centered
chroma (the conversion matrix below is the single source of truth).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import ImageIOError, ValidationError

# BT.601 full-range RGB -> YUV (JPEG YCbCr with chroma centered at 0).
RGB_TO_YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
YUV_TO_RGB = np.linalg.inv(RGB_TO_YUV)

FLOW_MAGIC = b"FLO1"


@dataclass(frozen=True)
class ImageRGB:
    """H×W×3 image, values in [0,1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValidationError(f"ImageRGB expects H×W×3, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("ImageRGB contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("ImageRGB values must lie in [0,1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class ImageYUV:
    """Luminance in [0,1] plus zero-centered chroma in [-0.5,0.5]."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if not (y.ndim == 2 and y.shape == u.shape == v.shape):
            raise ValidationError("ImageYUV planes must share an H×W shape")
        for name, plane in (("Y", y), ("U", u), ("V", v)):
            if not np.all(np.isfinite(plane)):
                raise ValidationError(f"ImageYUV {name} contains non-finite values")
        if y.min() < -1e-9 or y.max() > 1.0 + 1e-9:
            raise ValidationError("Y must lie in [0,1]")
        if max(np.abs(u).max(), np.abs(v).max()) > 0.5 + 1e-9:
            raise ValidationError("chroma must lie in [-0.5,0.5]")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class BinaryMask:
    """H×W mask; 1 = occluded / invalid."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(f"BinaryMask expects H×W, got {arr.shape}")
        if not np.all((arr == 0.0) | (arr == 1.0)):
            raise ValidationError("BinaryMask values must be exactly 0 or 1")
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class FlowField:
    """H×W×2 dense displacements (dx, dy) in pixels."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ValidationError(f"FlowField expects H×W×2, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("FlowField contains non-finite values")
        limit = max(arr.shape[0], arr.shape[1])
        if np.abs(arr).max() > limit:
            raise ValidationError("flow magnitude exceeds image extent")
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


def rgb_to_yuv(img: ImageRGB) -> ImageYUV:
    yuv = img.data @ RGB_TO_YUV.T
    return ImageYUV(y=yuv[..., 0], u=yuv[..., 1], v=yuv[..., 2])


def yuv_to_rgb(img: ImageYUV) -> ImageRGB:
    yuv = np.stack([img.y, img.u, img.v], axis=-1)
    rgb = yuv @ YUV_TO_RGB.T
    return ImageRGB(np.clip(rgb, 0.0, 1.0))


def luminance(img: ImageRGB) -> np.ndarray:
    """Y plane only, without building the chroma planes."""
    return img.data @ RGB_TO_YUV[0]


def load_image(path) -> ImageRGB:
    if not os.path.exists(path):
        raise ImageIOError(f"file not found: {path}", code="file_not_found")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(f"unsupported or corrupt image: {path}", code="unsupported_format")
    if raw.ndim == 2:
        raw = raw[:, :, None].repeat(3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageIOError(f"unsupported bit depth {raw.dtype} in {path}", code="bad_bit_depth")
    rgb = raw[:, :, ::-1].astype(np.float64) / scale
    return ImageRGB(rgb)


def save_image(img: ImageRGB, path, bit_depth: int = 8) -> None:
    if bit_depth == 8:
        quant = np.round(img.data * 255.0).astype(np.uint8)
    elif bit_depth == 16:
        quant = np.round(img.data * 65535.0).astype(np.uint16)
    else:
        raise ValidationError(f"bit_depth must be 8 or 16, got {bit_depth}")
    bgr = quant[:, :, ::-1]
    if not cv2.imwrite(str(path), bgr):
        raise ImageIOError(f"failed to write {path}", code="write_failed")


def load_mask(path) -> BinaryMask:
    if not os.path.exists(path):
        raise ImageIOError(f"file not found: {path}", code="file_not_found")
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise ImageIOError(f"unsupported or corrupt mask: {path}", code="unsupported_format")
    return BinaryMask((raw.astype(np.float64) >= 128).astype(np.float64))


def save_mask(mask: BinaryMask, path) -> None:
    if not cv2.imwrite(str(path), (mask.data * 255.0).astype(np.uint8)):
        raise ImageIOError(f"failed to write {path}", code="write_failed")


def resize_mask(mask: BinaryMask, out_h: int, out_w: int) -> BinaryMask:
    """Bilinear resize followed by a 0.5 threshold; output stays binary."""
    if out_h < 1 or out_w < 1:
        raise ValidationError("resize_mask target must be at least 1×1")
    soft = cv2.resize(
        mask.data.astype(np.float32), (out_w, out_h), interpolation=cv2.INTER_LINEAR
    )
    return BinaryMask((soft >= 0.5).astype(np.float64))


def save_flow(flow: FlowField, path) -> None:
    h, w = flow.height, flow.width
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(flow.data.astype("<f4").tobytes())


def load_flow(path) -> FlowField:
    if not os.path.exists(path):
        raise ImageIOError(f"file not found: {path}", code="file_not_found")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FLOW_MAGIC:
            raise ImageIOError(f"bad flow magic in {path}", code="unsupported_format")
        header = fh.read(8)
        if len(header) != 8:
            raise ImageIOError(f"truncated flow header in {path}", code="corrupt_flow")
        h, w = struct.unpack("<II", header)
        payload = fh.read(h * w * 2 * 4)
        if len(payload) != h * w * 2 * 4:
            raise ImageIOError(f"truncated flow payload in {path}", code="corrupt_flow")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, 2).astype(np.float64)
    return FlowField(data)
