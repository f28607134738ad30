"""Core raster types and PNG I/O.

All images are float32 in [0, 1], RGB channel order, shape (H, W, 3) for color
and (H, W) for mattes. Arrays inside the value types are copies with the
writeable flag cleared, so instances can be shared across threads safely.
PNG round trips are exact up to the 8- or 16-bit quantization grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import cv2
import numpy as np

from .errors import DimensionMismatchError, InputOutputError, NumericError

# Reference patch geometry: motion margins and tile borders are specified at a
# 320 px patch and scale proportionally for other sizes.
REFERENCE_PATCH = 320
REFERENCE_MARGIN = 50


def scaled_margin(patch_size: int, margin: int = REFERENCE_MARGIN) -> int:
    """Motion/loss margin in pixels for a given patch size (50 at 320)."""
    if patch_size <= 0:
        raise NumericError(f"patch_size must be positive, got {patch_size}")
    return int(round(margin * patch_size / REFERENCE_PATCH))


def _freeze(data: np.ndarray, ndim: int, what: str) -> np.ndarray:
    arr = np.array(data, dtype=np.float32)
    if arr.ndim != ndim:
        raise DimensionMismatchError(
            f"{what} must have {ndim} dimensions, got shape {arr.shape}"
        )
    if arr.size == 0:
        raise NumericError(f"{what} must not be empty, got shape {arr.shape}")
    if ndim == 3 and arr.shape[2] != 3:
        raise DimensionMismatchError(
            f"{what} must have 3 channels, got shape {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise NumericError(f"{what} contains non-finite values")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise NumericError(f"{what} values outside [0, 1]: min {lo}, max {hi}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ImageRGB:
    """An RGB image, float32 (H, W, 3) in [0, 1]."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "data", _freeze(self.data, 3, "ImageRGB"))

    @classmethod
    def from_array(cls, data: np.ndarray, clip: bool = False) -> "ImageRGB":
        arr = np.asarray(data, dtype=np.float32)
        if clip:
            arr = np.clip(arr, 0.0, 1.0)
        return cls(arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class AlphaMatte:
    """A single-channel opacity map, float32 (H, W) in [0, 1]."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "data", _freeze(self.data, 2, "AlphaMatte"))

    @classmethod
    def from_array(cls, data: np.ndarray, clip: bool = False) -> "AlphaMatte":
        arr = np.asarray(data, dtype=np.float32)
        if clip:
            arr = np.clip(arr, 0.0, 1.0)
        return cls(arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class RgbaForeground:
    """A foreground estimate: color plus matching opacity."""

    color: ImageRGB
    alpha: AlphaMatte

    def __post_init__(self):
        if not isinstance(self.color, ImageRGB):
            object.__setattr__(self, "color", ImageRGB(self.color))
        if not isinstance(self.alpha, AlphaMatte):
            object.__setattr__(self, "alpha", AlphaMatte(self.alpha))
        if (self.color.height, self.color.width) != (
            self.alpha.height,
            self.alpha.width,
        ):
            raise DimensionMismatchError(
                "color and alpha dimensions differ: "
                f"{self.color.data.shape[:2]} vs {self.alpha.data.shape}"
            )

    @property
    def height(self) -> int:
        return self.color.height

    @property
    def width(self) -> int:
        return self.color.width


# Trimap pixel codes.
TRIMAP_BG = 0
TRIMAP_FG = 1
TRIMAP_UNKNOWN = 2

# 8-bit gray levels used when a trimap is written as a PNG.
_TRIMAP_GRAY = {TRIMAP_BG: 0, TRIMAP_FG: 255, TRIMAP_UNKNOWN: 128}
_GRAY_TRIMAP = {v: k for k, v in _TRIMAP_GRAY.items()}


@dataclass(frozen=True)
class Trimap:
    """Per-pixel region labels: TRIMAP_BG, TRIMAP_FG, or TRIMAP_UNKNOWN."""

    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.labels, dtype=np.uint8)
        if arr.ndim != 2 or arr.size == 0:
            raise DimensionMismatchError(
                f"Trimap labels must be a non-empty 2-d array, got shape {arr.shape}"
            )
        bad = ~np.isin(arr, (TRIMAP_BG, TRIMAP_FG, TRIMAP_UNKNOWN))
        if bad.any():
            raise NumericError("Trimap labels must be 0 (bg), 1 (fg), or 2 (unknown)")
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


LoadedImage = Union[ImageRGB, AlphaMatte, RgbaForeground]


def make_checkerboard(
    width: int,
    height: int,
    cell: int,
    color_a: Sequence[float],
    color_b: Sequence[float],
) -> ImageRGB:
    """Checkerboard with color_a on cells where (x//cell + y//cell) is even."""
    if width <= 0 or height <= 0:
        raise NumericError(f"checkerboard size must be positive, got {width}x{height}")
    if cell <= 0:
        raise NumericError(f"checkerboard cell must be positive, got {cell}")
    ca = np.asarray(color_a, dtype=np.float32).reshape(3)
    cb = np.asarray(color_b, dtype=np.float32).reshape(3)
    ys, xs = np.mgrid[0:height, 0:width]
    even = ((xs // cell) + (ys // cell)) % 2 == 0
    out = np.where(even[..., None], ca, cb).astype(np.float32)
    return ImageRGB(out)


def _decode(raw: np.ndarray, path: Path) -> LoadedImage:
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise InputOutputError(f"{path}: unsupported PNG sample type {raw.dtype}")
    arr = (raw.astype(np.float64) / scale).astype(np.float32)
    if arr.ndim == 2:
        return AlphaMatte(arr)
    if arr.ndim == 3 and arr.shape[2] == 3:
        return ImageRGB(arr[:, :, ::-1])  # BGR -> RGB
    if arr.ndim == 3 and arr.shape[2] == 4:
        rgb = arr[:, :, 2::-1]  # BGRA -> RGB
        return RgbaForeground(ImageRGB(rgb), AlphaMatte(arr[:, :, 3]))
    raise InputOutputError(f"{path}: unsupported PNG layout, shape {raw.shape}")


def load_png(path: Union[str, Path]) -> LoadedImage:
    """Load a PNG as ImageRGB, AlphaMatte (grayscale), or RgbaForeground.

    8-bit samples map k -> k/255, 16-bit k -> k/65535. Failure to read or
    decode raises InputOutputError naming the path.
    """
    p = Path(path)
    raw = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
    if raw is None:
        if not p.exists():
            raise InputOutputError(f"{p}: file not found")
        raise InputOutputError(f"{p}: not a decodable PNG")
    return _decode(raw, p)


def load_trimap_png(path: Union[str, Path]) -> Trimap:
    """Load a trimap PNG written by save_png (gray levels 0/128/255)."""
    p = Path(path)
    raw = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise InputOutputError(f"{p}: file not found or not a decodable PNG")
    if raw.ndim != 2 or raw.dtype != np.uint8:
        raise InputOutputError(f"{p}: trimap PNG must be 8-bit grayscale")
    levels = np.unique(raw)
    if not all(int(v) in _GRAY_TRIMAP for v in levels):
        raise InputOutputError(f"{p}: trimap gray levels must be 0, 128, or 255")
    labels = np.zeros(raw.shape, dtype=np.uint8)
    for gray, code in _GRAY_TRIMAP.items():
        labels[raw == gray] = code
    return Trimap(labels)


def _quantize(data: np.ndarray, bit_depth: int) -> np.ndarray:
    if bit_depth == 8:
        return np.rint(data.astype(np.float64) * 255.0).astype(np.uint8)
    if bit_depth == 16:
        return np.rint(data.astype(np.float64) * 65535.0).astype(np.uint16)
    raise InputOutputError(f"bit_depth must be 8 or 16, got {bit_depth}")


def save_png(
    image: Union[LoadedImage, Trimap], path: Union[str, Path], bit_depth: int = 8
) -> None:
    """Write a PNG. RGB and RGBA are channel-swapped for the encoder; mattes
    become grayscale; trimaps become 8-bit gray 0/128/255."""
    p = Path(path)
    if isinstance(image, Trimap):
        gray = np.zeros(image.labels.shape, dtype=np.uint8)
        for code, level in _TRIMAP_GRAY.items():
            gray[image.labels == code] = level
        payload = gray
    elif isinstance(image, RgbaForeground):
        q = _quantize(
            np.dstack([image.color.data, image.alpha.data[..., None]]), bit_depth
        )
        payload = np.dstack([q[:, :, 2::-1], q[:, :, 3]])  # RGBA -> BGRA
    elif isinstance(image, ImageRGB):
        payload = _quantize(image.data, bit_depth)[:, :, ::-1]  # RGB -> BGR
    elif isinstance(image, AlphaMatte):
        payload = _quantize(image.data, bit_depth)
    else:
        raise InputOutputError(f"cannot save object of type {type(image).__name__}")
    p.parent.mkdir(parents=True, exist_ok=True)
    ok = cv2.imwrite(str(p), payload)
    if not ok:
        raise InputOutputError(f"{p}: PNG write failed")
