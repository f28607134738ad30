"""Composition over known backgrounds, spill-corrected blending, trimaps.

The plain composite is C = alpha * F + (1 - alpha) * B per channel. The
spill-corrected variant blends the network's predicted foreground color with
the original captured frame before compositing, in one of two modes that
differ in which source dominates where the matte is opaque.
"""
from __future__ import annotations

import enum

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError, NumericError
from .imagecore import (
    TRIMAP_FG,
    TRIMAP_UNKNOWN,
    AlphaMatte,
    ImageRGB,
    RgbaForeground,
    Trimap,
)


class SpillMode(enum.Enum):
    """How predicted and original colors mix inside the corrected composite.

    PREDICTED_WHEN_OPAQUE: out = a*(a*pred + (1-a)*orig) + (1-a)*bg, so fully
    opaque pixels take the predicted color. ORIGINAL_WHEN_OPAQUE swaps pred
    and orig, so opaque pixels keep the captured frame's color and the
    prediction only replaces colors toward the transparent side, which is the
    behavior wanted for de-spilling; it is the default everywhere.
    """

    PREDICTED_WHEN_OPAQUE = "predicted-when-opaque"
    ORIGINAL_WHEN_OPAQUE = "original-when-opaque"


DEFAULT_SPILL_MODE = SpillMode.ORIGINAL_WHEN_OPAQUE


def _check_same_size(what: str, *shapes: tuple) -> None:
    if len(set(shapes)) > 1:
        raise DimensionMismatchError(f"{what}: operand sizes differ: {shapes}")


def compose_arrays(
    fg_color: np.ndarray, alpha: np.ndarray, bg: np.ndarray
) -> np.ndarray:
    """Raw composite kernel on arrays: float64 math, clipped, cast to float32
    once. Shared so synthesized patches match recomposition bit for bit."""
    a = np.asarray(alpha, dtype=np.float64)[..., None]
    out = a * np.asarray(fg_color, dtype=np.float64) + (1.0 - a) * np.asarray(
        bg, dtype=np.float64
    )
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def compose(fg_color: ImageRGB, alpha: AlphaMatte, bg: ImageRGB) -> ImageRGB:
    """C = alpha * fg + (1 - alpha) * bg per channel."""
    _check_same_size(
        "compose",
        fg_color.data.shape[:2],
        alpha.data.shape,
        bg.data.shape[:2],
    )
    return ImageRGB(compose_arrays(fg_color.data, alpha.data, bg.data))


def compose_foreground(fg: RgbaForeground, bg: ImageRGB) -> ImageRGB:
    return compose(fg.color, fg.alpha, bg)


def compose_spill_corrected(
    predicted: RgbaForeground,
    original_frame: ImageRGB,
    bg: ImageRGB,
    mode: SpillMode = DEFAULT_SPILL_MODE,
) -> ImageRGB:
    """Composite with an alpha-weighted mix of predicted and captured colors.

    The predicted alpha always gates foreground vs background. Inside the
    foreground term, the two colors are mixed by alpha again; see SpillMode
    for which color wins at alpha = 1 in each mode.
    """
    _check_same_size(
        "compose_spill_corrected",
        predicted.color.data.shape[:2],
        predicted.alpha.data.shape,
        original_frame.data.shape[:2],
        bg.data.shape[:2],
    )
    if not isinstance(mode, SpillMode):
        raise NumericError(f"unknown spill mode: {mode!r}")
    a = predicted.alpha.data.astype(np.float64)[..., None]
    pred = predicted.color.data.astype(np.float64)
    orig = original_frame.data.astype(np.float64)
    if mode is SpillMode.PREDICTED_WHEN_OPAQUE:
        fg_mix = a * pred + (1.0 - a) * orig
    else:
        fg_mix = a * orig + (1.0 - a) * pred
    out = a * fg_mix + (1.0 - a) * bg.data.astype(np.float64)
    return ImageRGB(np.clip(out, 0.0, 1.0).astype(np.float32))


def trimap_from_alpha(alpha: AlphaMatte, dilation_radius: int = 10) -> Trimap:
    """Label pixels fg/bg/unknown; the unknown band is every semi-transparent
    pixel grown by a square structuring element of the given radius."""
    if dilation_radius < 0:
        raise NumericError(f"dilation_radius must be >= 0, got {dilation_radius}")
    a = alpha.data
    unknown = (a > 0.0) & (a < 1.0)
    if dilation_radius > 0 and unknown.any():
        size = 2 * dilation_radius + 1
        unknown = ndimage.binary_dilation(unknown, structure=np.ones((size, size)))
    labels = np.zeros(a.shape, dtype=np.uint8)
    labels[a == 1.0] = TRIMAP_FG
    labels[unknown] = TRIMAP_UNKNOWN
    return Trimap(labels)
