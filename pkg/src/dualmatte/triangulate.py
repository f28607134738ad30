"""Exact matting from two frames captured over two known backings.

With C_j = alpha*F + (1-alpha)*B_j for j in {1, 2}, the least-squares
transparency over the three channels is

    1 - alpha = <c1 - c2, b1 - b2> / ||b1 - b2||^2

clamped to [0, 1], and the foreground color is recovered by inverting the
composite in each frame and averaging. Requires the backings to actually
differ; near-equal backings are rejected rather than amplified.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .errors import DegenerateBackingError, DimensionMismatchError
from .imagecore import AlphaMatte, ImageRGB, RgbaForeground

# Minimum squared backing separation before the solve is considered unstable.
MIN_BACKING_SEPARATION_SQ = 1e-6

# Below this alpha the foreground color division is meaningless; emit black.
ALPHA_MIN = 1e-3

Backing = Union[ImageRGB, Sequence[float]]


def _backing_array(backing: Backing, height: int, width: int) -> np.ndarray:
    """Normalize a constant color or per-pixel backing to (H, W, 3) float64."""
    if isinstance(backing, ImageRGB):
        if backing.data.shape[:2] != (height, width):
            raise DimensionMismatchError(
                f"backing size {backing.data.shape[:2]} does not match "
                f"frame size {(height, width)}"
            )
        return backing.data.astype(np.float64)
    arr = np.asarray(backing, dtype=np.float64).reshape(3)
    return np.broadcast_to(arr, (height, width, 3))


def _solve(
    c1: np.ndarray,
    c2: np.ndarray,
    b1: np.ndarray,
    b2: np.ndarray,
    alpha_min: float,
    min_sep_sq: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized solve on float64 (..., 3) arrays; returns (alpha, fg)."""
    db = b1 - b2
    sep = np.sum(db * db, axis=-1)
    if np.any(sep < min_sep_sq):
        bad = np.argwhere(sep < min_sep_sq)
        where = tuple(int(v) for v in bad[0])
        raise DegenerateBackingError(
            f"backing separation ||b1-b2||^2 = {float(sep[tuple(bad[0])]):.3g} "
            f"below {min_sep_sq:g} at index {where}"
        )
    transparency = np.sum((c1 - c2) * db, axis=-1) / sep
    transparency = np.clip(transparency, 0.0, 1.0)
    alpha = 1.0 - transparency
    t = transparency[..., None]
    numer = (c1 - t * b1) + (c2 - t * b2)
    safe_alpha = np.where(alpha > alpha_min, alpha, 1.0)
    fg = numer / (2.0 * safe_alpha[..., None])
    fg = np.where((alpha > alpha_min)[..., None], fg, 0.0)
    return alpha, np.clip(fg, 0.0, 1.0)


def triangulate_pixel(
    c1: Sequence[float],
    c2: Sequence[float],
    b1: Sequence[float],
    b2: Sequence[float],
    alpha_min: float = ALPHA_MIN,
    min_backing_separation_sq: float = MIN_BACKING_SEPARATION_SQ,
) -> tuple[float, tuple[float, float, float]]:
    """Solve one pixel; returns (alpha, foreground_rgb)."""
    arrs = [np.asarray(v, dtype=np.float64).reshape(3) for v in (c1, c2, b1, b2)]
    alpha, fg = _solve(*arrs, alpha_min=alpha_min, min_sep_sq=min_backing_separation_sq)
    return float(alpha), tuple(float(v) for v in fg)


def triangulate_frame(
    frame1: ImageRGB,
    frame2: ImageRGB,
    backing1: Backing,
    backing2: Backing,
    alpha_min: float = ALPHA_MIN,
    min_backing_separation_sq: float = MIN_BACKING_SEPARATION_SQ,
) -> RgbaForeground:
    """Solve a full frame pair over known backings.

    Backings may be constant colors or per-pixel plates of the frame size.
    The solve runs in float64 and the result is cast to float32 once.
    """
    if frame1.data.shape != frame2.data.shape:
        raise DimensionMismatchError(
            f"frame sizes differ: {frame1.data.shape} vs {frame2.data.shape}"
        )
    h, w = frame1.height, frame1.width
    b1 = _backing_array(backing1, h, w)
    b2 = _backing_array(backing2, h, w)
    alpha, fg = _solve(
        frame1.data.astype(np.float64),
        frame2.data.astype(np.float64),
        b1,
        b2,
        alpha_min=alpha_min,
        min_sep_sq=min_backing_separation_sq,
    )
    return RgbaForeground(
        ImageRGB(fg.astype(np.float32)), AlphaMatte(alpha.astype(np.float32))
    )
