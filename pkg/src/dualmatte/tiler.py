"""Tiled full-frame inference with overlap blending.

Frames are covered by fixed-size patches on a regular stride; only each
patch's central inner region contributes to the output, weighted so that
overlapping contributions sum to exactly 1 everywhere (ramped linearly
across overlap bands, flat 1 elsewhere). The first and last inner regions
per axis extend to the frame edges, and the last patch per axis is clamped
so it never leaves the frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import DimensionMismatchError, NumericError
from .imagecore import AlphaMatte, ImageRGB, RgbaForeground, scaled_margin

PredictFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class TilePlacement:
    """One patch: its origin and its effective inner rectangle (frame coords)."""

    origin_x: int
    origin_y: int
    inner_x0: int
    inner_y0: int
    inner_x1: int
    inner_y1: int


@dataclass
class TileLayout:
    """Tile grid for one frame size, with separable blend weights.

    axis_weights_x/y hold one float64 weight vector per tile column/row,
    aligned to each tile's effective inner interval; the 2-d blend map of a
    tile is their outer product (see tile_weight). Per pixel these maps sum
    to exactly 1 by construction.
    """

    frame_width: int
    frame_height: int
    patch_size: int
    inner_size: int
    inner_overlap: int
    border: int
    stride: int
    grid_cols: int
    grid_rows: int
    tiles: tuple[TilePlacement, ...]
    axis_weights_x: tuple[np.ndarray, ...]
    axis_weights_y: tuple[np.ndarray, ...]

    def tile_weight(self, index: int) -> np.ndarray:
        """2-d blend weights for tiles[index], shaped like its inner rect."""
        iy, ix = divmod(index, self.grid_cols)
        return self.axis_weights_y[iy][:, None] * self.axis_weights_x[ix][None, :]


def _axis_origins(length: int, patch: int, stride: int) -> list[int]:
    n = math.ceil((length - patch) / stride) + 1
    origins: list[int] = []
    for i in range(n):
        o = min(i * stride, length - patch)
        if origins and o <= origins[-1]:
            break
        origins.append(o)
    return origins


def _axis_plan(
    length: int, patch: int, border: int, inner: int, stride: int
) -> tuple[list[int], list[tuple[int, int]], list[np.ndarray]]:
    origins = _axis_origins(length, patch, stride)
    n = len(origins)
    bounds = []
    for i, o in enumerate(origins):
        a = 0 if i == 0 else o + border
        b = length if i == n - 1 else o + border + inner
        bounds.append((a, b))
    raws = []
    for a, b in bounds:
        x = np.arange(a, b, dtype=np.float64)
        raws.append(np.minimum(x - a + 1.0, float(b) - x))
    total = np.zeros(length, dtype=np.float64)
    for (a, b), r in zip(bounds, raws):
        total[a:b] += r
    weights = [r / total[a:b] for (a, b), r in zip(bounds, raws)]
    return origins, bounds, weights


def plan_tiles(
    frame_width: int,
    frame_height: int,
    patch_size: int = 320,
    inner_size: Optional[int] = None,
    inner_overlap: Optional[int] = None,
) -> TileLayout:
    """Lay out the tile grid for a frame.

    Defaults scale with the patch: a 320 patch uses a 220 inner region
    (border 50) with inner regions overlapping by 50, i.e. stride 170.
    """
    if inner_size is None:
        inner_size = patch_size - 2 * scaled_margin(patch_size)
    if inner_overlap is None:
        inner_overlap = scaled_margin(patch_size)
    if patch_size <= 0:
        raise NumericError(f"patch_size must be positive, got {patch_size}")
    if frame_width < patch_size or frame_height < patch_size:
        raise NumericError(
            f"frame {frame_width}x{frame_height} is smaller than the "
            f"{patch_size} patch; pad the frame or use a smaller patch"
        )
    if not 0 < inner_size <= patch_size or (patch_size - inner_size) % 2 != 0:
        raise NumericError(
            f"inner_size {inner_size} must be in (0, {patch_size}] and leave "
            "an even border"
        )
    if not 0 <= inner_overlap < inner_size:
        raise NumericError(
            f"inner_overlap {inner_overlap} must be in [0, {inner_size})"
        )
    border = (patch_size - inner_size) // 2
    stride = inner_size - inner_overlap
    ox, bx, wx = _axis_plan(frame_width, patch_size, border, inner_size, stride)
    oy, by, wy = _axis_plan(frame_height, patch_size, border, inner_size, stride)
    tiles = []
    for iy in range(len(oy)):
        for ix in range(len(ox)):
            tiles.append(
                TilePlacement(
                    origin_x=ox[ix],
                    origin_y=oy[iy],
                    inner_x0=bx[ix][0],
                    inner_y0=by[iy][0],
                    inner_x1=bx[ix][1],
                    inner_y1=by[iy][1],
                )
            )
    return TileLayout(
        frame_width=frame_width,
        frame_height=frame_height,
        patch_size=patch_size,
        inner_size=inner_size,
        inner_overlap=inner_overlap,
        border=border,
        stride=stride,
        grid_cols=len(ox),
        grid_rows=len(oy),
        tiles=tuple(tiles),
        axis_weights_x=tuple(wx),
        axis_weights_y=tuple(wy),
    )


def fuse(layout: TileLayout, tile_outputs: Iterable[np.ndarray]) -> np.ndarray:
    """Blend per-tile outputs (each patch-sized) into one frame-sized array.

    Accumulates in float64 in fixed tile order; accepts (P, P) or (P, P, C)
    outputs and returns (H, W[, C]).
    """
    acc: Optional[np.ndarray] = None
    count = 0
    p = layout.patch_size
    for index, out in enumerate(tile_outputs):
        if index >= len(layout.tiles):
            raise DimensionMismatchError(
                f"fuse: got more tile outputs than the {len(layout.tiles)} planned"
            )
        tile = layout.tiles[index]
        arr = np.asarray(out, dtype=np.float64)
        if arr.shape[:2] != (p, p):
            raise DimensionMismatchError(
                f"fuse: tile output {index} has shape {arr.shape}, expected "
                f"({p}, {p}[, C])"
            )
        if acc is None:
            acc = np.zeros(
                (layout.frame_height, layout.frame_width) + arr.shape[2:],
                dtype=np.float64,
            )
        w = layout.tile_weight(index)
        if arr.ndim == 3:
            w = w[..., None]
        ry0, ry1 = tile.inner_y0 - tile.origin_y, tile.inner_y1 - tile.origin_y
        rx0, rx1 = tile.inner_x0 - tile.origin_x, tile.inner_x1 - tile.origin_x
        acc[tile.inner_y0 : tile.inner_y1, tile.inner_x0 : tile.inner_x1] += (
            arr[ry0:ry1, rx0:rx1] * w
        )
        count += 1
    if count != len(layout.tiles):
        raise DimensionMismatchError(
            f"fuse: got {count} tile outputs, expected {len(layout.tiles)}"
        )
    assert acc is not None
    return acc


def infer_frame_pair(
    predict_fn: PredictFn,
    patch_size: int,
    frame1: ImageRGB,
    frame2: ImageRGB,
    inner_size: Optional[int] = None,
    inner_overlap: Optional[int] = None,
) -> tuple[RgbaForeground, RgbaForeground]:
    """Run a patch predictor over a full frame pair and blend the outputs.

    predict_fn maps two (P, P, 3) float32 patches to two (P, P, 4) RGBA
    arrays. Both frames' predictions are fused in one pass; results are
    clipped to [0, 1].
    """
    if frame1.data.shape != frame2.data.shape:
        raise DimensionMismatchError(
            f"frame sizes differ: {frame1.data.shape} vs {frame2.data.shape}"
        )
    layout = plan_tiles(
        frame1.width, frame1.height, patch_size, inner_size, inner_overlap
    )

    def outputs():
        p = layout.patch_size
        for tile in layout.tiles:
            sl = np.s_[
                tile.origin_y : tile.origin_y + p, tile.origin_x : tile.origin_x + p
            ]
            out1, out2 = predict_fn(frame1.data[sl], frame2.data[sl])
            o1, o2 = np.asarray(out1), np.asarray(out2)
            if o1.shape != (p, p, 4) or o2.shape != (p, p, 4):
                raise DimensionMismatchError(
                    f"predictor returned shapes {o1.shape}/{o2.shape}, "
                    f"expected ({p}, {p}, 4); model patch size may not match "
                    f"the tile layout"
                )
            yield np.concatenate([o1, o2], axis=2)

    fused = np.clip(fuse(layout, outputs()), 0.0, 1.0).astype(np.float32)

    def wrap(block: np.ndarray) -> RgbaForeground:
        return RgbaForeground(
            ImageRGB(block[:, :, :3]), AlphaMatte(block[:, :, 3])
        )

    return wrap(fused[:, :, :4]), wrap(fused[:, :, 4:])
