import numpy as np
import pytest

from dualmatte.errors import DimensionMismatchError, NumericError
from dualmatte.imagecore import ImageRGB
from dualmatte.tiler import fuse, infer_frame_pair, plan_tiles
from helpers import grid8


def _weight_map(layout):
    total = np.zeros((layout.frame_height, layout.frame_width), np.float64)
    for i, t in enumerate(layout.tiles):
        total[t.inner_y0 : t.inner_y1, t.inner_x0 : t.inner_x1] += (
            layout.tile_weight(i)
        )
    return total


def test_reference_layout_320():
    layout = plan_tiles(2448, 1600, 320)
    assert layout.border == 50
    assert layout.inner_size == 220
    assert layout.inner_overlap == 50
    assert layout.stride == 170
    assert (layout.grid_cols, layout.grid_rows) == (14, 9)
    assert len(layout.tiles) == 126


def test_single_tile_when_frame_equals_patch():
    layout = plan_tiles(64, 64, 64)
    assert len(layout.tiles) == 1
    t = layout.tiles[0]
    # the lone tile's inner region must cover the whole frame
    assert (t.inner_x0, t.inner_y0, t.inner_x1, t.inner_y1) == (0, 0, 64, 64)
    assert np.abs(_weight_map(layout) - 1.0).max() == 0.0


def test_weights_partition_random_sizes(rng):
    for _ in range(12):
        w = int(rng.integers(64, 400))
        h = int(rng.integers(64, 400))
        layout = plan_tiles(w, h, 64)
        total = _weight_map(layout)
        assert np.abs(total - 1.0).max() < 1e-12, (w, h)


def test_edge_tiles_extend_to_frame_boundary():
    layout = plan_tiles(200, 150, 64)
    xs0 = [t.inner_x0 for t in layout.tiles]
    ys0 = [t.inner_y0 for t in layout.tiles]
    xs1 = [t.inner_x1 for t in layout.tiles]
    ys1 = [t.inner_y1 for t in layout.tiles]
    assert min(xs0) == 0 and min(ys0) == 0
    assert max(xs1) == 200 and max(ys1) == 150


def test_two_tile_overlap_is_linear_ramp():
    # one axis, two tiles: blend weights inside the shared band are the
    # (k+1)/(L+1) ramp, an exact partition
    layout = plan_tiles(98, 64, 64)  # stride 34 at patch 64 -> 2 cols
    assert layout.grid_cols == 2 and layout.grid_rows == 1
    a = np.zeros((64, 64), np.float32)
    b = np.ones((64, 64), np.float32)
    fused = fuse(layout, [a, b])
    row = fused[32]
    left = layout.tiles[1].inner_x0
    right = layout.tiles[0].inner_x1
    band = right - left
    expected = (np.arange(band) + 1.0) / (band + 1.0)
    assert np.abs(row[left:right] - expected).max() < 1e-12
    assert (row[:left] == 0.0).all()
    assert (row[right:] == 1.0).all()


def test_identity_fusion(rng):
    frame = rng.uniform(0, 1, (150, 210, 3))
    layout = plan_tiles(210, 150, 64)
    tiles = [
        frame[t.origin_y : t.origin_y + 64, t.origin_x : t.origin_x + 64]
        for t in layout.tiles
    ]
    fused = fuse(layout, tiles)
    assert np.abs(fused - frame).max() < 1e-12


def test_fuse_constant_tiles_stay_constant():
    layout = plan_tiles(131, 97, 64)
    fused = fuse(layout, [np.full((64, 64), 0.37) for _ in layout.tiles])
    assert np.abs(fused - 0.37).max() < 1e-12


def test_fuse_wrong_shape_and_count():
    layout = plan_tiles(98, 64, 64)
    with pytest.raises(DimensionMismatchError):
        fuse(layout, [np.zeros((64, 63))] + [np.zeros((64, 64))])
    with pytest.raises(DimensionMismatchError):
        fuse(layout, [np.zeros((64, 64))])  # one tile short
    with pytest.raises(DimensionMismatchError):
        fuse(layout, [np.zeros((64, 64))] * 3)  # one too many


def test_plan_validation():
    with pytest.raises(NumericError) as err:
        plan_tiles(50, 200, 64)
    assert "pad" in str(err.value)
    with pytest.raises(NumericError):
        plan_tiles(200, 200, 64, inner_size=63)  # odd border
    with pytest.raises(NumericError):
        plan_tiles(200, 200, 64, inner_size=44, inner_overlap=44)
    with pytest.raises(NumericError):
        plan_tiles(200, 200, 64, inner_overlap=-1)


def test_custom_inner_geometry():
    layout = plan_tiles(300, 300, 64, inner_size=60, inner_overlap=20)
    assert layout.border == 2
    assert layout.stride == 40
    assert np.abs(_weight_map(layout) - 1.0).max() < 1e-12


def test_infer_frame_pair_identity(rng):
    # a per-pixel predictor must survive tiling and blending untouched
    h, w = 100, 140
    f1 = ImageRGB(grid8(rng.uniform(0, 1, (h, w, 3))))
    f2 = ImageRGB(grid8(rng.uniform(0, 1, (h, w, 3))))

    def rgba_of(p):
        return np.dstack([p, p.mean(axis=2)])

    out1, out2 = infer_frame_pair(
        lambda p1, p2: (rgba_of(p1), rgba_of(p2)), 64, f1, f2
    )
    assert np.abs(out1.color.data - f1.data).max() < 1e-6
    assert np.abs(out1.alpha.data - f1.data.mean(axis=2)).max() < 1e-6
    assert np.abs(out2.color.data - f2.data).max() < 1e-6
    assert np.abs(out2.alpha.data - f2.data.mean(axis=2)).max() < 1e-6


def test_infer_frame_pair_size_mismatch(rng):
    f1 = ImageRGB(grid8(rng.uniform(0, 1, (64, 64, 3))))
    f2 = ImageRGB(grid8(rng.uniform(0, 1, (64, 65, 3))))
    with pytest.raises(DimensionMismatchError):
        infer_frame_pair(lambda a, b: (None, None), 64, f1, f2)


def test_infer_frame_pair_bad_predictor_shape(rng):
    f = ImageRGB(grid8(rng.uniform(0, 1, (64, 64, 3))))
    with pytest.raises(DimensionMismatchError) as err:
        infer_frame_pair(
            lambda a, b: (np.zeros((32, 32, 4)), np.zeros((32, 32, 4))), 64, f, f
        )
    assert "patch size" in str(err.value)
