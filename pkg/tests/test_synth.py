import json

import numpy as np
import pytest

from dualmatte import synth
from dualmatte.compositor import compose_arrays
from dualmatte.errors import ConfigError, DimensionMismatchError
from dualmatte.imagecore import load_png, save_png
from helpers import disk_foreground, noise_rgb


def _spec64(**kw):
    base = dict(crop_sizes=(64,), output_size=64)
    base.update(kw)
    return synth.AugmentSpec(**base)


def test_augment_spec_validation():
    with pytest.raises(ConfigError):
        synth.AugmentSpec(max_displacement=-1)
    with pytest.raises(ConfigError):
        synth.AugmentSpec(crop_sizes=())
    with pytest.raises(ConfigError):
        synth.AugmentSpec(crop_sizes=(128,), output_size=256)
    with pytest.raises(ConfigError):
        synth.AugmentSpec(flip_probability=1.5)
    with pytest.raises(ConfigError):
        synth.AugmentSpec(contrast_range=(0.0, 1.1))
    with pytest.raises(ConfigError):
        synth.AugmentSpec(jitter_amplitude=-0.1)


def test_augment_spec_scaling():
    assert _spec64().effective_displacement == 10  # 50 * 64/320
    assert _spec64().inner_border == 10
    full = synth.AugmentSpec()
    assert full.effective_displacement == 50
    assert full.inner_border == 50


def test_sample_pair_deterministic(rng):
    fg = disk_foreground(40)
    bg1, bg2 = noise_rgb(rng, 96, 96), noise_rgb(rng, 96, 96)
    a = synth.sample_pair(fg, bg1, bg2, _spec64(), synth.rng_for_sample(3, 5))
    b = synth.sample_pair(fg, bg1, bg2, _spec64(), synth.rng_for_sample(3, 5))
    assert np.array_equal(a.p1.data, b.p1.data)
    assert np.array_equal(a.p2.data, b.p2.data)
    assert a.positions == b.positions
    c = synth.sample_pair(fg, bg1, bg2, _spec64(), synth.rng_for_sample(3, 6))
    assert not np.array_equal(a.p1.data, c.p1.data)


def test_sample_recomposes_bit_exactly(rng):
    # patches must equal compose(gt_color, gt_alpha, photometric(bg crop))
    # with no resampling in between when crop == output size
    fg = disk_foreground(40)
    for index in range(6):
        bg1, bg2 = noise_rgb(rng, 96, 96), noise_rgb(rng, 96, 96)
        s = synth.sample_pair(
            fg, bg1, bg2, _spec64(), synth.rng_for_sample(11, index)
        )
        pos = s.positions
        for patch, gt, shift in ((s.p1, s.gt1, (0, 0)), (s.p2, s.gt2, None)):
            if shift is None:
                bx = pos.b[0] + pos.v_cutout[0]
                by = pos.b[1] + pos.v_cutout[1]
                bg = bg2
            else:
                bx, by = pos.b
                bg = bg1
            crop = bg.data[by : by + 64, bx : bx + 64].astype(np.float64)
            crop = np.clip(
                pos.contrast * crop + np.asarray(pos.jitter), 0, 1
            ).astype(np.float32)
            if pos.flipped:
                crop = crop[:, ::-1]
            expected = compose_arrays(gt.color.data, gt.alpha.data, crop)
            assert np.array_equal(patch.data, expected)


def test_sample_respects_displacement_bound(rng):
    fg = disk_foreground(40)
    spec = _spec64()
    d = spec.effective_displacement
    for index in range(20):
        bg1, bg2 = noise_rgb(rng, 96, 96), noise_rgb(rng, 96, 96)
        s = synth.sample_pair(fg, bg1, bg2, spec, synth.rng_for_sample(2, index))
        pos = s.positions
        assert max(abs(v) for v in pos.v_foreground) <= d
        assert max(abs(v) for v in pos.v_cutout) <= d
        # both cutout windows stay inside the source frame
        for vx, vy in ((0, 0), pos.v_cutout):
            assert 0 <= pos.b[0] + vx <= 96 - 64
            assert 0 <= pos.b[1] + vy <= 96 - 64
        assert s.inner_border == 10


def test_sample_downscales_larger_crops(rng):
    fg = disk_foreground(60)
    spec = synth.AugmentSpec(crop_sizes=(128,), output_size=64)
    bg1, bg2 = noise_rgb(rng, 160, 160), noise_rgb(rng, 160, 160)
    s = synth.sample_pair(fg, bg1, bg2, spec, synth.rng_for_sample(1, 0))
    assert s.p1.data.shape == (64, 64, 3)
    assert s.gt1.alpha.data.shape == (64, 64)
    assert s.positions.crop_size == 128
    assert 0.0 <= s.gt1.alpha.data.min() and s.gt1.alpha.data.max() <= 1.0


def test_sample_flip_forced(rng):
    fg = disk_foreground(40)
    flip = _spec64(flip_probability=1.0)
    noflip = _spec64(flip_probability=0.0)
    bg1, bg2 = noise_rgb(rng, 96, 96), noise_rgb(rng, 96, 96)
    a = synth.sample_pair(fg, bg1, bg2, flip, synth.rng_for_sample(4, 0))
    b = synth.sample_pair(fg, bg1, bg2, noflip, synth.rng_for_sample(4, 0))
    assert a.positions.flipped and not b.positions.flipped
    assert np.array_equal(a.p1.data, b.p1.data[:, ::-1])
    assert np.array_equal(a.gt1.alpha.data, b.gt1.alpha.data[:, ::-1])


def test_sample_zero_alpha_has_black_color(rng):
    # with no additive jitter, transparent pixels carry no color
    fg = disk_foreground(24)
    spec = _spec64(max_displacement=0, jitter_amplitude=0.0)
    bg1, bg2 = noise_rgb(rng, 80, 80), noise_rgb(rng, 80, 80)
    s = synth.sample_pair(fg, bg1, bg2, spec, synth.rng_for_sample(9, 1))
    for gt in (s.gt1, s.gt2):
        alpha = gt.alpha.data
        assert alpha.max() > 0  # the 24 px disk always intersects the crop
        assert (gt.color.data[alpha == 0] == 0).all()


def test_sample_size_errors(rng):
    fg = disk_foreground(40)
    with pytest.raises(DimensionMismatchError):
        synth.sample_pair(
            fg,
            noise_rgb(rng, 96, 96),
            noise_rgb(rng, 96, 97),
            _spec64(),
            synth.rng_for_sample(0, 0),
        )
    with pytest.raises(ConfigError):
        synth.sample_pair(
            disk_foreground(100),
            noise_rgb(rng, 96, 96),
            noise_rgb(rng, 96, 96),
            _spec64(),
            synth.rng_for_sample(0, 0),
        )


def _paths(prefix, n):
    return [f"{prefix}{i:03d}.png" for i in range(n)]


def test_manifest_pools_and_counts():
    fgs = _paths("fg", 10)
    bgs = _paths("bg", 20)
    records = synth.build_manifest(fgs, bgs, split=0.8, train_count=200, val_count=50)
    train = [r for r in records if r["split"] == "train"]
    val = [r for r in records if r["split"] == "val"]
    assert len(train) == 200 and len(val) == 50
    # 10 foregrounds at split 0.8 -> pools of 8 and 2, disjoint
    train_fgs = {r["fg_path"] for r in train}
    val_fgs = {r["fg_path"] for r in val}
    assert len(train_fgs) == 8 and len(val_fgs) == 2
    assert not (train_fgs & val_fgs)
    # backgrounds split contiguously; pairs are consecutive frames
    for r in records:
        i1 = int(r["bg1_path"][2:5])
        i2 = int(r["bg2_path"][2:5])
        assert i2 == i1 + 1
        if r["split"] == "train":
            assert i2 <= 15
        else:
            assert i1 >= 16
    assert [r["index"] for r in records] == list(range(250))


def test_manifest_deterministic():
    fgs, bgs = _paths("fg", 6), _paths("bg", 12)
    a = synth.build_manifest(fgs, bgs, train_count=40, val_count=10, seed=5)
    b = synth.build_manifest(fgs, bgs, train_count=40, val_count=10, seed=5)
    c = synth.build_manifest(fgs, bgs, train_count=40, val_count=10, seed=6)
    assert a == b
    assert a != c


def test_manifest_paper_scale_counts():
    fgs, bgs = _paths("fg", 432), _paths("bg", 5000)
    records = synth.build_manifest(
        fgs, bgs, split=0.8, train_count=34560, val_count=8640
    )
    assert sum(r["split"] == "train" for r in records) == 34560
    assert sum(r["split"] == "val" for r in records) == 8640


def test_manifest_validation():
    with pytest.raises(ConfigError):
        synth.build_manifest(_paths("fg", 1), _paths("bg", 10))
    with pytest.raises(ConfigError):
        synth.build_manifest(_paths("fg", 5), _paths("bg", 3))
    with pytest.raises(ConfigError):
        synth.build_manifest(_paths("fg", 5), _paths("bg", 10), split=1.0)


def test_manifest_file_round_trip(tmp_path):
    records = synth.build_manifest(
        _paths("fg", 4), _paths("bg", 8), train_count=6, val_count=2
    )
    path = tmp_path / "manifest.jsonl"
    synth.write_manifest(records, path)
    assert synth.read_manifest(path) == records
    assert len(path.read_text().strip().splitlines()) == 8


def _materialized_dataset(tmp_path, rng, n_train=3, n_val=2, seed=21):
    fg_dir = tmp_path / "fg"
    bg_dir = tmp_path / "bg"
    for i in range(3):
        save_png(disk_foreground(24 + 4 * i), fg_dir / f"fg{i:03d}.png")
    for i in range(8):
        save_png(noise_rgb(rng, 80, 80), bg_dir / f"bg{i:03d}.png")
    records = synth.build_manifest(
        sorted(str(p) for p in fg_dir.glob("*.png")),
        sorted(str(p) for p in bg_dir.glob("*.png")),
        train_count=n_train,
        val_count=n_val,
        seed=seed,
    )
    out = tmp_path / "data"
    spec = _spec64()
    synth.materialize(records, out, spec)
    return out, records, spec


def test_materialize_layout_and_meta(tmp_path, rng):
    out, records, spec = _materialized_dataset(tmp_path, rng)
    assert (out / "dataset.json").exists()
    meta = synth.dataset_meta(out)
    assert meta["output_size"] == 64
    assert meta["inner_border"] == 10
    assert meta["counts"] == {"train": 3, "val": 2}
    assert synth.list_sample_indices(out, "train") == [0, 1, 2]
    assert synth.list_sample_indices(out, "val") == [3, 4]
    for rec in records:
        stem = out / rec["split"] / f"{rec['index']:05d}"
        for suffix in ("_p1.png", "_p2.png", "_gt1.png", "_gt2.png"):
            assert stem.with_name(stem.name + suffix).exists()
        sidecar = json.loads((stem.with_suffix(".json")).read_text())
        assert sidecar["index"] == rec["index"]


def test_materialized_samples_round_trip_quantized(tmp_path, rng):
    out, records, spec = _materialized_dataset(tmp_path, rng)
    rec = records[0]
    fresh = synth.sample_pair(
        load_png(rec["fg_path"]),
        load_png(rec["bg1_path"]),
        load_png(rec["bg2_path"]),
        spec,
        synth.rng_for_sample(rec["seed"], rec["index"]),
    )
    loaded = synth.load_sample(out, rec["split"], rec["index"])
    # PNGs are 16-bit; loading gives back the quantized sample exactly
    q = 65535.0
    expect = (np.rint(fresh.p1.data.astype(np.float64) * q) / q).astype(np.float32)
    assert np.array_equal(loaded.p1.data, expect)
    expect_a = (
        np.rint(fresh.gt1.alpha.data.astype(np.float64) * q) / q
    ).astype(np.float32)
    assert np.array_equal(loaded.gt1.alpha.data, expect_a)
    assert loaded.positions == fresh.positions
    assert loaded.inner_border == fresh.inner_border


def test_load_split_returns_all(tmp_path, rng):
    out, _, _ = _materialized_dataset(tmp_path, rng)
    train = synth.load_split(out, "train")
    val = synth.load_split(out, "val")
    assert len(train) == 3 and len(val) == 2
    assert all(s.p1.data.shape == (64, 64, 3) for s in train)
