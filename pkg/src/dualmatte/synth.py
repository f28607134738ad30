"""Synthetic dual-frame training data with motion augmentation.

Each sample simulates two consecutive captures of a moving foreground over
two consecutive background frames: the foreground is pasted at a position A
in frame 1 and at A + V_foreground in frame 2, then a crop window at B
(frame 1) and B + V_cutout (frame 2) emulates camera shake. Crops of 320,
480, or 640 px are area-downscaled to the output size so the network sees
several object scales. Photometric jitter (shared by both frames, never on
alpha) is applied to the source assets before compositing, which keeps every
patch exactly equal to the composite of its ground truth over its backing
crop. Every sample is a pure function of (seed, index).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence, Union

import cv2
import numpy as np

from .compositor import compose_arrays
from .errors import ConfigError, DimensionMismatchError, InputOutputError
from .imagecore import (
    REFERENCE_PATCH,
    AlphaMatte,
    ImageRGB,
    RgbaForeground,
    load_png,
    save_png,
    scaled_margin,
)

_RETRY_LIMIT = 100


@dataclass(frozen=True)
class AugmentSpec:
    """Motion + photometric augmentation parameters.

    max_displacement is specified at the 320 px reference and scales with
    output_size, as does the loss-free inner border.
    """

    max_displacement: int = 50
    crop_sizes: tuple[int, ...] = (320, 480, 640)
    output_size: int = 320
    flip_probability: float = 0.5
    contrast_range: tuple[float, float] = (0.9, 1.1)
    jitter_amplitude: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "crop_sizes", tuple(int(c) for c in self.crop_sizes))
        if self.max_displacement < 0:
            raise ConfigError(
                f"max_displacement must be >= 0, got {self.max_displacement}"
            )
        if self.output_size <= 0:
            raise ConfigError(f"output_size must be positive, got {self.output_size}")
        if not self.crop_sizes:
            raise ConfigError("crop_sizes must not be empty")
        if any(c < self.output_size for c in self.crop_sizes):
            raise ConfigError(
                f"every crop size must be >= output_size {self.output_size}, "
                f"got {self.crop_sizes}"
            )
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigError(
                f"flip_probability must be in [0, 1], got {self.flip_probability}"
            )
        lo, hi = self.contrast_range
        if not (0.0 < lo <= hi):
            raise ConfigError(f"bad contrast_range {self.contrast_range}")
        if self.jitter_amplitude < 0:
            raise ConfigError(
                f"jitter_amplitude must be >= 0, got {self.jitter_amplitude}"
            )

    @property
    def effective_displacement(self) -> int:
        return int(
            round(self.max_displacement * self.output_size / REFERENCE_PATCH)
        )

    @property
    def inner_border(self) -> int:
        return scaled_margin(self.output_size)


@dataclass(frozen=True)
class SamplePositions:
    """Geometry and photometric draw backing one sample, in source-frame
    pixel coordinates (x, y)."""

    a: tuple[int, int]
    b: tuple[int, int]
    v_foreground: tuple[int, int]
    v_cutout: tuple[int, int]
    crop_size: int
    flipped: bool
    contrast: float
    jitter: tuple[float, float, float]


@dataclass(frozen=True)
class TrainSample:
    p1: ImageRGB
    p2: ImageRGB
    gt1: RgbaForeground
    gt2: RgbaForeground
    inner_border: int
    positions: SamplePositions


def rng_for_sample(seed: int, index: int) -> np.random.Generator:
    """Independent, reproducible stream per (seed, index)."""
    return np.random.default_rng([int(seed), int(index)])


def _paste(canvas: np.ndarray, patch: np.ndarray, x: int, y: int) -> None:
    canvas[y : y + patch.shape[0], x : x + patch.shape[1]] = patch


def _window(frame: np.ndarray, x: int, y: int, size: int) -> np.ndarray:
    return frame[y : y + size, x : x + size]


def _resize_area(arr: np.ndarray, size: int) -> np.ndarray:
    out = cv2.resize(
        arr.astype(np.float32), (size, size), interpolation=cv2.INTER_AREA
    )
    return np.clip(out, 0.0, 1.0)


def sample_pair(
    fg: RgbaForeground,
    bg1: ImageRGB,
    bg2: ImageRGB,
    spec: AugmentSpec,
    rng: np.random.Generator,
) -> TrainSample:
    """Draw one augmented dual-frame sample.

    Sampling order: crop size, A, B, motion vectors (rejection-resampled up
    to 100 times, then with a halved displacement limit), flip, contrast,
    jitter. Positions that cannot fit raise ConfigError.
    """
    if bg1.data.shape != bg2.data.shape:
        raise DimensionMismatchError(
            f"background frames differ: {bg1.data.shape} vs {bg2.data.shape}"
        )
    fh, fw = fg.height, fg.width
    h, w = bg1.height, bg1.width
    if fw > w or fh > h:
        raise ConfigError(
            f"foreground {fw}x{fh} larger than background working area {w}x{h}"
        )
    crop = int(rng.choice(np.asarray(spec.crop_sizes)))
    if crop > w or crop > h:
        raise ConfigError(
            f"crop size {crop} does not fit the {w}x{h} background"
        )
    d = spec.effective_displacement
    while True:
        ok = False
        for _ in range(_RETRY_LIMIT):
            ax = int(rng.integers(0, w - fw + 1))
            ay = int(rng.integers(0, h - fh + 1))
            bx = int(rng.integers(0, w - crop + 1))
            by = int(rng.integers(0, h - crop + 1))
            vf = (int(rng.integers(-d, d + 1)), int(rng.integers(-d, d + 1)))
            vc = (int(rng.integers(-d, d + 1)), int(rng.integers(-d, d + 1)))
            if (
                0 <= ax + vf[0] <= w - fw
                and 0 <= ay + vf[1] <= h - fh
                and 0 <= bx + vc[0] <= w - crop
                and 0 <= by + vc[1] <= h - crop
            ):
                ok = True
                break
        if ok:
            break
        d //= 2  # shrink the motion range until placement fits
    flipped = bool(rng.random() < spec.flip_probability)
    contrast = float(rng.uniform(*spec.contrast_range))
    jitter = tuple(
        float(v)
        for v in rng.uniform(
            -spec.jitter_amplitude, spec.jitter_amplitude, size=3
        )
    )

    def photo(arr: np.ndarray) -> np.ndarray:
        # Quantized back to float32 so recomposing from the stored ground
        # truth reproduces the patch bit for bit.
        out = contrast * arr.astype(np.float64) + np.asarray(jitter)
        return np.clip(out, 0.0, 1.0).astype(np.float32)

    # Place the foreground's alpha and color on empty frame-sized canvases.
    fg_color = photo(fg.color.data)
    placements = []
    for x, y in ((ax, ay), (ax + vf[0], ay + vf[1])):
        color_frame = np.zeros((h, w, 3), dtype=np.float32)
        alpha_frame = np.zeros((h, w), dtype=np.float32)
        _paste(color_frame, fg_color, x, y)
        _paste(alpha_frame, fg.alpha.data, x, y)
        placements.append((color_frame, alpha_frame))

    crops = []
    for (color_frame, alpha_frame), bg, (cx, cy) in zip(
        placements,
        (bg1, bg2),
        ((bx, by), (bx + vc[0], by + vc[1])),
    ):
        gt_color = _window(color_frame, cx, cy, crop).copy()
        gt_alpha = _window(alpha_frame, cx, cy, crop).copy()
        bg_crop = photo(_window(bg.data, cx, cy, crop))
        patch = compose_arrays(gt_color, gt_alpha, bg_crop)
        crops.append([patch, gt_color, gt_alpha])

    if flipped:
        for c in crops:
            for i in range(3):
                c[i] = c[i][:, ::-1].copy()
    if crop != spec.output_size:
        for c in crops:
            for i in range(3):
                c[i] = _resize_area(c[i], spec.output_size)

    (p1, c1, a1), (p2, c2, a2) = crops
    return TrainSample(
        p1=ImageRGB(p1),
        p2=ImageRGB(p2),
        gt1=RgbaForeground(ImageRGB(c1), AlphaMatte(a1)),
        gt2=RgbaForeground(ImageRGB(c2), AlphaMatte(a2)),
        inner_border=spec.inner_border,
        positions=SamplePositions(
            a=(ax, ay),
            b=(bx, by),
            v_foreground=vf,
            v_cutout=vc,
            crop_size=crop,
            flipped=flipped,
            contrast=contrast,
            jitter=jitter,
        ),
    )


def build_manifest(
    foregrounds: Sequence[str],
    background_sequence: Sequence[str],
    split: float = 0.8,
    train_count: int = 0,
    val_count: int = 0,
    seed: int = 0,
) -> list[dict]:
    """Assign (foreground, consecutive background pair) tuples to splits.

    Foregrounds are split randomly; the background sequence is split
    contiguously so consecutive pairs never straddle the train/val boundary.
    Tuple counts are caller-chosen; records are a pure function of the seed.
    """
    if not 0.0 < split < 1.0:
        raise ConfigError(f"split must be in (0, 1), got {split}")
    n_fg, n_bg = len(foregrounds), len(background_sequence)
    if n_fg < 2:
        raise ConfigError(f"need at least 2 foregrounds, got {n_fg}")
    if n_bg < 4:
        raise ConfigError(f"need at least 4 background frames, got {n_bg}")
    if train_count < 0 or val_count < 0:
        raise ConfigError("tuple counts must be >= 0")
    rng = np.random.default_rng(int(seed))
    order = rng.permutation(n_fg)
    n_train_fg = min(max(int(round(split * n_fg)), 1), n_fg - 1)
    fg_pools = {
        "train": [foregrounds[i] for i in order[:n_train_fg]],
        "val": [foregrounds[i] for i in order[n_train_fg:]],
    }
    n_train_bg = min(max(int(round(split * n_bg)), 2), n_bg - 2)
    pair_pools = {
        "train": [(i, i + 1) for i in range(n_train_bg - 1)],
        "val": [(i, i + 1) for i in range(n_train_bg, n_bg - 1)],
    }
    records = []
    index = 0
    for split_name, count in (("train", train_count), ("val", val_count)):
        fgs = fg_pools[split_name]
        pairs = pair_pools[split_name]
        for _ in range(count):
            fg = fgs[int(rng.integers(0, len(fgs)))]
            b1, b2 = pairs[int(rng.integers(0, len(pairs)))]
            records.append(
                {
                    "index": index,
                    "split": split_name,
                    "fg_path": str(fg),
                    "bg1_path": str(background_sequence[b1]),
                    "bg2_path": str(background_sequence[b2]),
                    "seed": int(seed),
                }
            )
            index += 1
    return records


def write_manifest(records: Sequence[dict], path: Union[str, Path]) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(p, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as exc:
        raise InputOutputError(f"{p}: cannot write manifest: {exc}") from exc


def read_manifest(path: Union[str, Path]) -> list[dict]:
    p = Path(path)
    try:
        lines = p.read_text().splitlines()
    except OSError as exc:
        raise InputOutputError(f"{p}: cannot read manifest: {exc}") from exc
    records = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise InputOutputError(f"{p}:{i + 1}: bad manifest line") from exc
    return records


def _positions_dict(positions: SamplePositions) -> dict:
    return asdict(positions)


def materialize(
    records: Sequence[dict],
    out_dir: Union[str, Path],
    spec: AugmentSpec,
) -> None:
    """Render every manifest record to PNGs plus a sidecar JSON.

    Layout: <out>/<split>/<index>_p1.png, _p2.png (16-bit RGB),
    _gt1.png, _gt2.png (16-bit RGBA), <index>.json, plus <out>/dataset.json
    with the dataset-level settings the trainer needs.
    """
    out = Path(out_dir)
    cache: dict[str, object] = {}

    def load(path: str):
        if path not in cache:
            cache[path] = load_png(path)
        return cache[path]

    counts = {"train": 0, "val": 0}
    for rec in records:
        fg = load(rec["fg_path"])
        if not isinstance(fg, RgbaForeground):
            raise InputOutputError(
                f"{rec['fg_path']}: foreground must be an RGBA PNG"
            )
        bg1, bg2 = load(rec["bg1_path"]), load(rec["bg2_path"])
        if not isinstance(bg1, ImageRGB) or not isinstance(bg2, ImageRGB):
            raise InputOutputError(
                f"{rec['bg1_path']} / {rec['bg2_path']}: backgrounds must be "
                f"RGB PNGs"
            )
        sample = sample_pair(
            fg, bg1, bg2, spec, rng_for_sample(rec["seed"], rec["index"])
        )
        split = rec["split"]
        counts[split] = counts.get(split, 0) + 1
        stem = out / split / f"{rec['index']:05d}"
        stem.parent.mkdir(parents=True, exist_ok=True)
        save_png(sample.p1, f"{stem}_p1.png", bit_depth=16)
        save_png(sample.p2, f"{stem}_p2.png", bit_depth=16)
        save_png(sample.gt1, f"{stem}_gt1.png", bit_depth=16)
        save_png(sample.gt2, f"{stem}_gt2.png", bit_depth=16)
        sidecar = {
            "index": rec["index"],
            "split": split,
            "seed": rec["seed"],
            "fg_path": rec["fg_path"],
            "bg1_path": rec["bg1_path"],
            "bg2_path": rec["bg2_path"],
            "inner_border": sample.inner_border,
            "output_size": spec.output_size,
            "positions": _positions_dict(sample.positions),
        }
        with open(f"{stem}.json", "w") as fh:
            json.dump(sidecar, fh, sort_keys=True, indent=1)
            fh.write("\n")
    meta = {
        "output_size": spec.output_size,
        "inner_border": spec.inner_border,
        "counts": counts,
        "spec": {
            "max_displacement": spec.max_displacement,
            "crop_sizes": list(spec.crop_sizes),
            "output_size": spec.output_size,
            "flip_probability": spec.flip_probability,
            "contrast_range": list(spec.contrast_range),
            "jitter_amplitude": spec.jitter_amplitude,
        },
    }
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "dataset.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")


def dataset_meta(data_dir: Union[str, Path]) -> dict:
    p = Path(data_dir) / "dataset.json"
    try:
        return json.loads(p.read_text())
    except OSError as exc:
        raise InputOutputError(f"{p}: cannot read dataset metadata: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputOutputError(f"{p}: bad dataset metadata") from exc


def list_sample_indices(data_dir: Union[str, Path], split: str) -> list[int]:
    d = Path(data_dir) / split
    if not d.is_dir():
        raise InputOutputError(f"{d}: split directory not found")
    return sorted(int(f.stem) for f in d.glob("[0-9]*.json"))


def load_sample(data_dir: Union[str, Path], split: str, index: int) -> TrainSample:
    stem = Path(data_dir) / split / f"{index:05d}"
    sidecar_path = Path(f"{stem}.json")
    try:
        sidecar = json.loads(sidecar_path.read_text())
    except OSError as exc:
        raise InputOutputError(f"{sidecar_path}: cannot read sample: {exc}") from exc
    p1 = load_png(f"{stem}_p1.png")
    p2 = load_png(f"{stem}_p2.png")
    gt1 = load_png(f"{stem}_gt1.png")
    gt2 = load_png(f"{stem}_gt2.png")
    if not isinstance(p1, ImageRGB) or not isinstance(p2, ImageRGB):
        raise InputOutputError(f"{stem}_p*.png: inputs must be RGB PNGs")
    if not isinstance(gt1, RgbaForeground) or not isinstance(gt2, RgbaForeground):
        raise InputOutputError(f"{stem}_gt*.png: ground truths must be RGBA PNGs")
    pos = sidecar["positions"]
    return TrainSample(
        p1=p1,
        p2=p2,
        gt1=gt1,
        gt2=gt2,
        inner_border=int(sidecar["inner_border"]),
        positions=SamplePositions(
            a=tuple(pos["a"]),
            b=tuple(pos["b"]),
            v_foreground=tuple(pos["v_foreground"]),
            v_cutout=tuple(pos["v_cutout"]),
            crop_size=int(pos["crop_size"]),
            flipped=bool(pos["flipped"]),
            contrast=float(pos["contrast"]),
            jitter=tuple(pos["jitter"]),
        ),
    )


def load_split(data_dir: Union[str, Path], split: str) -> list[TrainSample]:
    return [
        load_sample(data_dir, split, i) for i in list_sample_indices(data_dir, split)
    ]
