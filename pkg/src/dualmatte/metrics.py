"""Matting quality metrics and sequence evaluation reports.

Scalar metrics accumulate in float64. SAD follows the reporting convention
of raw-sum-divided-by-1000; PSNR is computed on composites and capped at
60 dB; the temporal MAD statistic works on 0-255-scaled mattes and keeps
its 1/N prefactor over N-1 consecutive differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .compositor import DEFAULT_SPILL_MODE, SpillMode, compose, compose_spill_corrected
from .errors import DimensionMismatchError, NumericError
from .imagecore import AlphaMatte, ImageRGB, RgbaForeground

PSNR_CAP_DB = 60.0

ArrayLike = Union[ImageRGB, AlphaMatte, np.ndarray]


def _as_array(x: ArrayLike) -> np.ndarray:
    if isinstance(x, (ImageRGB, AlphaMatte)):
        return x.data.astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def _pair(pred: ArrayLike, gt: ArrayLike, what: str) -> tuple[np.ndarray, np.ndarray]:
    p, g = _as_array(pred), _as_array(gt)
    if p.shape != g.shape:
        raise DimensionMismatchError(f"{what}: shapes differ: {p.shape} vs {g.shape}")
    return p, g


def sad_raw(pred: ArrayLike, gt: ArrayLike) -> float:
    """Sum of absolute differences, unscaled."""
    p, g = _pair(pred, gt, "sad")
    return float(np.abs(p - g).sum())


def sad(pred: ArrayLike, gt: ArrayLike) -> float:
    """Sum of absolute differences in reporting units (raw sum / 1000)."""
    return sad_raw(pred, gt) / 1000.0


def mse(pred: ArrayLike, gt: ArrayLike) -> float:
    """Mean squared difference over all values."""
    p, g = _pair(pred, gt, "mse")
    d = p - g
    return float(np.mean(d * d))


def psnr(pred: ArrayLike, gt: ArrayLike) -> float:
    """10*log10(1/MSE) for unit-range images, capped at 60 dB (exact at MSE 0)."""
    m = mse(pred, gt)
    if m == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / m)))


def _gradient_magnitude(a: np.ndarray, sigma: float) -> np.ndarray:
    gx = ndimage.gaussian_filter(a, sigma, order=(0, 1), mode="nearest")
    gy = ndimage.gaussian_filter(a, sigma, order=(1, 0), mode="nearest")
    return np.sqrt(gx * gx + gy * gy)


def gradient_error(pred: ArrayLike, gt: ArrayLike, sigma: float = 1.4) -> float:
    """Sum of squared differences of Gaussian-derivative gradient magnitudes."""
    if sigma <= 0:
        raise NumericError(f"sigma must be positive, got {sigma}")
    p, g = _pair(pred, gt, "gradient_error")
    d = _gradient_magnitude(p, sigma) - _gradient_magnitude(g, sigma)
    return float(np.sum(d * d))


def mad(alphas: Sequence[AlphaMatte]) -> float:
    """Temporal mean-alpha difference over a sequence of N >= 2 mattes.

    With mattes scaled to 0-255,
    (1/N) * sum_{n=1..N-1} |sum(a_n) - sum(a_{n+1})| / (w*h).
    """
    n = len(alphas)
    if n < 2:
        raise NumericError(f"mad needs at least 2 frames, got {n}")
    shape = alphas[0].data.shape
    sums = []
    for a in alphas:
        if a.data.shape != shape:
            raise DimensionMismatchError(
                f"mad: frame sizes differ: {shape} vs {a.data.shape}"
            )
        sums.append(float(np.sum(a.data.astype(np.float64) * 255.0)))
    area = float(shape[0] * shape[1])
    total = sum(abs(sums[i] - sums[i + 1]) / area for i in range(n - 1))
    return total / n


@dataclass(frozen=True)
class EvalConfig:
    """Settings for evaluate_sequence."""

    spill_mode: SpillMode = DEFAULT_SPILL_MODE
    gradient_sigma: float = 1.4
    sequence_name: str = ""


@dataclass
class MetricReport:
    """Per-frame metrics plus sequence-level aggregates, JSON-serializable."""

    sequence_name: str
    frame_count: int
    width: int
    height: int
    region: str
    per_frame: dict[str, list[float]] = field(default_factory=dict)
    aggregates: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sequence_name": self.sequence_name,
            "frame_count": self.frame_count,
            "width": self.width,
            "height": self.height,
            "region": self.region,
            "per_frame": self.per_frame,
            "aggregates": self.aggregates,
        }


def evaluate_sequence(
    pred_frames: Sequence[RgbaForeground],
    gt_frames: Optional[Sequence[RgbaForeground]],
    background: ImageRGB,
    config: EvalConfig = EvalConfig(),
    original_frames: Optional[Sequence[ImageRGB]] = None,
) -> MetricReport:
    """Score a predicted sequence.

    With ground truth: per-frame SAD/MSE/gradient on the mattes (full frame)
    and PSNR on composites over the given background, plus sequence MAD.
    Without ground truth only MAD is reported. When original captured frames
    are supplied, predictions composite through the spill-corrected blend;
    otherwise through the plain matting equation.
    """
    n = len(pred_frames)
    if n == 0:
        raise NumericError("evaluate_sequence: empty prediction sequence")
    if gt_frames is not None and len(gt_frames) != n:
        raise DimensionMismatchError(
            f"evaluate_sequence: {n} predictions vs {len(gt_frames)} ground truths"
        )
    if original_frames is not None and len(original_frames) != n:
        raise DimensionMismatchError(
            f"evaluate_sequence: {n} predictions vs {len(original_frames)} originals"
        )
    h, w = pred_frames[0].height, pred_frames[0].width
    report = MetricReport(
        sequence_name=config.sequence_name,
        frame_count=n,
        width=w,
        height=h,
        region="full-frame",
    )
    if gt_frames is not None:
        per: dict[str, list[float]] = {
            "sad": [],
            "sad_raw": [],
            "mse": [],
            "psnr": [],
            "gradient": [],
        }
        for i in range(n):
            pa, ga = pred_frames[i].alpha, gt_frames[i].alpha
            per["sad"].append(sad(pa, ga))
            per["sad_raw"].append(sad_raw(pa, ga))
            per["mse"].append(mse(pa, ga))
            per["gradient"].append(gradient_error(pa, ga, config.gradient_sigma))
            if original_frames is not None:
                pred_comp = compose_spill_corrected(
                    pred_frames[i], original_frames[i], background, config.spill_mode
                )
            else:
                pred_comp = compose(
                    pred_frames[i].color, pred_frames[i].alpha, background
                )
            gt_comp = compose(gt_frames[i].color, gt_frames[i].alpha, background)
            per["psnr"].append(psnr(pred_comp, gt_comp))
        report.per_frame = per
        report.aggregates = {
            k: float(np.mean(v)) for k, v in per.items() if k != "sad_raw"
        }
        report.aggregates["sad_raw"] = float(np.sum(per["sad_raw"]))
    if n >= 2:
        report.aggregates["mad"] = mad([p.alpha for p in pred_frames])
    return report
