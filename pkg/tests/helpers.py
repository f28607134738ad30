"""Shared fixture builders.

Values land on the 8-bit grid (k/255) unless stated otherwise, so PNG round
trips are exact and no alpha falls in the troublesome (0, 1e-3) band.
"""

import numpy as np

from dualmatte.imagecore import AlphaMatte, ImageRGB, RgbaForeground


def grid8(arr):
    return (np.rint(np.clip(arr, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def noise_rgb(rng, h, w, lo=0.05, hi=0.95):
    return ImageRGB(grid8(rng.uniform(lo, hi, (h, w, 3))))


def flat_rgb(h, w, color):
    arr = np.empty((h, w, 3), np.float32)
    arr[:] = np.asarray(color, np.float32)
    return ImageRGB(arr)


def disk_foreground(size, radius_frac=0.35, color=(0.8, 0.4, 0.2), soft_frac=0.1):
    """Soft-edged disk cutout; color is zero wherever alpha is zero."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    d = np.hypot(xs - c, ys - c)
    alpha = np.clip((size * radius_frac - d) / (size * soft_frac) + 0.5, 0.0, 1.0)
    alpha = grid8(alpha)
    rgb = np.empty((size, size, 3), np.float32)
    rgb[:] = np.asarray(color, np.float32)
    rgb *= (alpha > 0)[..., None]
    return RgbaForeground(ImageRGB(rgb), AlphaMatte(alpha))


def scene_frame(w, h, cx, cy, radius, color=(0.8, 0.4, 0.2), soft=6.0):
    """Full-frame cutout: one soft disk at (cx, cy)."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    d = np.hypot(xs - cx, ys - cy)
    alpha = grid8(np.clip((radius - d) / soft + 0.5, 0.0, 1.0))
    rgb = np.empty((h, w, 3), np.float32)
    rgb[:] = np.asarray(color, np.float32)
    rgb *= (alpha > 0)[..., None]
    return RgbaForeground(ImageRGB(rgb), AlphaMatte(alpha))


def toy_samples(n, seed=7, size=64, bg_size=96, fg_size=40):
    """Augmented dual-frame samples small enough for fast training tests."""
    from dualmatte import synth

    rng = np.random.default_rng(seed)
    fg = disk_foreground(fg_size)
    spec = synth.AugmentSpec(crop_sizes=(size,), output_size=size)
    out = []
    for i in range(n):
        bg1 = noise_rgb(rng, bg_size, bg_size)
        bg2 = noise_rgb(rng, bg_size, bg_size)
        out.append(
            synth.sample_pair(fg, bg1, bg2, spec, synth.rng_for_sample(seed, i))
        )
    return out


def mean_inner_alpha_error(model, samples, border):
    """Mean |predicted - true| alpha inside the inner region, both outputs."""
    import torch

    from dualmatte import net

    errs = []
    with torch.no_grad():
        for s in samples:
            p1, p2, _c1, a1, _c2, a2 = net.sample_to_tensors(s)
            o1, o2 = model(p1, p2)
            for o, a in ((o1, a1), (o2, a2)):
                pa = o[:, 3:4, border:-border, border:-border]
                ga = a[:, :, border:-border, border:-border]
                errs.append(float((pa - ga).abs().mean()))
    return float(np.mean(errs))
