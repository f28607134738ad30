"""One-encoder, two-decoder matting network with masked Charbonnier loss.

The encoder consumes the 6-channel concatenation of two temporally adjacent
patches and both decoders read the shared latent, each predicting a 4-channel
RGBA map for its frame. Five 2x poolings down, five exact 2x transposed
convolutions up, additive skips from every pre-pool encoder feature into both
decoders. The loss is a Charbonnier penalty on alpha plus a color penalty
masked to pixels where the true alpha is positive, summed over an inner
region that excludes a border the motion augmentation may corrupt.

Training follows a strict schedule: SGD with momentum at batch size 1,
checkpoint restore on any validation-loss increase, learning-rate decay
after two stagnant epochs, stop after five.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from .errors import (
    ConfigError,
    DimensionMismatchError,
    InputOutputError,
    NonFiniteComputationError,
    TrainingDivergedError,
)
from .imagecore import AlphaMatte, ImageRGB, scaled_margin

_ENCODER_BLOCK_CONVS = (2, 2, 3, 3, 3)  # 13 convs in blocks + 1 latent = 14


@dataclass(frozen=True)
class ModelConfig:
    """Network size. base_width 64 gives the full-scale channel sequence
    64/128/256/512/1024; tests use small widths on small patches."""

    patch_size: int = 320
    base_width: int = 64
    group_norm_groups: int = 8
    skip_connections: bool = True

    def __post_init__(self):
        if self.patch_size <= 0 or self.patch_size % 32 != 0:
            raise ConfigError(
                f"patch_size must be a positive multiple of 32 (five 2x "
                f"poolings), got {self.patch_size}"
            )
        if self.base_width < 1:
            raise ConfigError(f"base_width must be >= 1, got {self.base_width}")
        if self.group_norm_groups < 1:
            raise ConfigError(
                f"group_norm_groups must be >= 1, got {self.group_norm_groups}"
            )

    @property
    def widths(self) -> tuple[int, ...]:
        w = self.base_width
        return (w, 2 * w, 4 * w, 8 * w, 16 * w)


def config_hash(config: ModelConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class LossConfig:
    """Loss weights and geometry: alpha weight 1, color weight 0.5,
    Charbonnier epsilon 1e-6, inner border 50 px at the 320 patch."""

    alpha_weight: float = 1.0
    color_weight: float = 0.5
    epsilon: float = 1e-6
    inner_border: int = 50

    def __post_init__(self):
        if self.alpha_weight < 0 or self.color_weight < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.inner_border < 0:
            raise ConfigError(f"inner_border must be >= 0, got {self.inner_border}")

    @classmethod
    def for_patch(cls, patch_size: int, **overrides) -> "LossConfig":
        return cls(inner_border=scaled_margin(patch_size), **overrides)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    lr_decay: float = 0.6
    patience_decay: int = 2
    patience_stop: int = 5
    max_epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "lr_decay"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.momentum < 0:
            raise ConfigError("momentum must be >= 0")
        if self.patience_decay <= 0 or self.patience_stop <= 0:
            raise ConfigError("patience values must be positive")
        if self.patience_decay >= self.patience_stop:
            raise ConfigError(
                f"patience_decay ({self.patience_decay}) must be smaller than "
                f"patience_stop ({self.patience_stop})"
            )
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")


def _norm_groups(channels: int, preferred: int) -> int:
    # Largest divisor of the channel count not exceeding the preference.
    for g in range(min(preferred, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


def _conv_gn_relu(in_c: int, out_c: int, groups: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_c, out_c, kernel_size=3, padding=1),
        nn.GroupNorm(_norm_groups(out_c, groups), out_c),
        nn.ReLU(inplace=True),
    )


class _Decoder(nn.Module):
    """Five (conv, up) stages mirroring encoder widths plus a 4-channel head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        w = config.widths
        g = config.group_norm_groups
        # Per stage: conv at the current scale, then an exact 2x upsample.
        in_out = [
            (w[4], w[4]),
            (w[4], w[3]),
            (w[3], w[2]),
            (w[2], w[1]),
            (w[1], w[0]),
        ]
        self.convs = nn.ModuleList(
            _conv_gn_relu(c_in, c_in, g) for c_in, _ in in_out
        )
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(c_in, c_out, kernel_size=6, stride=2, padding=2)
            for c_in, c_out in in_out
        )
        self.head = nn.Conv2d(w[0], 4, kernel_size=3, padding=1)
        self.use_skips = config.skip_connections

    def forward(self, latent: torch.Tensor, skips: Sequence[torch.Tensor]):
        x = latent
        for i in range(5):
            x = self.convs[i](x)
            x = self.ups[i](x)
            if self.use_skips:
                x = x + skips[4 - i]
        x = self.head(x)
        color = torch.relu(x[:, :3]).clamp(max=1.0)
        alpha = torch.sigmoid(x[:, 3:4])
        return torch.cat([color, alpha], dim=1)


class MattingNet(nn.Module):
    """forward(p1, p2) -> (out1, out2), each (B, 4, H, W) RGBA."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        g = config.group_norm_groups
        widths = config.widths
        blocks = []
        in_c = 6
        for n_convs, out_c in zip(_ENCODER_BLOCK_CONVS, widths):
            layers = []
            for _ in range(n_convs):
                layers.append(_conv_gn_relu(in_c, out_c, g))
                in_c = out_c
            blocks.append(nn.Sequential(*layers))
        self.enc_blocks = nn.ModuleList(blocks)
        self.pool = nn.MaxPool2d(2)
        self.latent = _conv_gn_relu(widths[4], widths[4], g)
        self.decoder1 = _Decoder(config)
        self.decoder2 = _Decoder(config)

    def forward(self, p1: torch.Tensor, p2: torch.Tensor):
        for t, name in ((p1, "p1"), (p2, "p2")):
            if t.ndim != 4 or t.shape[1] != 3:
                raise DimensionMismatchError(
                    f"{name} must be (B, 3, H, W), got {tuple(t.shape)}"
                )
            if t.shape[2] != self.config.patch_size or t.shape[3] != self.config.patch_size:
                raise DimensionMismatchError(
                    f"{name} is {tuple(t.shape[2:])}, model expects "
                    f"{self.config.patch_size}x{self.config.patch_size}"
                )
        x = torch.cat([p1, p2], dim=1)
        skips = []
        for block in self.enc_blocks:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.latent(x)
        return self.decoder1(x, skips), self.decoder2(x, skips)


def init_params(model: MattingNet, seed: int = 0) -> None:
    """Deterministic fan-in-scaled normal init; biases and norm offsets zero,
    norm scales one."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.weight.shape[1] * module.weight.shape[2] * module.weight.shape[3]
                std = math.sqrt(2.0 / fan_in)
                module.weight.copy_(
                    torch.normal(
                        0.0, std, size=module.weight.shape, generator=gen
                    )
                )
                module.bias.zero_()
            elif isinstance(module, nn.ConvTranspose2d):
                fan_in = module.weight.shape[0] * module.weight.shape[2] * module.weight.shape[3]
                std = math.sqrt(2.0 / fan_in)
                module.weight.copy_(
                    torch.normal(
                        0.0, std, size=module.weight.shape, generator=gen
                    )
                )
                module.bias.zero_()
            elif isinstance(module, nn.GroupNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()


def get_flat_params(model: nn.Module) -> np.ndarray:
    return np.concatenate(
        [p.detach().cpu().numpy().ravel() for p in model.parameters()]
    )


def set_flat_params(model: nn.Module, flat: np.ndarray) -> None:
    total = sum(p.numel() for p in model.parameters())
    flat = np.asarray(flat)
    if flat.size != total:
        raise DimensionMismatchError(
            f"flat vector has {flat.size} values, model has {total} parameters"
        )
    offset = 0
    with torch.no_grad():
        for p in model.parameters():
            n = p.numel()
            chunk = flat[offset : offset + n].reshape(p.shape)
            p.copy_(torch.as_tensor(chunk, dtype=p.dtype))
            offset += n


def charbonnier(x: torch.Tensor, epsilon: float) -> torch.Tensor:
    return torch.sqrt(x * x + epsilon * epsilon)


def _inner(t: torch.Tensor, border: int) -> torch.Tensor:
    if border == 0:
        return t
    h, w = t.shape[-2], t.shape[-1]
    if 2 * border >= h or 2 * border >= w:
        raise ConfigError(
            f"inner_border {border} leaves no inner region on {h}x{w} maps"
        )
    return t[..., border : h - border, border : w - border]


def loss_fn(
    out1: torch.Tensor,
    out2: torch.Tensor,
    gt_color1: torch.Tensor,
    gt_alpha1: torch.Tensor,
    gt_color2: torch.Tensor,
    gt_alpha2: torch.Tensor,
    cfg: LossConfig,
) -> torch.Tensor:
    """Summed masked Charbonnier loss over the inner region.

    Per inner pixel: w_a * (La1 + La2) + w_c * (m1 * Lc1 + m2 * Lc2), where
    La is the alpha Charbonnier, Lc sums Charbonnier over the 3 color
    channels, and m = [gt_alpha > 0]. Perfect predictions give 5 * epsilon
    per pixel at the default weights. The total is a sum, not a mean.
    """
    total = None
    for out, gt_c, gt_a in (
        (out1, gt_color1, gt_alpha1),
        (out2, gt_color2, gt_alpha2),
    ):
        if out.shape[1] != 4 or gt_c.shape[1] != 3 or gt_a.shape[1] != 1:
            raise DimensionMismatchError(
                f"loss operands have wrong channel counts: out {out.shape}, "
                f"gt color {gt_c.shape}, gt alpha {gt_a.shape}"
            )
        if out.shape[2:] != gt_c.shape[2:] or out.shape[2:] != gt_a.shape[2:]:
            raise DimensionMismatchError(
                f"loss operand sizes differ: {out.shape} vs {gt_c.shape} vs "
                f"{gt_a.shape}"
            )
        pred_c = _inner(out[:, :3], cfg.inner_border)
        pred_a = _inner(out[:, 3:4], cfg.inner_border)
        g_c = _inner(gt_c, cfg.inner_border)
        g_a = _inner(gt_a, cfg.inner_border)
        l_alpha = charbonnier(pred_a - g_a, cfg.epsilon)
        l_color = charbonnier(pred_c - g_c, cfg.epsilon).sum(dim=1, keepdim=True)
        mask = (g_a > 0).to(out.dtype)
        term = cfg.alpha_weight * l_alpha + cfg.color_weight * mask * l_color
        total = term.sum() if total is None else total + term.sum()
    return total


def sample_to_tensors(sample, dtype=torch.float32):
    """(p1, p2, gt_color1, gt_alpha1, gt_color2, gt_alpha2), each (1, C, H, W).

    Accepts anything with .p1/.p2 ImageRGB and .gt1/.gt2 RgbaForeground."""

    def chw(img: ImageRGB):
        return torch.as_tensor(
            np.ascontiguousarray(img.data.transpose(2, 0, 1))[None], dtype=dtype
        )

    def amap(a: AlphaMatte):
        # copy: the source array is frozen and torch wants writable memory
        return torch.as_tensor(np.array(a.data)[None, None], dtype=dtype)

    return (
        chw(sample.p1),
        chw(sample.p2),
        chw(sample.gt1.color),
        amap(sample.gt1.alpha),
        chw(sample.gt2.color),
        amap(sample.gt2.alpha),
    )


def batch_loss(model: MattingNet, batch: Iterable, cfg: LossConfig) -> torch.Tensor:
    """Sum of per-sample losses; batch items as accepted by sample_to_tensors."""
    dtype = next(model.parameters()).dtype
    total = None
    for sample in batch:
        p1, p2, c1, a1, c2, a2 = sample_to_tensors(sample, dtype=dtype)
        out1, out2 = model(p1, p2)
        term = loss_fn(out1, out2, c1, a1, c2, a2, cfg)
        total = term if total is None else total + term
    if total is None:
        raise ConfigError("batch_loss: empty batch")
    return total


def _first_nonfinite_layer(model: MattingNet, batch, cfg: LossConfig) -> str:
    found: list[str] = []
    hooks = []

    def make_hook(name):
        def hook(_module, _inputs, output):
            if not found and isinstance(output, torch.Tensor):
                if not torch.isfinite(output).all():
                    found.append(name)

        return hook

    for name, module in model.named_modules():
        if name:
            hooks.append(module.register_forward_hook(make_hook(name)))
    try:
        with torch.no_grad():
            batch_loss(model, batch, cfg)
    finally:
        for h in hooks:
            h.remove()
    return found[0] if found else "loss"


def grad(model: MattingNet, batch, cfg: LossConfig) -> np.ndarray:
    """Gradient of the summed batch loss w.r.t. the flat parameter vector."""
    model.zero_grad(set_to_none=True)
    loss = batch_loss(model, batch, cfg)
    if not torch.isfinite(loss):
        layer = _first_nonfinite_layer(model, batch, cfg)
        raise NonFiniteComputationError(
            f"non-finite values first appeared in layer '{layer}'"
        )
    loss.backward()
    chunks = []
    for name, p in model.named_parameters():
        g = (
            p.grad.detach().cpu().numpy()
            if p.grad is not None
            else np.zeros(p.shape, dtype=np.float32)
        )
        if not np.isfinite(g).all():
            raise NonFiniteComputationError(
                f"non-finite gradient for parameter '{name}'"
            )
        chunks.append(g.ravel())
    return np.concatenate(chunks)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    restored: bool


def _snapshot(model: MattingNet, optimizer: torch.optim.SGD):
    params = [p.detach().clone() for p in model.parameters()]
    momenta = []
    for p in model.parameters():
        state = optimizer.state.get(p, {})
        buf = state.get("momentum_buffer")
        momenta.append(None if buf is None else buf.detach().clone())
    return params, momenta


def _restore(model: MattingNet, optimizer: torch.optim.SGD, snapshot) -> None:
    params, momenta = snapshot
    with torch.no_grad():
        for p, saved in zip(model.parameters(), params):
            p.copy_(saved)
    for p, buf in zip(model.parameters(), momenta):
        state = optimizer.state.setdefault(p, {})
        if buf is None:
            state.pop("momentum_buffer", None)
        else:
            state["momentum_buffer"] = buf.clone()


def _set_lr(optimizer: torch.optim.SGD, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def momentum_flat(model: MattingNet, optimizer: torch.optim.SGD) -> np.ndarray:
    chunks = []
    for p in model.parameters():
        buf = optimizer.state.get(p, {}).get("momentum_buffer")
        if buf is None:
            chunks.append(np.zeros(p.numel(), dtype=np.float32))
        else:
            chunks.append(buf.detach().cpu().numpy().ravel())
    return np.concatenate(chunks)


def train_model(
    model: MattingNet,
    train_samples: Sequence,
    val_samples: Sequence,
    cfg: TrainConfig,
    loss_cfg: Optional[LossConfig] = None,
    checkpoint_path: Optional[Union[str, Path]] = None,
) -> list[EpochRecord]:
    """Run the full schedule; the model ends at its best-validation state.

    Per epoch: shuffled single-sample SGD steps, then a validation pass.
    Strict val increase restores the best checkpoint (with momentum); two
    epochs without strict improvement decay the lr by 0.6, five end training.
    A non-finite loss aborts with TrainingDivergedError; the best checkpoint
    remains on disk when checkpoint_path is given.
    """
    if loss_cfg is None:
        loss_cfg = LossConfig.for_patch(model.config.patch_size)
    if len(train_samples) == 0 or len(val_samples) == 0:
        raise ConfigError("train_model: empty dataset")
    optimizer = torch.optim.SGD(
        model.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum
    )
    lr = cfg.learning_rate
    best_val = math.inf
    best = _snapshot(model, optimizer)
    best_epoch = -1
    stagnant = 0
    stagnant_since_decay = 0
    history: list[EpochRecord] = []

    def save_best():
        if checkpoint_path is not None:
            save_checkpoint(
                checkpoint_path, model, momentum_flat(model, optimizer), best_epoch
            )

    for epoch in range(cfg.max_epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(
            len(train_samples)
        )
        step_losses = []
        for idx in order:
            optimizer.zero_grad(set_to_none=True)
            loss = batch_loss(model, [train_samples[int(idx)]], loss_cfg)
            value = float(loss.detach())
            if not math.isfinite(value):
                _restore(model, optimizer, best)
                save_best()
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}; best "
                    f"checkpoint is from epoch {best_epoch}"
                )
            loss.backward()
            optimizer.step()
            step_losses.append(value)
        with torch.no_grad():
            val_losses = [
                float(batch_loss(model, [s], loss_cfg)) for s in val_samples
            ]
        val_loss = float(np.mean(val_losses))
        if not math.isfinite(val_loss):
            _restore(model, optimizer, best)
            save_best()
            raise TrainingDivergedError(
                f"non-finite validation loss at epoch {epoch}; best "
                f"checkpoint is from epoch {best_epoch}"
            )
        restored = False
        if val_loss < best_val:
            best_val = val_loss
            best = _snapshot(model, optimizer)
            best_epoch = epoch
            stagnant = 0
            stagnant_since_decay = 0
            save_best()
        else:
            stagnant += 1
            stagnant_since_decay += 1
            if val_loss > best_val:
                _restore(model, optimizer, best)
                restored = True
        history.append(
            EpochRecord(
                epoch=epoch,
                train_loss=float(np.mean(step_losses)),
                val_loss=val_loss,
                lr=lr,
                restored=restored,
            )
        )
        if stagnant >= cfg.patience_stop:
            break
        if stagnant_since_decay >= cfg.patience_decay:
            lr *= cfg.lr_decay
            _set_lr(optimizer, lr)
            stagnant_since_decay = 0
    _restore(model, optimizer, best)
    save_best()
    return history


# Checkpoint container: one JSON header line, then raw little-endian float32
# parameter and momentum blocks. Deliberately timestamp-free so identical
# runs produce identical bytes.
_CHECKPOINT_MAGIC = "dualmatte-checkpoint"
_CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: Union[str, Path],
    model: MattingNet,
    momentum: Optional[np.ndarray] = None,
    epoch: int = -1,
) -> None:
    params = get_flat_params(model).astype("<f4")
    if momentum is None:
        momentum = np.zeros_like(params)
    momentum = np.asarray(momentum, dtype="<f4")
    if momentum.size != params.size:
        raise DimensionMismatchError(
            f"momentum vector has {momentum.size} values, expected {params.size}"
        )
    header = {
        "format": _CHECKPOINT_MAGIC,
        "version": _CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "config_sha256": config_hash(model.config),
        "epoch": int(epoch),
        "param_count": int(params.size),
    }
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(p, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(params.tobytes())
            fh.write(momentum.tobytes())
    except OSError as exc:
        raise InputOutputError(f"{p}: cannot write checkpoint: {exc}") from exc


def load_checkpoint(
    path: Union[str, Path],
    expected_config: Optional[ModelConfig] = None,
) -> tuple[MattingNet, np.ndarray, int]:
    """Returns (model with weights loaded, momentum vector, epoch)."""
    p = Path(path)
    try:
        with open(p, "rb") as fh:
            header_line = fh.readline()
            blob = fh.read()
    except OSError as exc:
        raise InputOutputError(f"{p}: cannot read checkpoint: {exc}") from exc
    try:
        header = json.loads(header_line.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputOutputError(f"{p}: not a checkpoint file") from exc
    if header.get("format") != _CHECKPOINT_MAGIC:
        raise InputOutputError(f"{p}: not a checkpoint file")
    if header.get("version") != _CHECKPOINT_VERSION:
        raise InputOutputError(
            f"{p}: unsupported checkpoint version {header.get('version')}"
        )
    config = ModelConfig(**header["config"])
    if config_hash(config) != header.get("config_sha256"):
        raise InputOutputError(f"{p}: checkpoint config hash mismatch")
    if expected_config is not None and config != expected_config:
        raise ConfigError(
            f"{p}: checkpoint config {asdict(config)} does not match expected "
            f"{asdict(expected_config)}"
        )
    n = int(header["param_count"])
    expected_bytes = 2 * 4 * n
    if len(blob) != expected_bytes:
        raise InputOutputError(
            f"{p}: checkpoint payload is {len(blob)} bytes, expected "
            f"{expected_bytes}"
        )
    # copy: frombuffer views are read-only and torch wants writable memory
    params = np.frombuffer(blob[: 4 * n], dtype="<f4").copy()
    momentum = np.frombuffer(blob[4 * n :], dtype="<f4").copy()
    model = MattingNet(config)
    set_flat_params(model, params)
    total = sum(p_.numel() for p_ in model.parameters())
    if total != n:
        raise InputOutputError(
            f"{p}: checkpoint has {n} parameters, model built from its config "
            f"has {total}"
        )
    return model, momentum.copy(), int(header["epoch"])


def tile_predictor(model: MattingNet):
    """Adapter for the tiler: (p1, p2) numpy (P, P, 3) -> two (P, P, 4)."""
    model.eval()

    def predict(p1: np.ndarray, p2: np.ndarray):
        with torch.no_grad():
            t1 = torch.as_tensor(
                np.ascontiguousarray(p1.transpose(2, 0, 1))[None],
                dtype=torch.float32,
            )
            t2 = torch.as_tensor(
                np.ascontiguousarray(p2.transpose(2, 0, 1))[None],
                dtype=torch.float32,
            )
            out1, out2 = model(t1, t2)
        return (
            out1[0].numpy().transpose(1, 2, 0),
            out2[0].numpy().transpose(1, 2, 0),
        )

    return predict
