"""Toy convolutional denoiser: conditioning by channel concatenation, x0 prediction.

A small encoder-decoder (4 residual conv blocks over a 3-level pyramid) with a
sinusoidal timestep embedding added in every block. Around 100K parameters at
the default widths, so it trains in minutes on a CPU; it is a stand-in for a
large U-Net, not a faithful miniature of one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .dataset import Dataset
from .errors import DimensionError, FormatError, TrainingDivergedError, ValidationError
from .grids import (
    ConditioningSet,
    SamplePair,
    StandardizationStats,
    apply_dropout,
    assemble_conditioning,
    assemble_targets,
    sample_crop,
)
from .losses import total_loss

TARGET_CHANNELS = 3  # standardized speed, direction sine, direction cosine


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10_000.0) -> torch.Tensor:
    """Standard sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype) / half)
    args = t[:, None] * freqs[None, :].to(t.device)
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResBlock(nn.Module):
    """Residual conv block with timestep scale-shift modulation.

    The per-channel scale lets the network gate feature paths by noise level;
    without it the conditional/unconditional branch gap cannot collapse at low
    noise, which inflates guided sampling bias.
    """

    def __init__(self, c_in: int, c_out: int, emb_dim: int):
        super().__init__()
        groups = math.gcd(4, c_in)
        self.norm = nn.GroupNorm(groups, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, 2 * c_out)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(self.act(self.norm(x)))
        scale, shift = self.emb(emb)[:, :, None, None].chunk(2, dim=1)
        h = h * (1.0 + scale) + shift
        h = self.conv2(self.act(h))
        return self.skip(x) + h


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor; serialized into checkpoints."""

    in_channels: int
    out_channels: int = TARGET_CHANNELS
    widths: tuple[int, int, int] = (20, 32, 48)
    emb_dim: int = 32
    variables: tuple[str, ...] = ()
    schedule_T: int = 1000


class DenoiserNet(nn.Module):
    """Encoder-decoder over a 3-level pyramid; input is noisy targets + conditioning."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        c0, c1, c2 = spec.widths
        e = spec.emb_dim
        self.time_mlp = nn.Sequential(nn.Linear(e, 2 * e), nn.SiLU(), nn.Linear(2 * e, e))
        self.stem = nn.Conv2d(spec.in_channels, c0, 3, padding=1)
        self.enc1 = ResBlock(c0, c0, e)
        self.enc2 = ResBlock(c0, c1, e)
        self.mid = ResBlock(c1, c2, e)
        self.dec2 = ResBlock(c2 + c1, c1, e)
        self.dec1 = ResBlock(c1 + c0, c0, e)
        self.head = nn.Conv2d(c0, spec.out_channels, 3, padding=1)
        self.down = nn.AvgPool2d(2)
        self.up = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        emb = self.time_mlp(timestep_embedding(t.to(x.dtype), self.spec.emb_dim))
        h1 = self.enc1(self.stem(x), emb)
        h2 = self.enc2(self.down(h1), emb)
        h3 = self.mid(self.down(h2), emb)
        d2 = self.dec2(torch.cat([self.up(h3), h2], dim=1), emb)
        d1 = self.dec1(torch.cat([self.up(d2), h1], dim=1), emb)
        return self.head(d1)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def speed_direction_to_uv(channels: torch.Tensor, speed_mean: float,
                          speed_std: float) -> torch.Tensor:
    """Physical flow components from (standardized speed, sin, cos) channels.

    u = speed * cos(theta), v = speed * sin(theta), with speed destandardized.
    """
    speed = channels[..., 0, :, :] * speed_std + speed_mean
    u = speed * channels[..., 2, :, :]
    v = speed * channels[..., 1, :, :]
    return torch.stack([u, v], dim=-3)


class TorchDenoiser:
    """Adapter exposing a trained net through the batched numpy denoiser protocol."""

    def __init__(self, net: DenoiserNet, stats: StandardizationStats,
                 hr_shape: tuple[int, int], scale_factor: int):
        self.net = net
        self.stats = stats
        self.hr_shape = tuple(hr_shape)
        self.scale_factor = scale_factor
        self.sample_shape = (net.spec.out_channels,) + self.hr_shape
        self._view_cache: dict = {}

    def _assembled(self, cond: ConditioningSet) -> np.ndarray:
        key = (tuple(id(v.grids[0].values) for v in cond.variables), cond.presence_key())
        hit = self._view_cache.get(key)
        if hit is not None:
            return hit
        out = assemble_conditioning(cond, self.hr_shape, self.stats, self.scale_factor)
        if len(self._view_cache) > 256:
            self._view_cache.clear()
        self._view_cache[key] = out
        return out

    def __call__(self, x_t: np.ndarray, cond: ConditioningSet, t: int) -> np.ndarray:
        x_t = np.asarray(x_t)
        squeeze = x_t.ndim == 3
        if squeeze:
            x_t = x_t[None]
        if x_t.shape[1:] != self.sample_shape:
            raise DimensionError(f"expected {self.sample_shape}, got {x_t.shape[1:]}")
        cond_np = self._assembled(cond)
        dtype = next(self.net.parameters()).dtype
        batch = x_t.shape[0]
        cond_t = torch.as_tensor(cond_np, dtype=dtype).expand(batch, -1, -1, -1)
        x = torch.as_tensor(x_t, dtype=dtype)
        t_tensor = torch.full((batch,), float(t), dtype=dtype)
        with torch.no_grad():
            out = self.net(torch.cat([x, cond_t], dim=1), t_tensor)
        out_np = out.numpy().astype(np.float64)
        return out_np[0] if squeeze else out_np


@dataclass(frozen=True)
class TrainConfig:
    train_steps: int = 3000
    batch_size: int = 8
    learning_rate: float = 2e-3
    warmup_steps: int = 500
    p_drop: float = 0.1
    lam_dwt: float = 1e-3
    lam_div: float = 1e-3
    lam_sobel: float = 1e-3
    seed: int = 0
    crop_size: int | None = None
    variables: tuple[str, ...] = ()  # empty = all manifest inputs

    def __post_init__(self):
        if not (0.0 <= self.p_drop < 1.0):
            raise ValidationError(f"p_drop must be in [0, 1), got {self.p_drop}")
        if min(self.lam_dwt, self.lam_div, self.lam_sobel) < 0:
            raise ValidationError("loss weights must be nonnegative")
        if self.train_steps < 0 or self.batch_size < 1:
            raise ValidationError("bad training schedule")


def model_for_dataset(dataset: Dataset, config: TrainConfig,
                      widths: tuple[int, int, int] = (20, 32, 48)) -> DenoiserNet:
    """Build a net sized for the dataset's conditioning channels (after variable selection).

    Initialization is seeded from the training config so a config snapshot
    reproduces the run bit-exactly.
    """
    pair = dataset.pairs[0]
    cond = pair.conditioning
    if config.variables:
        cond = cond.subset_variables(list(config.variables))
    spec = ModelSpec(
        in_channels=TARGET_CHANNELS + cond.channel_count(),
        out_channels=TARGET_CHANNELS,
        widths=widths,
        variables=tuple(v.spec.name for v in cond.variables),
        schedule_T=1000,
    )
    torch.manual_seed(config.seed)
    return DenoiserNet(spec)


def _training_view(pair: SamplePair, variables: tuple[str, ...]) -> SamplePair:
    if not variables:
        return pair
    return SamplePair(
        hr_targets=pair.hr_targets,
        conditioning=pair.conditioning.subset_variables(list(variables)),
        stats=pair.stats,
        timestamp_id=pair.timestamp_id,
        scale_factor=pair.scale_factor,
    )


def train(
    dataset: Dataset,
    net: DenoiserNet,
    config: TrainConfig,
    sched,
    log_every: int = 0,
) -> list[float]:
    """Train in place; returns the per-step loss curve.

    Each step draws a timestamp (optionally a crop), a timestep, noise, and an
    independent dropout decision per conditioning group, then takes one Adam
    step on the combined loss. Deterministic given the config seed.
    """
    from .schedule import forward_diffuse

    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)

    def lr_mult(step: int) -> float:
        if config.warmup_steps and step < config.warmup_steps:
            return (step + 1) / config.warmup_steps
        total = max(config.train_steps - config.warmup_steps, 1)
        progress = (step - config.warmup_steps) / total
        return 0.5 * (1.0 + math.cos(math.pi * min(max(progress, 0.0), 1.0)))

    scheduler = torch.optim.lr_scheduler.LambdaLR(opt, lr_mult)
    stats = dataset.stats
    speed_mean, speed_std = stats.mean("speed"), stats.std("speed")

    def uv_fn(channels: torch.Tensor) -> torch.Tensor:
        return speed_direction_to_uv(channels, speed_mean, speed_std)

    curve: list[float] = []
    net.train()
    for step in range(config.train_steps):
        xs, conds, targets, ts = [], [], [], []
        for _ in range(config.batch_size):
            pair = dataset.pairs[int(rng.integers(0, len(dataset)))]
            pair = _training_view(pair, config.variables)
            if config.crop_size and config.crop_size < pair.hr_shape[0]:
                pair = sample_crop(pair, config.crop_size, rng_seed=int(rng.integers(2 ** 31)))
            groups = pair.conditioning.dropout_groups()
            dropped = {g for g in groups if rng.random() < config.p_drop}
            cond = apply_dropout(pair.conditioning, dropped)
            target = assemble_targets(pair)
            t = int(rng.integers(1, sched.T + 1))
            eps = rng.standard_normal(target.shape)
            xs.append(forward_diffuse(target, t, eps, sched))
            conds.append(assemble_conditioning(cond, pair.hr_shape, stats, pair.scale_factor))
            targets.append(target)
            ts.append(t)

        dtype = next(net.parameters()).dtype
        x_in = torch.as_tensor(np.concatenate([np.stack(xs), np.stack(conds)], axis=1),
                               dtype=dtype)
        target_t = torch.as_tensor(np.stack(targets), dtype=dtype)
        t_tensor = torch.as_tensor(np.asarray(ts, dtype=np.float64), dtype=dtype)

        opt.zero_grad()
        pred = net(x_in, t_tensor)
        loss = total_loss(pred, target_t, config.lam_dwt, config.lam_div,
                          config.lam_sobel, uv_fn=uv_fn)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss at step {step} (t batch {ts}); aborting"
            )
        loss.backward()
        opt.step()
        scheduler.step()
        curve.append(float(loss.detach()))
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}/{config.train_steps} loss {curve[-1]:.4f}")
    return curve


def validation_l1(dataset: Dataset, denoiser: TorchDenoiser, sched,
                  variables: tuple[str, ...] = (), t: int = 500, seed: int = 0) -> float:
    """Mean denoising L1 over a dataset at a fixed noise level (no sampling loop)."""
    from .schedule import forward_diffuse

    rng = np.random.default_rng(seed)
    errs = []
    for pair in dataset.pairs:
        view = _training_view(pair, variables)
        target = assemble_targets(view)
        eps = rng.standard_normal(target.shape)
        x_t = forward_diffuse(target, t, eps, sched)
        pred = denoiser(x_t, view.conditioning, t)
        errs.append(np.abs(pred - target).mean())
    return float(np.mean(errs))


def save_checkpoint(path: str, net: DenoiserNet, stats: StandardizationStats,
                    hr_shape: tuple[int, int], scale_factor: int) -> None:
    """Architecture descriptor as JSON, then flat little-endian float32 parameters."""
    header = {
        "format": "windsr-checkpoint-1",
        "spec": {
            "in_channels": net.spec.in_channels,
            "out_channels": net.spec.out_channels,
            "widths": list(net.spec.widths),
            "emb_dim": net.spec.emb_dim,
            "variables": list(net.spec.variables),
            "schedule_T": net.spec.schedule_T,
        },
        "stats": {k: list(v) for k, v in stats.table.items()},
        "hr_shape": list(hr_shape),
        "scale_factor": scale_factor,
        "tensors": [],
    }
    payload = bytearray()
    state = net.state_dict()
    for name in sorted(state):
        tensor = state[name].detach().cpu().to(torch.float32).numpy()
        header["tensors"].append({"name": name, "shape": list(tensor.shape)})
        payload.extend(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(bytes(payload))


def load_checkpoint(path: str) -> TorchDenoiser:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint: {exc}") from exc
    if len(raw) < 8:
        raise FormatError("checkpoint too short")
    header_len = int.from_bytes(raw[:8], "little")
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format") != "windsr-checkpoint-1":
        raise FormatError(f"unknown checkpoint format {header.get('format')!r}")
    spec = ModelSpec(
        in_channels=header["spec"]["in_channels"],
        out_channels=header["spec"]["out_channels"],
        widths=tuple(header["spec"]["widths"]),
        emb_dim=header["spec"]["emb_dim"],
        variables=tuple(header["spec"]["variables"]),
        schedule_T=header["spec"]["schedule_T"],
    )
    net = DenoiserNet(spec)
    cursor = 8 + header_len
    state = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = cursor + 4 * count
        if end > len(raw):
            raise FormatError(f"checkpoint truncated at tensor {entry['name']!r}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=cursor).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
        cursor = end
    missing = set(net.state_dict()) - set(state)
    if missing:
        raise FormatError(f"checkpoint missing tensors: {sorted(missing)[:3]}")
    net.load_state_dict(state)
    net.eval()
    stats = StandardizationStats({k: tuple(v) for k, v in header["stats"].items()})
    return TorchDenoiser(net, stats, tuple(header["hr_shape"]), header["scale_factor"])
