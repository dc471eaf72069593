"""Causal 1D convolutional VAE over per-frame motion features.

Every convolution pads only on the past side, and normalisation is taken over
channels within each frame, so latent l depends on input frames <= 4l and
decoded frame n depends on latents <= ceil(n / 4).
"""
from __future__ import annotations

import logging
import math
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import OptimConfig, VaeConfig
from .kinematics import head_centric_layout, root_centric_layout

log = logging.getLogger(__name__)

HEAD_GROUPS = {
    "head_3D": ("h_p", "hdot_p"),
    "head_6D": ("h_r", "hdot_r"),
    "joint_3D": ("j_p", "j_v"),
    "joint_6D": ("j_r",),
}
ROOT_GROUPS = {
    "root": ("rdot_a", "rdot_xz", "r_y"),
    "joint_3D": ("j_p", "j_v"),
    "joint_6D": ("j_r",),
    "contact": ("c_f",),
}


class LengthError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


def loss_groups(rep_kind: str, joint_count: int) -> dict[str, list[slice]]:
    if rep_kind == "head":
        lay, groups = head_centric_layout(joint_count), HEAD_GROUPS
    elif rep_kind == "root":
        lay, groups = root_centric_layout(joint_count), ROOT_GROUPS
    else:
        raise ValueError(rep_kind)
    return {g: [lay[f] for f in fields] for g, fields in groups.items()}


class CausalConv1d(nn.Conv1d):
    def __init__(self, cin, cout, kernel_size=3, stride=1):
        super().__init__(cin, cout, kernel_size, stride=stride)
        self.left_pad = kernel_size - 1

    def forward(self, x):
        return super().forward(F.pad(x, (self.left_pad, 0)))


class FrameGroupNorm(nn.Module):
    """Group norm over channels, computed independently for every frame."""

    def __init__(self, groups: int, channels: int, eps: float = 1e-5):
        super().__init__()
        self.groups = math.gcd(groups, channels)
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        B, C, N = x.shape
        h = x.view(B, self.groups, C // self.groups, N)
        mu = h.mean(2, keepdim=True)
        var = h.var(2, keepdim=True, unbiased=False)
        h = ((h - mu) / torch.sqrt(var + self.eps)).view(B, C, N)
        return h * self.weight[:, None] + self.bias[:, None]


class ResBlock(nn.Module):
    def __init__(self, cin, cout, groups):
        super().__init__()
        self.norm1 = FrameGroupNorm(groups, cin)
        self.conv1 = CausalConv1d(cin, cout)
        self.norm2 = FrameGroupNorm(groups, cout)
        self.conv2 = CausalConv1d(cout, cout)
        self.skip = nn.Conv1d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class Downsample(nn.Module):
    """Length 2k+1 -> k+1; output i sees inputs 2i-2 .. 2i."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv = CausalConv1d(cin, cout, 3, stride=2)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    """Length k+1 -> 2k+1: frame 0 kept, later frames doubled, then a causal conv."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv = CausalConv1d(cin, cout, 3)

    def forward(self, x):
        x = torch.cat([x[..., :1], x[..., 1:].repeat_interleave(2, dim=-1)], dim=-1)
        return self.conv(x)


class MotionVAE(nn.Module):
    def __init__(self, feature_dim: int, cfg: VaeConfig = VaeConfig()):
        super().__init__()
        self.cfg = cfg
        self.feature_dim = feature_dim
        c0, c1, c2 = cfg.channels
        g, nb = cfg.groups, cfg.blocks_per_stage
        C = cfg.latent_channels
        self.register_buffer("feat_mean", torch.zeros(feature_dim))
        self.register_buffer("feat_std", torch.ones(feature_dim))

        enc = [CausalConv1d(feature_dim, c0)]
        enc += [ResBlock(c0, c0, g) for _ in range(nb)]
        enc += [Downsample(c0, c1)] + [ResBlock(c1, c1, g) for _ in range(nb)]
        enc += [Downsample(c1, c2)] + [ResBlock(c2, c2, g) for _ in range(nb)]
        self.encoder = nn.Sequential(*enc)
        self.enc_out = nn.Sequential(FrameGroupNorm(g, c2), nn.SiLU(), CausalConv1d(c2, 2 * C))

        dec = [CausalConv1d(C, c2)] + [ResBlock(c2, c2, g) for _ in range(nb)]
        dec += [Upsample(c2, c1)] + [ResBlock(c1, c1, g) for _ in range(nb)]
        dec += [Upsample(c1, c0)] + [ResBlock(c0, c0, g) for _ in range(nb)]
        self.decoder = nn.Sequential(*dec)
        self.dec_out = nn.Sequential(FrameGroupNorm(g, c0), nn.SiLU(), CausalConv1d(c0, feature_dim))

    @staticmethod
    def latent_length(n_frames: int) -> int:
        if n_frames < 1 or (n_frames - 1) % 4:
            raise LengthError(f"sequence length {n_frames} is not 1 mod 4")
        return (n_frames - 1) // 4 + 1

    @staticmethod
    def output_length(latent_len: int) -> int:
        return 4 * (latent_len - 1) + 1

    def set_normalization(self, features: np.ndarray) -> None:
        """Per-feature standardisation from a (S, N, F) training array."""
        flat = torch.as_tensor(features.reshape(-1, features.shape[-1]), dtype=self.feat_mean.dtype)
        self.feat_mean.copy_(flat.mean(0))
        self.feat_std.copy_(flat.std(0, unbiased=False).clamp_min(self.cfg.std_floor))

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, N, F) raw features -> (mean, logvar), each (B, N/4 + 1, C_m)."""
        if x.shape[-1] != self.feature_dim:
            raise LengthError(f"expected {self.feature_dim} features, got {x.shape[-1]}")
        self.latent_length(x.shape[1])
        h = ((x - self.feat_mean) / self.feat_std).transpose(1, 2)
        h = self.enc_out(self.encoder(h))
        mean, logvar = h.transpose(1, 2).chunk(2, dim=-1)
        return mean, logvar.clamp(-30.0, 20.0)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """(B, L, C_m) -> (B, 4(L-1)+1, F) raw features."""
        if z.dim() != 3 or z.shape[-1] != self.cfg.latent_channels:
            raise LengthError(f"latent must be (B, L, {self.cfg.latent_channels}), got {tuple(z.shape)}")
        h = self.dec_out(self.decoder(z.transpose(1, 2)))
        return h.transpose(1, 2) * self.feat_std + self.feat_mean

    def forward(self, x, noise: torch.Tensor | None = None, generator: torch.Generator | None = None):
        mean, logvar = self.encode(x)
        if noise is None:
            noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        z = mean + torch.exp(0.5 * logvar) * noise
        return self.decode(z), mean, logvar, z


def kl_divergence(mean: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Per-element mean of KL(N(mean, exp(logvar)) || N(0, 1))."""
    return 0.5 * (mean.pow(2) + logvar.exp() - 1.0 - logvar).mean()


def vae_loss(x, recon, mean, logvar, kl_weight: float, groups: dict[str, list[slice]]):
    """Average over groups of (group reconstruction + kl_weight * KL).

    A group's reconstruction is the sum of the mean squared errors of its
    feature fields. Returns (total, {group: rec, ..., "kl": kl}).
    """
    if x.shape != recon.shape:
        raise ValueError("input and reconstruction shapes differ")
    kl = kl_divergence(mean, logvar)
    parts = {}
    terms = []
    for name, slices in groups.items():
        rec = sum(((recon[..., s] - x[..., s]) ** 2).mean() for s in slices)
        parts[name] = rec
        terms.append(rec + kl_weight * kl)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    total = total / len(terms)
    parts["kl"] = kl
    return total, parts


def lr_lambda(optim: OptimConfig) -> Callable[[int], float]:
    """Linear warmup then cosine decay to 10% of the base rate."""

    def f(step: int) -> float:
        if step < optim.warmup:
            return (step + 1) / optim.warmup
        prog = min(1.0, (step - optim.warmup) / max(1, optim.steps - optim.warmup))
        return 0.1 + 0.9 * 0.5 * (1.0 + math.cos(math.pi * prog))

    return f


def vae_train(
    features: np.ndarray,
    rep_kind: str,
    joint_count: int,
    cfg: VaeConfig = VaeConfig(),
    optim: OptimConfig = OptimConfig(),
    seed: int = 0,
    model: MotionVAE | None = None,
    opt_state: dict | None = None,
    start_step: int = 0,
    on_step: Callable[[int, dict], None] | None = None,
    stop_at: int | None = None,
):
    """Train on a (S, N, F) feature array. Returns (model, optimizer, history).

    Resuming: pass the model and optimizer state of a checkpoint together
    with its step; data order and noise are keyed on the absolute step.
    ``stop_at`` halts early without changing the schedule, which still
    spans ``optim.steps``.
    """
    torch.manual_seed(seed)
    if model is None:
        model = MotionVAE(features.shape[-1], cfg)
        model.set_normalization(features)
    groups = loss_groups(rep_kind, joint_count)
    data = torch.as_tensor(features, dtype=torch.float32)
    opt = torch.optim.Adam(model.parameters(), lr=optim.lr, betas=tuple(optim.betas), weight_decay=optim.weight_decay)
    if opt_state is not None:
        opt.load_state_dict(opt_state)
    sched_fn = lr_lambda(optim)
    history = []
    last_good = start_step
    model.train()
    for step in range(start_step, optim.steps if stop_at is None else min(stop_at, optim.steps)):
        for g in opt.param_groups:
            g["lr"] = optim.lr * sched_fn(step)
        gen = torch.Generator().manual_seed(seed * 1_000_003 + step)
        if len(data) > optim.batch_size:
            idx = torch.randperm(len(data), generator=gen)[: optim.batch_size]
            batch = data[idx]
        else:
            batch = data
        recon, mean, logvar, _ = model(batch, generator=gen)
        loss, parts = vae_loss(batch, recon, mean, logvar, cfg.kl_weight, groups)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite VAE loss at step {step} (last finite step {last_good}); "
                + ", ".join(f"{k}={v.item():.4g}" for k, v in parts.items())
            )
        opt.zero_grad(set_to_none=True)
        loss.backward()
        if optim.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), optim.grad_clip)
        opt.step()
        last_good = step
        rec = {"step": step + 1, "loss": loss.item(), **{k: v.item() for k, v in parts.items()}}
        history.append(rec)
        if on_step is not None:
            on_step(step + 1, rec)
    model.eval()
    return model, opt, history


@torch.no_grad()
def reconstruction_errors(model: MotionVAE, features: np.ndarray, rep_kind: str, joint_count: int) -> dict[str, float]:
    """Per-group reconstruction loss of the posterior mean (no sampling)."""
    x = torch.as_tensor(features, dtype=torch.float32)
    mean, _ = model.encode(x)
    recon = model.decode(mean)
    groups = loss_groups(rep_kind, joint_count)
    return {g: float(sum(((recon[..., s] - x[..., s]) ** 2).mean() for s in sl)) for g, sl in groups.items()}
