"""Noise schedule, asynchronous two-timestep objective, guidance and reverse sampling.

A denoiser is any callable
``(z_v | None, z_m, text, t_v, t_m, text_drop) -> (eps_v | None, eps_m)``;
``JointDiT`` satisfies it, and tests use randomized stubs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

MODES = ("t2vm", "tm2v", "tv2m")


class NonFiniteLossError(RuntimeError):
    pass


class NoiseSchedule:
    """Linear betas over t = 1..T; index 0 is the clean sample (alpha_bar = 1)."""

    def __init__(self, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2):
        if T < 1:
            raise ValueError("T must be >= 1")
        self.T = T
        betas = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
        self.betas = torch.from_numpy(betas)
        self.alphas = 1.0 - self.betas
        self.alpha_bar = torch.cumprod(self.alphas, 0)

    def ab(self, t: torch.Tensor) -> torch.Tensor:
        t = torch.as_tensor(t)
        if bool((t < 0).any()) or bool((t > self.T).any()):
            raise ValueError(f"timestep out of range [0, {self.T}]")
        return self.alpha_bar[t.long()]


def _bcast(a: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return a.to(like.dtype).reshape(-1, *([1] * (like.dim() - 1)))


def add_noise(z: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule | None = None, alpha_bar=None):
    """sqrt(ab) z + sqrt(1 - ab) eps, with ab from the schedule at t or given directly."""
    if eps.shape != z.shape:
        raise ValueError("noise must match the latent shape")
    ab = schedule.ab(t) if alpha_bar is None else torch.as_tensor(alpha_bar, dtype=torch.float64)
    ab = ab.expand(z.shape[0]) if ab.dim() == 0 else ab
    ab = _bcast(ab, z)
    return ab.sqrt() * z + (1.0 - ab).sqrt() * eps


# --------------------------------------------------------------------------
# training objective


@dataclass
class StepOutput:
    loss: torch.Tensor
    loss_v: torch.Tensor | None
    loss_m: torch.Tensor
    t_v: torch.Tensor
    t_m: torch.Tensor


def _masked_mse(pred, target, skip_first: bool):
    if skip_first:
        pred, target = pred[:, 1:], target[:, 1:]
    return ((pred - target) ** 2).mean()


def diffusion_loss(
    model: Callable,
    z_m: torch.Tensor,
    text: torch.Tensor,
    schedule: NoiseSchedule,
    gen: torch.Generator,
    z_v: torch.Tensor | None = None,
    asynchronous: bool = True,
    text_dropout: float = 0.1,
    clamp_first_frame: bool = True,
) -> StepOutput:
    """Mean-squared noise prediction for both modalities (sum of the two means).

    z_v=None is text-to-motion pretraining: no video tokens, t_v pinned to T.
    With ``clamp_first_frame`` the first latent frame stays clean (it carries
    the given initial observation / pose) and is excluded from the loss.
    The draw order of ``gen`` is fixed: t_m, t_v, eps_m, eps_v, dropout.
    """
    B = z_m.shape[0]
    T = schedule.T
    t_m = torch.randint(0, T + 1, (B,), generator=gen)
    t_v_draw = torch.randint(0, T + 1, (B,), generator=gen)
    t_v = t_v_draw if asynchronous else t_m.clone()
    eps_m = torch.randn(z_m.shape, generator=gen, dtype=z_m.dtype)
    eps_v = torch.randn(z_v.shape, generator=gen, dtype=z_v.dtype) if z_v is not None else None
    drop = torch.rand(B, generator=gen) < text_dropout

    zm_t = add_noise(z_m, t_m, eps_m, schedule)
    if clamp_first_frame:
        zm_t = torch.cat([z_m[:, :1], zm_t[:, 1:]], 1)
    if z_v is None:
        t_v = torch.full((B,), T, dtype=torch.long)
        zv_t = None
    else:
        zv_t = add_noise(z_v, t_v, eps_v, schedule)
        if clamp_first_frame:
            zv_t = torch.cat([z_v[:, :1], zv_t[:, 1:]], 1)

    pv, pm = model(zv_t, zm_t, text, t_v, t_m, drop)
    loss_m = _masked_mse(pm, eps_m, clamp_first_frame)
    loss_v = _masked_mse(pv, eps_v, clamp_first_frame) if z_v is not None else None
    loss = loss_m if loss_v is None else loss_m + loss_v
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"non-finite diffusion loss (loss_m={loss_m.item()}, loss_v={None if loss_v is None else loss_v.item()})")
    return StepOutput(loss, loss_v, loss_m, t_v, t_m)


# --------------------------------------------------------------------------
# guidance


@dataclass(frozen=True)
class GuidanceScales:
    w_t: float = 6.0
    w_v: float = 4.0
    w_m: float = 4.0

    def __post_init__(self):
        if not all(np.isfinite([self.w_t, self.w_v, self.w_m])):
            raise ValueError("guidance scales must be finite")


def _full(B, value):
    return torch.full((B,), int(value), dtype=torch.long)


def _cat(*xs):
    return torch.cat(xs, 0)


def cfg_tm2v(model, zv_t, zm_0, zm_T, text, t, T, scales: GuidanceScales):
    """Text+motion -> video guidance; three evaluations batched into one call."""
    B = zv_t.shape[0]
    no, yes = torch.zeros(B, dtype=torch.bool), torch.ones(B, dtype=torch.bool)
    tv = _full(B, t) if not torch.is_tensor(t) else t
    ev, _ = model(
        _cat(zv_t, zv_t, zv_t),
        _cat(zm_T, zm_T, zm_0),
        _cat(text, text, text),
        _cat(tv, tv, tv),
        _cat(_full(B, T), _full(B, T), _full(B, 0)),
        _cat(yes, no, no),
    )
    e_null, e_text, e_full = ev.chunk(3, 0)
    return e_null + scales.w_t * (e_text - e_null) + scales.w_m * (e_full - e_text)


def cfg_tv2m(model, zm_t, zv_0, zv_T, text, t, T, scales: GuidanceScales):
    """Text+video -> motion guidance; mirror of ``cfg_tm2v``."""
    B = zm_t.shape[0]
    no, yes = torch.zeros(B, dtype=torch.bool), torch.ones(B, dtype=torch.bool)
    tm = _full(B, t) if not torch.is_tensor(t) else t
    _, em = model(
        _cat(zv_T, zv_T, zv_0),
        _cat(zm_t, zm_t, zm_t),
        _cat(text, text, text),
        _cat(_full(B, T), _full(B, T), _full(B, 0)),
        _cat(tm, tm, tm),
        _cat(yes, no, no),
    )
    e_null, e_text, e_full = em.chunk(3, 0)
    return e_null + scales.w_t * (e_text - e_null) + scales.w_v * (e_full - e_text)


def cfg_t2vm(model, zv_t, zm_t, zv_T, zm_T, text, t, T, scales: GuidanceScales):
    """Joint guidance at a shared timestep; the fully conditioned call is shared (5 evaluations)."""
    B = zv_t.shape[0]
    no, yes = torch.zeros(B, dtype=torch.bool), torch.ones(B, dtype=torch.bool)
    tt, TT = _full(B, t), _full(B, T)
    # rows: [video null, video text, motion null, motion text, both at t]
    ev, em = model(
        _cat(zv_t, zv_t, zv_T, zv_T, zv_t),
        _cat(zm_T, zm_T, zm_t, zm_t, zm_t),
        _cat(text, text, text, text, text),
        _cat(tt, tt, TT, TT, tt),
        _cat(TT, TT, tt, tt, tt),
        _cat(yes, no, yes, no, no),
    )
    v_null, v_text, _, _, v_full = ev.chunk(5, 0)
    _, _, m_null, m_text, m_full = em.chunk(5, 0)
    eps_v = v_null + scales.w_t * (v_text - v_null) + scales.w_m * (v_full - v_text)
    eps_m = m_null + scales.w_t * (m_text - m_null) + scales.w_v * (m_full - m_text)
    return eps_v, eps_m


def vanilla_cfg(model, zv_t, zm_t, text, t, w_t):
    """Text-only guidance at a synchronized timestep (the w/o-AD variant)."""
    B = zm_t.shape[0]
    no, yes = torch.zeros(B, dtype=torch.bool), torch.ones(B, dtype=torch.bool)
    tt = _full(B, t)
    ev, em = model(
        None if zv_t is None else _cat(zv_t, zv_t),
        _cat(zm_t, zm_t),
        _cat(text, text),
        _cat(tt, tt),
        _cat(tt, tt),
        _cat(yes, no),
    )
    em_null, em_text = em.chunk(2, 0)
    eps_m = em_null + w_t * (em_text - em_null)
    eps_v = None
    if ev is not None:
        ev_null, ev_text = ev.chunk(2, 0)
        eps_v = ev_null + w_t * (ev_text - ev_null)
    return eps_v, eps_m


# --------------------------------------------------------------------------
# reverse process


def timestep_sequence(T: int, steps: int) -> list[int]:
    """Strictly decreasing respaced timesteps from T down to 0 (steps + 1 entries)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    steps = min(steps, T)
    ts = np.round(np.linspace(T, 0, steps + 1)).astype(int)
    return ts.tolist()


def reverse_update(x, eps, t, t_prev, schedule: NoiseSchedule, method: str, gen: torch.Generator | None):
    ab_t = schedule.alpha_bar[t].item()
    ab_p = schedule.alpha_bar[t_prev].item()
    x0 = (x - (1.0 - ab_t) ** 0.5 * eps) / ab_t**0.5
    if method == "ddim":
        return ab_p**0.5 * x0 + (1.0 - ab_p) ** 0.5 * eps
    if method == "ddpm":
        beta = 1.0 - ab_t / ab_p
        mean = (ab_p**0.5 * beta / (1.0 - ab_t)) * x0 + ((1.0 - beta) ** 0.5 * (1.0 - ab_p) / (1.0 - ab_t)) * x
        if t_prev == 0:
            return mean
        var = beta * (1.0 - ab_p) / (1.0 - ab_t)
        return mean + var**0.5 * torch.randn(x.shape, generator=gen, dtype=x.dtype)
    raise ValueError(f"unknown sampling method {method!r}")


@dataclass
class SampleResult:
    z_v: torch.Tensor | None
    z_m: torch.Tensor | None
    trajectory: list


def _clamp(z, first):
    if z is None or first is None:
        return z
    return torch.cat([first.to(z.dtype), z[:, 1:]], 1)


def reverse_sample(
    model: Callable,
    mode: str,
    text: torch.Tensor,
    schedule: NoiseSchedule,
    video_shape: tuple,
    motion_shape: tuple,
    gen: torch.Generator,
    steps: int = 50,
    method: str = "ddim",
    scales: GuidanceScales = GuidanceScales(),
    z_v0: torch.Tensor | None = None,
    z_m0: torch.Tensor | None = None,
    first_v: torch.Tensor | None = None,
    first_m: torch.Tensor | None = None,
    asynchronous: bool = True,
    keep_trajectory: bool = False,
) -> SampleResult:
    """Denoise from pure noise under one of the three guidance modes.

    Shapes exclude the batch dimension, which comes from ``text``. tm2v
    needs ``z_m0`` (clean motion), tv2m needs ``z_v0``. ``first_v``/``first_m``
    are clean first latent frames (B, 1, ...) re-imposed after every update.
    With ``asynchronous=False`` the model is the synchronized-timestep variant
    and the given modality is instead noised to the current t at each step.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "tm2v" and z_m0 is None:
        raise ValueError("tm2v sampling needs the clean motion latent")
    if mode == "tv2m" and z_v0 is None:
        raise ValueError("tv2m sampling needs the clean video latent")
    B, T = text.shape[0], schedule.T
    ts = timestep_sequence(T, steps)
    gen_v = mode in ("t2vm", "tm2v")
    gen_m = mode in ("t2vm", "tv2m")
    # draw order is fixed so a seed pins the whole trajectory
    zv = torch.randn((B, *video_shape), generator=gen)
    zm = torch.randn((B, *motion_shape), generator=gen)
    zv_T = torch.randn((B, *video_shape), generator=gen)
    zm_T = torch.randn((B, *motion_shape), generator=gen)
    if mode == "tv2m":
        first_v = None
    if mode == "tm2v":
        first_m = None
    zv, zm = _clamp(zv, first_v) if gen_v else None, _clamp(zm, first_m) if gen_m else None
    traj = []
    for t, t_prev in zip(ts[:-1], ts[1:]):
        if not asynchronous:
            cond_v = zv if gen_v else add_noise(z_v0, _full(B, t), torch.randn(z_v0.shape, generator=gen), schedule)
            cond_m = zm if gen_m else add_noise(z_m0, _full(B, t), torch.randn(z_m0.shape, generator=gen), schedule)
            ev, em = vanilla_cfg(model, cond_v, cond_m, text, t, scales.w_t)
        elif mode == "t2vm":
            ev, em = cfg_t2vm(model, zv, zm, zv_T, zm_T, text, t, T, scales)
        elif mode == "tm2v":
            ev, em = cfg_tm2v(model, zv, z_m0, zm_T, text, t, T, scales), None
        else:
            ev, em = None, cfg_tv2m(model, zm, z_v0, zv_T, text, t, T, scales)
        if gen_v:
            zv = _clamp(reverse_update(zv, ev, t, t_prev, schedule, method, gen), first_v)
        if gen_m:
            zm = _clamp(reverse_update(zm, em, t, t_prev, schedule, method, gen), first_m)
        if keep_trajectory:
            traj.append((t_prev, None if zv is None else zv.clone(), None if zm is None else zm.clone()))
    return SampleResult(zv, zm, traj)


# --------------------------------------------------------------------------
# video tokenizer: 8x spatial average pool, causal 4x temporal grouping


def video_to_latent(video: np.ndarray | torch.Tensor, spatial: int = 8, temporal: int = 4) -> torch.Tensor:
    """(B, N+1, H, W, 3) uint8 -> (B, N/4 + 1, H/8, W/8, 3) in [0, 1].

    Latent 0 is frame 0; latent l averages frames 4(l-1)+1 .. 4l.
    """
    v = torch.as_tensor(np.asarray(video), dtype=torch.float32) / 255.0
    B, N1, H, W, C = v.shape
    if (N1 - 1) % temporal:
        raise ValueError(f"{N1} frames is not 1 mod {temporal}")
    if H % spatial or W % spatial:
        raise ValueError("frame size must be divisible by the spatial factor")
    v = v.reshape(B, N1, H // spatial, spatial, W // spatial, spatial, C).mean((3, 5))
    rest = v[:, 1:].reshape(B, (N1 - 1) // temporal, temporal, H // spatial, W // spatial, C).mean(2)
    return torch.cat([v[:, :1], rest], 1)


def latent_to_video(z: torch.Tensor, spatial: int = 8, temporal: int = 4) -> np.ndarray:
    """Approximate inverse of ``video_to_latent``: nearest-neighbour upsampling."""
    z = z.detach().clamp(0.0, 1.0)
    frames = torch.cat([z[:, :1], z[:, 1:].repeat_interleave(temporal, 1)], 1)
    frames = frames.repeat_interleave(spatial, 2).repeat_interleave(spatial, 3)
    return (frames * 255.0).round().to(torch.uint8).numpy()
