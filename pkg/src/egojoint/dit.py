"""Triple-branch diffusion transformer over text, video and motion tokens.

Text and video branches share every weight except their AdaLN modulation;
the motion branch has its own narrower weights and exists only in the lower
half of the stack. All branches meet in one joint attention per layer,
restricted by the interaction mask.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .mask import TokenLayout, build_interaction_mask


class EmptyAttentionRowError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    width: int = 64  # D, shared attention width (text/video branch width too)
    motion_width: int = 32  # D_m
    text_width: int = 32  # D_t, text encoder output width
    layers_full: int = 4
    heads: int = 2
    patch: int = 2
    text_len: int = 8  # L_t
    vocab_size: int = 32
    video_channels: int = 3  # C_v
    video_frames: int = 3  # latent frames F_v
    video_grid: tuple = (8, 8)  # latent spatial size
    motion_channels: int = 16  # C_m
    motion_frames: int = 5  # latent frames F_m
    mlp_ratio: int = 4
    time_freq_dim: int = 64
    rope_base: float = 100.0
    use_mask: bool = True
    compression: int = 4
    rate_ratio: int = 2

    def __post_init__(self):
        self.video_grid = tuple(self.video_grid)
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if any(g % self.patch for g in self.video_grid):
            raise ValueError("video grid must be divisible by the patch size")
        for name in ("width", "motion_width", "layers_full", "heads", "video_frames", "motion_frames"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.text_len < 0:
            raise ValueError("text_len must be non-negative")

    @property
    def layers_motion(self) -> int:
        return self.layers_full // 2

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def video_tokens_per_frame(self) -> int:
        return (self.video_grid[0] // self.patch) * (self.video_grid[1] // self.patch)

    def layout(self, with_video: bool = True) -> TokenLayout:
        return TokenLayout(
            self.text_len, self.video_frames if with_video else 0, self.video_tokens_per_frame, self.motion_frames
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["video_grid"] = list(self.video_grid)
        return d


# --------------------------------------------------------------------------
# positional / timestep encodings


def sinusoidal(pos: torch.Tensor, dim: int, base: float = 10000.0) -> torch.Tensor:
    """Interleaved [sin, cos] encoding; position 0 gives (0, 1, 0, 1, ...)."""
    half = dim // 2
    freqs = torch.exp(-math.log(base) * torch.arange(half, dtype=torch.float64) / half)
    ang = pos.to(torch.float64)[..., None] * freqs
    out = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1).flatten(-2)
    return out.to(torch.get_default_dtype())


def rope_dims(head_dim: int) -> tuple[int, int, int]:
    """Split of the head dimension over (t, h, w); every part even."""
    d_hw = 2 * (head_dim // 6)
    d_t = head_dim - 2 * d_hw
    if d_t <= 0 or d_t % 2:
        raise ValueError(f"head_dim {head_dim} cannot be split for 3D RoPE")
    return d_t, d_hw, d_hw


def apply_rope(x: torch.Tensor, positions: torch.Tensor, dims: tuple[int, ...], base: float = 100.0) -> torch.Tensor:
    """Rotate consecutive channel pairs of x (..., L, hd) per axis.

    positions is (L, n_axes); axis a owns dims[a] consecutive channels.
    """
    outs = []
    start = 0
    for a, d in enumerate(dims):
        xa = x[..., start : start + d]
        k = torch.arange(d // 2, dtype=x.dtype, device=x.device)
        theta = base ** (-2.0 * k / d)
        ang = positions[:, a].to(x.dtype)[:, None] * theta  # (L, d/2)
        cos, sin = torch.cos(ang), torch.sin(ang)
        x1, x2 = xa[..., 0::2], xa[..., 1::2]
        r1 = x1 * cos - x2 * sin
        r2 = x1 * sin + x2 * cos
        outs.append(torch.stack([r1, r2], dim=-1).flatten(-2))
        start += d
    if start < x.shape[-1]:
        outs.append(x[..., start:])
    return torch.cat(outs, dim=-1)


class TimestepEmbedder(nn.Module):
    """y = MLP([sin(t_v), sin(t_m)])."""

    def __init__(self, width: int, freq_dim: int = 64):
        super().__init__()
        self.freq_dim = freq_dim
        self.mlp = nn.Sequential(nn.Linear(2 * freq_dim, width), nn.SiLU(), nn.Linear(width, width))

    def forward(self, t_v: torch.Tensor, t_m: torch.Tensor) -> torch.Tensor:
        e = torch.cat([sinusoidal(t_v, self.freq_dim), sinusoidal(t_m, self.freq_dim)], dim=-1)
        return self.mlp(e)


# --------------------------------------------------------------------------
# attention and modulation


def joint_attention(q, k, v, allowed: torch.Tensor | None = None) -> torch.Tensor:
    """Scaled dot-product attention; blocked logits are -inf before softmax.

    q, k, v: (B, H, L, d); allowed: (L, L) or (B, L, L) boolean, True = permitted.
    """
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if allowed is not None:
        if allowed.dim() == 3:
            allowed = allowed[:, None]
        if not bool(allowed.any(-1).all()):
            raise EmptyAttentionRowError("a query row has no permitted keys")
        logits = logits.masked_fill(~allowed, float("-inf"))
    return torch.softmax(logits, dim=-1) @ v


def adaln_modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """scale * LayerNorm(x) + shift, with per-sample shift/scale broadcast over tokens."""
    h = F.layer_norm(x, x.shape[-1:])
    return scale[:, None] * h + shift[:, None]


class AdaLN(nn.Module):
    """Six modulation vectors from y: (shift, scale, gate) for attention and MLP.

    Scales are returned as 1 + raw so a zero output means plain LayerNorm.
    """

    def __init__(self, y_width: int, width: int, n: int = 6):
        super().__init__()
        self.n = n
        self.proj = nn.Linear(y_width, n * width)
        nn.init.normal_(self.proj.weight, std=0.02)
        nn.init.zeros_(self.proj.bias)

    def forward(self, y: torch.Tensor):
        # (shift1, scale1, gate1, shift2, scale2, gate2), or (shift, scale) when n == 2
        parts = list(self.proj(F.silu(y)).chunk(self.n, dim=-1))
        for i in ((1, 4) if self.n == 6 else (1,)):
            parts[i] = 1.0 + parts[i]
        return parts


class BranchWeights(nn.Module):
    """Attention projections and MLP of one branch; qkv maps width -> D."""

    def __init__(self, width: int, attn_width: int, mlp_ratio: int = 4):
        super().__init__()
        self.qkv = nn.Linear(width, 3 * attn_width)
        self.out = nn.Linear(attn_width, width)
        self.mlp = nn.Sequential(nn.Linear(width, mlp_ratio * width), nn.GELU(approximate="tanh"), nn.Linear(mlp_ratio * width, width))


class JointBlock(nn.Module):
    def __init__(self, cfg: ModelConfig, with_motion: bool):
        super().__init__()
        D = cfg.width
        self.heads = cfg.heads
        self.shared = BranchWeights(D, D, cfg.mlp_ratio)  # text and video
        self.ada_text = AdaLN(D, D)
        self.ada_video = AdaLN(D, D)
        self.with_motion = with_motion
        if with_motion:
            self.motion = BranchWeights(cfg.motion_width, D, cfg.mlp_ratio)
            self.ada_motion = AdaLN(D, cfg.motion_width)

    def _split_heads(self, x):
        B, L, _ = x.shape
        return x.view(B, L, self.heads, -1).transpose(1, 2)

    def forward(self, streams: dict, y: torch.Tensor, allowed, rope=None) -> dict:
        """streams maps 'text'/'video'/'motion' to (B, L_b, width_b), ordered as concatenated."""
        branches = {"text": (self.shared, self.ada_text), "video": (self.shared, self.ada_video)}
        if self.with_motion:
            branches["motion"] = (self.motion, self.ada_motion)
        names = [n for n in streams if n in branches]
        mods, qs, ks, vs, lens = {}, [], [], [], []
        for n in names:
            w, ada = branches[n]
            mods[n] = ada(y)
            shift1, scale1 = mods[n][0], mods[n][1]
            h = adaln_modulate(streams[n], shift1, scale1)
            q, k, v = w.qkv(h).chunk(3, dim=-1)
            q, k, v = self._split_heads(q), self._split_heads(k), self._split_heads(v)
            if n == "video" and rope is not None:
                pos, dims, base = rope
                q, k = apply_rope(q, pos, dims, base), apply_rope(k, pos, dims, base)
            qs.append(q), ks.append(k), vs.append(v), lens.append(streams[n].shape[1])
        o = joint_attention(torch.cat(qs, 2), torch.cat(ks, 2), torch.cat(vs, 2), allowed)
        o = o.transpose(1, 2).flatten(2)
        out = dict(streams)
        for n, part in zip(names, o.split(lens, dim=1)):
            w, _ = branches[n]
            _, _, gate1, shift2, scale2, gate2 = mods[n]
            x = streams[n] + gate1[:, None] * w.out(part)
            x = x + gate2[:, None] * w.mlp(adaln_modulate(x, shift2, scale2))
            out[n] = x
        return out


class FinalLayer(nn.Module):
    def __init__(self, y_width: int, width: int, out_dim: int):
        super().__init__()
        self.ada = AdaLN(y_width, width, n=2)
        self.linear = nn.Linear(width, out_dim)
        nn.init.normal_(self.linear.weight, std=0.02)
        nn.init.zeros_(self.linear.bias)

    def forward(self, x, y):
        shift, scale = self.ada(y)
        return self.linear(adaln_modulate(x, shift, scale))


# --------------------------------------------------------------------------
# model


class JointDiT(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        D, Dm = cfg.width, cfg.motion_width
        p, Cv = cfg.patch, cfg.video_channels
        # frozen stand-in for a pretrained text encoder
        self.text_table = nn.Embedding(cfg.vocab_size, cfg.text_width)
        self.text_table.weight.requires_grad_(False)
        self.null_text = nn.Parameter(torch.randn(max(cfg.text_len, 1), cfg.text_width) * 0.02)
        self.text_in = nn.Linear(cfg.text_width, D)
        self.video_in = nn.Linear(p * p * Cv, D)
        self.motion_in = nn.Linear(cfg.motion_channels, Dm)
        self.t_embed = TimestepEmbedder(D, cfg.time_freq_dim)
        self.blocks = nn.ModuleList([JointBlock(cfg, i < cfg.layers_motion) for i in range(cfg.layers_full)])
        self.video_out = FinalLayer(D, D, p * p * Cv)
        self.motion_out = FinalLayer(D, Dm, cfg.motion_channels)
        self._layouts = {}
        self._rope = None

    # parameter groups ----------------------------------------------------

    def text_branch_parameters(self):
        """Text-branch weights; shared with the video branch except AdaLN."""
        yield from self.text_in.parameters()
        for b in self.blocks:
            yield from b.shared.parameters()
            yield from b.ada_text.parameters()

    def motion_branch_parameters(self):
        yield from self.motion_in.parameters()
        yield from self.motion_out.parameters()
        for b in self.blocks:
            if b.with_motion:
                yield from b.motion.parameters()
                yield from b.ada_motion.parameters()

    # helpers ---------------------------------------------------------------

    def allowed_mask(self, with_video: bool, device=None) -> torch.Tensor:
        key = (with_video, self.cfg.use_mask)
        if key not in self._layouts:
            m = build_interaction_mask(
                self.cfg.layout(with_video), self.cfg.compression, self.cfg.rate_ratio, enabled=self.cfg.use_mask
            )
            self._layouts[key] = torch.from_numpy(m.allowed)
        return self._layouts[key].to(device)

    def video_rope(self):
        if self._rope is None:
            cfg = self.cfg
            gh, gw = cfg.video_grid[0] // cfg.patch, cfg.video_grid[1] // cfg.patch
            t, h, w = np.meshgrid(np.arange(cfg.video_frames), np.arange(gh), np.arange(gw), indexing="ij")
            pos = torch.from_numpy(np.stack([t.ravel(), h.ravel(), w.ravel()], -1))
            self._rope = (pos, rope_dims(cfg.head_dim), cfg.rope_base)
        return self._rope

    def patchify(self, z_v: torch.Tensor) -> torch.Tensor:
        """(B, F, h, w, C) -> (B, F * h/p * w/p, p*p*C)."""
        B, Fv, h, w, C = z_v.shape
        p = self.cfg.patch
        x = z_v.reshape(B, Fv, h // p, p, w // p, p, C).permute(0, 1, 2, 4, 3, 5, 6)
        return x.reshape(B, Fv * (h // p) * (w // p), p * p * C)

    def unpatchify(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        p, C = cfg.patch, cfg.video_channels
        h, w = cfg.video_grid
        B = x.shape[0]
        x = x.reshape(B, cfg.video_frames, h // p, w // p, p, p, C).permute(0, 1, 2, 4, 3, 5, 6)
        return x.reshape(B, cfg.video_frames, h, w, C)

    def embed_text(self, tokens: torch.Tensor, drop: torch.Tensor | None = None):
        """Returns (embeddings (B, L_t, D_t), key-valid mask (B, L_t))."""
        emb = self.text_table(tokens)
        valid = tokens != 0
        if drop is not None and bool(drop.any()):
            null = self.null_text[: self.cfg.text_len].expand_as(emb)
            emb = torch.where(drop[:, None, None], null, emb)
            valid = torch.where(drop[:, None], torch.ones_like(valid), valid)
        return emb, valid

    # forward ---------------------------------------------------------------

    def forward(
        self,
        z_v: torch.Tensor | None,
        z_m: torch.Tensor,
        text: torch.Tensor,
        t_v: torch.Tensor,
        t_m: torch.Tensor,
        text_drop: torch.Tensor | None = None,
        allowed: torch.Tensor | None = None,
    ):
        """Predict (eps_v, eps_m). z_v=None runs text+motion only (lower half).

        ``allowed`` overrides the configured (L, L) interaction mask.
        """
        cfg = self.cfg
        B = z_m.shape[0]
        if z_m.shape[1:] != (cfg.motion_frames, cfg.motion_channels):
            raise ValueError(f"motion latent shape {tuple(z_m.shape)} does not match config")
        with_video = z_v is not None
        if with_video and z_v.shape[1:] != (cfg.video_frames, *cfg.video_grid, cfg.video_channels):
            raise ValueError(f"video latent shape {tuple(z_v.shape)} does not match config")
        y = self.t_embed(t_v, t_m)

        streams = {}
        L_t = cfg.text_len
        if L_t:
            emb, valid = self.embed_text(text, text_drop)
            streams["text"] = self.text_in(emb)
        if with_video:
            xv = self.video_in(self.patchify(z_v))
            frame = torch.arange(cfg.video_frames).repeat_interleave(cfg.video_tokens_per_frame)
            streams["video"] = xv + sinusoidal(frame, cfg.width).to(xv)
        xm = self.motion_in(z_m)
        streams["motion"] = xm + sinusoidal(torch.arange(cfg.motion_frames), cfg.motion_width).to(xm)

        base = self.allowed_mask(with_video, z_m.device) if allowed is None else allowed
        if L_t:
            key_ok = torch.ones(B, base.shape[-1], dtype=torch.bool, device=z_m.device)
            key_ok[:, :L_t] = valid
            full = base[None] & key_ok[:, None, :]
        else:
            full = base
        rope = self.video_rope() if with_video else None

        eps_m = None
        n_layers = cfg.layers_full if with_video else cfg.layers_motion
        for i in range(n_layers):
            blk = self.blocks[i]
            if i == cfg.layers_motion:
                eps_m = self.motion_out(streams.pop("motion"), y)
                # motion leaves the stack; drop its rows/columns
                keep = slice(0, full.shape[-1] - cfg.motion_frames)
                full = full[..., keep, keep]
            streams = blk(streams, y, full, rope)
        if eps_m is None:
            eps_m = self.motion_out(streams.pop("motion"), y)
        eps_v = self.unpatchify(self.video_out(streams["video"], y)) if with_video else None
        return eps_v, eps_m
