"""Model configs, stubs and gradient checks shared by the unit and acceptance tests."""
import math

import torch

from egojoint.dit import ModelConfig

from oracles import central_difference, rel_error

TINY = ModelConfig(width=12, motion_width=8, text_width=6, layers_full=2, heads=2, patch=2, text_len=3, vocab_size=8,
                   video_channels=2, video_frames=2, video_grid=(4, 4), motion_channels=3, motion_frames=3,
                   mlp_ratio=2, time_freq_dim=8)


def tiny_inputs(cfg, B=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    zv = torch.randn(B, cfg.video_frames, *cfg.video_grid, cfg.video_channels, generator=g)
    zm = torch.randn(B, cfg.motion_frames, cfg.motion_channels, generator=g)
    text = torch.randint(1, cfg.vocab_size, (B, cfg.text_len), generator=g)
    text[:, -1] = 0
    t = torch.randint(0, 1000, (B,), generator=g)
    return zv, zm, text, t, t.flip(0)


def block_streams(cfg, B=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    return {
        "text": torch.randn(B, 2, cfg.width, generator=g),
        "video": torch.randn(B, 2, cfg.width, generator=g),
        "motion": torch.randn(B, 2, cfg.motion_width, generator=g),
    }, torch.randn(B, cfg.width, generator=g)


def fd_check(loss_fn, params, h=1e-3, tol=1e-3, max_entries=None):
    g = torch.Generator().manual_seed(0)
    for name, p in params:
        analytic = torch.autograd.grad(loss_fn(), p)[0].reshape(-1)
        idx = None
        if max_entries is not None and p.numel() > max_entries:
            idx = torch.randperm(p.numel(), generator=g)[:max_entries]
        numeric = central_difference(loss_fn, p.data, h, idx).reshape(-1)
        if idx is not None:
            analytic, numeric = analytic[idx], numeric[idx]
        err = rel_error(analytic, numeric)
        assert err < tol, (name, err)


VSHAPE = (3, 2, 2, 2)
MSHAPE = (5, 3)
T = 1000


class StubModel:
    """Random smooth function of every input, row by row; counts evaluated rows."""

    def __init__(self, seed, dtype=torch.float64):
        g = torch.Generator().manual_seed(seed)
        nv, nm = math.prod(VSHAPE), math.prod(MSHAPE)
        d_in = nv + nm + 4 + 3
        self.Wv = torch.randn(d_in, nv, generator=g, dtype=dtype) / math.sqrt(d_in)
        self.Wm = torch.randn(d_in, nm, generator=g, dtype=dtype) / math.sqrt(d_in)
        self.Wn = torch.randn(nv, nm, generator=g, dtype=dtype) / math.sqrt(nv)
        self.dtype = dtype
        self.rows = 0
        self.calls = 0

    def __call__(self, zv, zm, text, tv, tm, drop):
        B = zm.shape[0]
        self.calls += 1
        self.rows += B
        v = torch.zeros(B, math.prod(VSHAPE), dtype=self.dtype) if zv is None else zv.reshape(B, -1).to(self.dtype)
        feats = torch.cat(
            [v, zm.reshape(B, -1).to(self.dtype), text.to(self.dtype), (tv / T)[:, None].to(self.dtype),
             (tm / T)[:, None].to(self.dtype), drop[:, None].to(self.dtype)],
            1,
        )
        ev = torch.tanh(feats @ self.Wv).reshape(B, *VSHAPE)
        em = torch.tanh(feats @ self.Wm + v @ self.Wn).reshape(B, *MSHAPE)
        return (None if zv is None else ev), em


def randn(shape, g):
    return torch.randn(shape, generator=g, dtype=torch.float64)


def call(model, zv, zm, text, tv, tm, drop):
    B = zm.shape[0]
    full = lambda x: torch.full((B,), int(x), dtype=torch.long)
    return model(zv, zm, text, full(tv), full(tm), torch.full((B,), drop))
