"""Token layout and the observation/action attention mask between video and motion.

Raw video frame i is the observation O^i. Action A^i is the chunk of r pose
frames P^{ri+1} .. P^{ri+r} leading from O^i to O^{i+1}. With causal temporal
compression c, latent 0 holds only frame 0 and latent l >= 1 holds raw frames
c(l-1)+1 .. cl. A video latent may look at motion latents carrying the
actions that produced its observations; a motion latent may look at the video
latents holding the observations before and after each of its actions;
the two initial latents see each other.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MaskConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TokenLayout:
    text_len: int
    video_frames: int  # F_v latent frames (0 when video is absent)
    video_tokens_per_frame: int
    motion_frames: int  # F_m latent frames

    @property
    def video_len(self) -> int:
        return self.video_frames * self.video_tokens_per_frame

    @property
    def total(self) -> int:
        return self.text_len + self.video_len + self.motion_frames

    @property
    def text(self) -> slice:
        return slice(0, self.text_len)

    @property
    def video(self) -> slice:
        return slice(self.text_len, self.text_len + self.video_len)

    @property
    def motion(self) -> slice:
        s = self.text_len + self.video_len
        return slice(s, s + self.motion_frames)

    def video_frame_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.video_frames), self.video_tokens_per_frame)

    def motion_frame_index(self) -> np.ndarray:
        return np.arange(self.motion_frames)


def _latent_range(l: int, c: int, n_raw: int) -> tuple[int, int]:
    if l == 0:
        return 0, 0
    return c * (l - 1) + 1, min(c * l, n_raw)


def _actions_of_motion_latent(l: int, c: int, r: int, n_actions: int) -> tuple[int, int] | None:
    """Inclusive range of actions whose pose frames meet the latent's raw frames."""
    if l == 0:
        return None
    lo, hi = c * (l - 1) + 1, c * l
    # A^i spans poses r*i+1 .. r*i+r
    i0 = max(0, -(-(lo - r) // r))
    i1 = min(n_actions - 1, (hi - 1) // r)
    return (i0, i1) if i0 <= i1 else None


def latent_permissions(video_frames: int, motion_frames: int, c: int = 4, r: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """(video_to_motion [F_v, F_m], motion_to_video [F_m, F_v]) boolean matrices."""
    if video_frames < 1 or motion_frames < 1:
        raise MaskConfigError("both modalities need at least one latent frame")
    n_v = c * (video_frames - 1)
    n_m = c * (motion_frames - 1)
    if n_m != r * n_v:
        raise MaskConfigError(
            f"latent lengths F_v={video_frames}, F_m={motion_frames} inconsistent with c={c}, r={r}"
        )
    v2m = np.zeros((video_frames, motion_frames), dtype=bool)
    m2v = np.zeros((motion_frames, video_frames), dtype=bool)
    acts = [_actions_of_motion_latent(lm, c, r, n_v) for lm in range(motion_frames)]
    for lv in range(video_frames):
        o0, o1 = _latent_range(lv, c, n_v)
        # O^i needs A^{i-1}
        need0, need1 = o0 - 1, o1 - 1
        for lm, a in enumerate(acts):
            if a is None:
                continue
            if a[0] <= need1 and need0 <= a[1] and need1 >= 0:
                v2m[lv, lm] = True
            # A^i sees O^i and O^{i+1}
            if a[0] <= o1 and o0 <= a[1] + 1:
                m2v[lm, lv] = True
    v2m[0, 0] = True
    m2v[0, 0] = True
    return v2m, m2v


@dataclass(frozen=True)
class InteractionMask:
    allowed: np.ndarray  # (L, L) bool; row = query, column = key
    layout: TokenLayout

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            for row in self.allowed.astype(int):
                w.writerow(row.tolist())

    def to_png(self, path: str | Path, scale: int = 4) -> None:
        from PIL import Image

        img = np.where(self.allowed, 255, 0).astype(np.uint8)
        # tint modality blocks so the layout is readable
        rgb = np.stack([img] * 3, -1)
        lay = self.layout
        for sl, tint in ((lay.text, (0, 0, 60)), (lay.video, (0, 60, 0)), (lay.motion, (60, 0, 0))):
            rgb[sl, sl] = np.clip(rgb[sl, sl].astype(int) - np.array(tint), 0, 255).astype(np.uint8)
        Image.fromarray(rgb).resize((rgb.shape[1] * scale, rgb.shape[0] * scale), Image.NEAREST).save(path)


def build_interaction_mask(layout: TokenLayout, c: int = 4, r: int = 2, enabled: bool = True) -> InteractionMask:
    """Token-level mask; every spatial token of a video latent shares its row.

    ``enabled=False`` gives full attention (the no-mask ablation).
    """
    L = layout.total
    allowed = np.ones((L, L), dtype=bool)
    if enabled and layout.video_frames > 0 and layout.motion_frames > 0:
        v2m, m2v = latent_permissions(layout.video_frames, layout.motion_frames, c, r)
        vf = layout.video_frame_index()
        allowed[layout.video, layout.motion] = v2m[vf]
        allowed[layout.motion, layout.video] = m2v[:, vf]
    return InteractionMask(allowed, layout)
