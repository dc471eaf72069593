"""Video-motion consistency metrics, Frechet distance and retrieval metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .camera import CameraIntrinsics, Se3Trajectory, in_view, project
from .kinematics import MotionSequence, axis_angle_to_matrix, geodesic_angle, heading_angle
from .synth import LEFT_HAND_COLOR, RIGHT_HAND_COLOR, generate_motion, parse_template

log = logging.getLogger(__name__)

HANDS = ("left", "right")


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class Alignment:
    aligned: Se3Trajectory
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    degenerate: bool = False


def align_trajectories(cam: Se3Trajectory, head: Se3Trajectory) -> Alignment:
    """Rigidly map cam pose 0 onto head pose 0, then fit a scale about it.

    The scale minimises sum ||s (c_i - c_0) - (h_i - h_0)||^2. When every
    camera position coincides the scale is undefined: s = 1 and the
    ``degenerate`` flag is set.
    """
    if len(cam) != len(head):
        raise ValueError(f"trajectory lengths differ ({len(cam)} vs {len(head)})")
    if len(cam) < 2:
        raise ValueError("alignment needs at least two poses")
    R = head.rotations[0] @ cam.rotations[0].T
    t = head.positions[0] - cam.positions[0] @ R.T
    rc = R @ cam.rotations
    pc = cam.positions @ R.T + t
    dc = pc - head.positions[0]
    dh = head.positions - head.positions[0]
    denom = float((dc * dc).sum())
    degenerate = denom < 1e-18
    if degenerate:
        log.warning("camera positions are all identical; scale fixed to 1")
        s = 1.0
    else:
        s = float((dc * dh).sum()) / denom
    pc = head.positions[0] + s * dc
    return Alignment(Se3Trajectory(rc, pc, cam.timestamps), s, R, t, degenerate)


def trans_err(cam: Se3Trajectory, head: Se3Trajectory) -> float:
    """Mean Euclidean distance in metres between corresponding positions."""
    return float(np.linalg.norm(cam.positions - head.positions, axis=-1).mean())


def rot_err(cam: Se3Trajectory, head: Se3Trajectory) -> float:
    """Mean geodesic angle in degrees between corresponding orientations."""
    return float(np.degrees(geodesic_angle(cam.rotations, head.rotations)).mean())


def head_track(motion: MotionSequence, mount: np.ndarray | None = None) -> Se3Trajectory:
    rot, pos = motion.head_pose(mount)
    return Se3Trajectory(rot, pos, np.arange(len(motion)) / motion.fps)


def resample_nearest(track: Se3Trajectory, timestamps: np.ndarray) -> Se3Trajectory:
    """Pick the pose nearest in time for each target timestamp."""
    idx = np.abs(track.timestamps[None, :] - np.asarray(timestamps)[:, None]).argmin(1)
    return Se3Trajectory(track.rotations[idx], track.positions[idx], np.asarray(timestamps, dtype=np.float64))


def pose_errors(cam: Se3Trajectory, motion: MotionSequence, mount: np.ndarray | None = None) -> tuple[float, float]:
    """(TransErr, RotErr) of a camera track against a motion's head track."""
    head = resample_nearest(head_track(motion, mount), cam.timestamps)
    al = align_trajectories(cam, head)
    return trans_err(al.aligned, head), rot_err(al.aligned, head)


# camera pose providers map (sample, index) to a camera trajectory


def gt_pose_provider(sample, index: int = 0) -> Se3Trajectory:
    return sample.gt_camera


def perturbed_pose_provider(sigma_m: float = 0.05, sigma_deg: float = 2.0, seed: int = 0) -> Callable:
    """Ground truth with seeded Gaussian position and rotation noise."""

    def provider(sample, index: int = 0) -> Se3Trajectory:
        cam = sample.gt_camera
        rng = np.random.default_rng([seed, sample.seed])
        n = len(cam)
        aa = rng.normal(0.0, np.radians(sigma_deg), (n, 3))
        rot = axis_angle_to_matrix(aa) @ cam.rotations
        pos = cam.positions + rng.normal(0.0, sigma_m, (n, 3))
        return Se3Trajectory(rot, pos, cam.timestamps)

    return provider


def file_pose_provider(directory: str | Path) -> Callable:
    """Reads <directory>/<index>.npz with rotations, positions, timestamps (external SLAM output)."""
    root = Path(directory)

    def provider(sample, index: int) -> Se3Trajectory:
        with np.load(root / f"{index:06d}.npz") as z:
            return Se3Trajectory(z["rotations"], z["positions"], z["timestamps"])

    return provider


# --------------------------------------------------------------------------
# hands


def visibility_from_arrays(
    cam_rot: np.ndarray, cam_pos: np.ndarray, wrists: tuple[np.ndarray, np.ndarray], K: CameraIntrinsics
) -> np.ndarray:
    """(frames, 2) bool for per-frame camera poses and (left, right) wrist points."""
    out = np.zeros((len(cam_pos), 2), dtype=bool)
    for k, w in enumerate(wrists):
        pc = to_camera_frame_batched(np.asarray(w), cam_rot, cam_pos)
        u, v, d = project(pc, K)
        out[:, k] = in_view(u, v, d, K)
    return out


def to_camera_frame_batched(points: np.ndarray, rot: np.ndarray, pos: np.ndarray) -> np.ndarray:
    return np.einsum("nji,nj->ni", rot, points - pos)


def hand_visibility(
    motion: MotionSequence,
    K: CameraIntrinsics,
    mount: np.ndarray | None = None,
    frame_step: int = 2,
) -> np.ndarray:
    """(frames, 2) bool: wrist projects with positive depth inside the image.

    Motion frame frame_step * i pairs with video frame i.
    """
    sk = motion.skeleton
    rot, pos = motion.global_transforms()
    h = sk.head_index
    idx = np.arange(0, len(motion), frame_step)
    cam_r = rot[idx, h] if mount is None else rot[idx, h] @ mount
    wrists = (pos[idx, sk.index("left_wrist")], pos[idx, sk.index("right_wrist")])
    return visibility_from_arrays(cam_r, pos[idx, h], wrists, K)


def hand_presence_synthetic(video: np.ndarray, min_pixels: int = 4) -> np.ndarray:
    """(frames, 2) bool: at least ``min_pixels`` pixels carry the hand marker colour."""
    video = np.asarray(video)
    out = np.zeros((video.shape[0], 2), dtype=bool)
    for k, color in enumerate((LEFT_HAND_COLOR, RIGHT_HAND_COLOR)):
        hit = np.all(video == np.asarray(color, dtype=video.dtype), axis=-1)
        out[:, k] = hit.reshape(video.shape[0], -1).sum(1) >= min_pixels
    return out


def f_score(present: np.ndarray, visible: np.ndarray) -> float:
    present, visible = np.asarray(present, bool), np.asarray(visible, bool)
    tp = int((present & visible).sum())
    fp = int((present & ~visible).sum())
    fn = int((~present & visible).sum())
    if tp + fp + fn == 0:
        return 1.0  # vacuous agreement: the hand is never seen either way
    return 2 * tp / (2 * tp + fp + fn)


def hand_score(present: np.ndarray, visible: np.ndarray) -> float:
    """Mean over left/right of the per-hand F-score; inputs are (frames, 2) bool."""
    present, visible = np.asarray(present, bool), np.asarray(visible, bool)
    if present.shape != visible.shape or present.ndim != 2 or present.shape[1] != 2:
        raise ValueError("presence and visibility must both be (frames, 2)")
    if present.shape[0] == 0:
        raise ValueError("no frames")
    return 0.5 * (f_score(present[:, 0], visible[:, 0]) + f_score(present[:, 1], visible[:, 1]))


# --------------------------------------------------------------------------
# distributions


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_from_stats(mu_a, cov_a, mu_b, cov_b, eps: float = 0.0) -> float:
    """||mu_a - mu_b||^2 + tr(A + B - 2 (A^1/2 B A^1/2)^1/2), A, B regularised by eps I."""
    mu_a, mu_b = np.asarray(mu_a, np.float64), np.asarray(mu_b, np.float64)
    cov_a, cov_b = np.atleast_2d(cov_a).astype(np.float64), np.atleast_2d(cov_b).astype(np.float64)
    if mu_a.shape != mu_b.shape or cov_a.shape != cov_b.shape:
        raise ValueError("dimension mismatch between feature clouds")
    d = mu_a.shape[0]
    A = cov_a + eps * np.eye(d)
    B = cov_b + eps * np.eye(d)
    sa = _psd_sqrt(A)
    cross = _psd_sqrt(sa @ B @ sa)
    diff = mu_a - mu_b
    val = float(diff @ diff + np.trace(A) + np.trace(B) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def frechet_distance(a: np.ndarray, b: np.ndarray, eps: float = 1e-10) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature clouds must be (n, d) with equal d")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each cloud needs at least two samples")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("non-finite features")
    return frechet_from_stats(a.mean(0), np.cov(a, rowvar=False), b.mean(0), np.cov(b, rowvar=False), eps)


def retrieval_metrics(
    text_features: np.ndarray, motion_features: np.ndarray, pool_size: int = 32, top_k: int = 3
) -> tuple[float, float]:
    """(R-Prec@top_k, MM-Dist). Pools are consecutive chunks; a remainder chunk is dropped.

    With fewer samples than ``pool_size`` a single pool holds them all.
    """
    t, m = np.asarray(text_features, np.float64), np.asarray(motion_features, np.float64)
    if t.shape != m.shape:
        raise ValueError("text and motion features must pair one-to-one")
    n = len(t)
    pool = min(pool_size, n)
    if pool < top_k:
        raise ValueError(f"retrieval pool of {pool} is smaller than the rank cutoff {top_k}")
    hits = []
    for s in range(0, n - pool + 1, pool):
        tp, mp = t[s : s + pool], m[s : s + pool]
        dist = np.linalg.norm(mp[:, None] - tp[None], axis=-1)
        # rank of the paired text among all texts, ties broken against the pair
        own = np.diag(dist)
        rank = (dist < own[:, None]).sum(1) + ((dist == own[:, None]).sum(1) - 1)
        hits.append(rank < top_k)
    mm = float(np.linalg.norm(m - t, axis=-1).mean())
    return float(np.concatenate(hits).mean()), mm


# --------------------------------------------------------------------------
# toy feature providers


def motion_descriptor(motion: MotionSequence) -> np.ndarray:
    """Eight kinematic summary statistics in the motion's own start frame.

    (forward, lateral displacement, yaw change, head pitch change, left and
    right wrist rise, pelvis drop, mean root speed)
    """
    sk = motion.skeleton
    rot, pos = motion.global_transforms()
    yaw0 = heading_angle(motion.root_rotation[:1])[0]
    fwd = np.array([np.sin(yaw0), 0.0, np.cos(yaw0)])
    left = np.array([np.cos(yaw0), 0.0, -np.sin(yaw0)])
    d = motion.root_position[-1] - motion.root_position[0]
    yaw = heading_angle(motion.root_rotation)
    dyaw = float(np.unwrap(yaw)[-1] - np.unwrap(yaw)[0])
    h = sk.head_index

    def pitch(r):
        # positive when the forward axis points below the horizon
        return np.arcsin(np.clip(-r[:, 1, 2], -1.0, 1.0))

    hp = pitch(rot[:, h])
    lw, rw = sk.index("left_wrist"), sk.index("right_wrist")
    speed = np.linalg.norm(np.diff(motion.root_position, axis=0), axis=-1).mean()
    return np.array(
        [
            d @ fwd,
            d @ left,
            dyaw,
            float(hp.max() - hp[0]) + float(hp.min() - hp[0]),
            pos[:, lw, 1].max() - pos[0, lw, 1],
            pos[:, rw, 1].max() - pos[0, rw, 1],
            motion.root_position[0, 1] - motion.root_position[:, 1].min(),
            speed,
        ]
    )


class TemplateTextProvider:
    """Text feature = descriptor of the template's canonical motion, plus optional noise.

    The toy stand-in for a learned text encoder: a template maps to the point
    its noiseless motion occupies in descriptor space.
    """

    def __init__(self, skeleton=None, n_frames: int = 17, fps: float = 4.0, noise: float = 0.0, seed: int = 0):
        self.skeleton, self.n_frames, self.fps = skeleton, n_frames, fps
        self.noise = noise
        self.rng = np.random.default_rng(seed)
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, template: str) -> np.ndarray:
        if template not in self._cache:
            parse_template(template)
            m = generate_motion(template, self.skeleton, seed=0, n_frames=self.n_frames, fps=self.fps, jitter=False)
            self._cache[template] = motion_descriptor(m)
        f = self._cache[template]
        return f + self.rng.normal(0.0, self.noise, f.shape) if self.noise else f.copy()
