"""Procedural text-video-motion triplets with exact head-camera ground truth.

Motions come from a small grammar of action templates, videos are ray cast
from a camera rigidly mounted on the head joint, and both hands are drawn as
solid colour markers so their presence can be decided from pixels alone.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import container
from .camera import CameraIntrinsics, Se3Trajectory, in_view, project, to_camera_frame
from .kinematics import (
    PELVIS_HEIGHT,
    MotionSequence,
    Skeleton,
    axis_angle_to_matrix,
    default_skeleton,
    rot_x,
    rot_y,
    rot_z,
)

LEFT_HAND_COLOR = (0, 255, 0)
RIGHT_HAND_COLOR = (0, 0, 255)
SKY_COLOR = (200, 220, 240)
FLOOR_COLORS = ((150, 150, 150), (110, 110, 110))
HAND_RADIUS = 0.05  # m
MIN_MARKER_RADIUS = 1.5  # px, keeps >= 4 pixels even when clipped at a corner

# --------------------------------------------------------------------------
# text grammar

VOCAB = (
    "<pad> <unk> a person walks forward turns left right looks up down crouches raises "
    "the hand stands still and then slowly ahead around"
).split()
WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}
PAD_ID = 0

TEMPLATE_KINDS = (
    "stand-still",
    "walk-forward",
    "turn-left",
    "turn-right",
    "look-up",
    "look-down",
    "crouch",
    "raise-left-hand",
    "raise-right-hand",
)
DEFAULT_MAGNITUDE = {
    "stand-still": 0.0,
    "walk-forward": 1.0,  # m
    "turn-left": 90.0,  # deg
    "turn-right": 90.0,
    "look-up": 30.0,
    "look-down": 30.0,
    "crouch": 1.0,
    "raise-left-hand": 1.0,
    "raise-right-hand": 1.0,
}
_PHRASES = {
    "stand-still": "a person stands still",
    "walk-forward": "a person walks forward",
    "turn-left": "a person turns left",
    "turn-right": "a person turns right",
    "look-up": "a person looks up",
    "look-down": "a person looks down",
    "crouch": "a person crouches down",
    "raise-left-hand": "a person raises the left hand",
    "raise-right-hand": "a person raises the right hand",
}


class UnknownTemplateError(ValueError):
    pass


def parse_template(template: str) -> list[tuple[str, float]]:
    """'walk-forward 2 then turn-left 90' -> [('walk-forward', 2.0), ('turn-left', 90.0)]."""
    parts = [p.strip() for p in re.split(r"\bthen\b|,", template) if p.strip()]
    if not parts:
        raise UnknownTemplateError(f"empty template {template!r}")
    out = []
    for p in parts:
        tokens = p.split()
        kind = tokens[0].lower()
        if kind == "stand":
            kind = "stand-still"
            tokens = tokens[1:] if len(tokens) > 1 and tokens[1] == "still" else tokens
        if kind not in TEMPLATE_KINDS:
            raise UnknownTemplateError(f"unknown template {kind!r}")
        mag = DEFAULT_MAGNITUDE[kind]
        if len(tokens) > 1:
            try:
                mag = float(tokens[1])
            except ValueError:
                raise UnknownTemplateError(f"bad magnitude in {p!r}") from None
        out.append((kind, mag))
    return out


def template_text(template: str) -> str:
    """Description without magnitudes; the video is what disambiguates them."""
    steps = parse_template(template)
    phrases = [_PHRASES[k] for k, _ in steps]
    text = phrases[0]
    for p in phrases[1:]:
        text += " and then " + p.removeprefix("a person ")
    return text


def tokenize(text: str, length: int) -> np.ndarray:
    ids = [WORD_TO_ID.get(w, 1) for w in text.lower().split()][:length]
    return np.array(ids + [PAD_ID] * (length - len(ids)), dtype=np.int64)


# --------------------------------------------------------------------------
# motion generation


def _ease(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def generate_motion(
    template: str,
    skeleton: Skeleton | None = None,
    seed: int = 0,
    n_frames: int = 17,
    fps: float = 4.0,
    start: tuple[float, float, float] | None = None,
    jitter: bool = True,
) -> MotionSequence:
    """Kinematic motion for an action template, deterministic in (template, seed).

    ``start`` is (x, z, yaw in rad); drawn from the seed when omitted.
    ``jitter=False`` keeps the nominal magnitudes. Requires the default
    humanoid joint names.
    """
    sk = skeleton or default_skeleton()
    steps = parse_template(template)
    rng = np.random.default_rng(seed)
    if start is None:
        start = (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-np.pi, np.pi))
    x0, z0, yaw0 = (float(v) for v in start)

    # per-step magnitude jitter
    mags = []
    for kind, mag in steps:
        if kind in ("turn-left", "turn-right"):
            mags.append(mag + rng.uniform(-1.0, 1.0))
        elif kind == "walk-forward":
            mags.append(mag * (1.0 + rng.uniform(-0.02, 0.02)))
        else:
            mags.append(mag * (1.0 + rng.uniform(-0.05, 0.05)))
    if not jitter:
        mags = [mag for _, mag in steps]

    n = n_frames
    t = np.arange(n) / fps
    duration = max(t[-1], 1e-9)
    seg = duration / len(steps)
    progress = []
    for k in range(len(steps)):
        # complete each action at 90% of its slot so the end state is reached
        progress.append(_ease((t - k * seg) / (0.9 * seg)))
    progress = np.array(progress)  # (S, N)

    yaw = np.full(n, yaw0)
    dist = np.zeros(n)
    pitch = np.zeros(n)
    crouch = np.zeros(n)
    raise_l = np.zeros(n)
    raise_r = np.zeros(n)
    gait_env = np.zeros(n)
    for (kind, _), mag, p in zip(steps, mags, progress):
        if kind == "walk-forward":
            dist += mag * p
            gait_env = np.maximum(gait_env, np.sin(np.pi * p))
        elif kind == "turn-left":
            yaw += np.radians(mag) * p
        elif kind == "turn-right":
            yaw -= np.radians(mag) * p
        elif kind == "look-down":
            pitch += np.radians(mag) * p
        elif kind == "look-up":
            pitch -= np.radians(mag) * p
        elif kind == "crouch":
            crouch += mag * p
        elif kind == "raise-left-hand":
            raise_l += mag * p
        elif kind == "raise-right-hand":
            raise_r += mag * p

    heading = rot_y(yaw)
    root = np.zeros((n, 3))
    root[0] = (x0, 0.0, z0)
    for i in range(1, n):
        root[i] = root[i - 1] + heading[i] @ np.array([0.0, 0.0, dist[i] - dist[i - 1]])

    J = sk.joint_count
    idx = {name: sk.index(name) for name in sk.names}
    local = np.tile(np.eye(3), (n, J, 1, 1))

    # crouch: hip/knee/ankle keep the feet under the pelvis
    alpha = np.clip(crouch, 0.0, 1.2) * np.radians(45.0)
    phase = 2.0 * np.pi * dist / 1.6
    swing = 0.15 * gait_env * np.sin(phase)
    knee_swing = 0.2 * gait_env * np.maximum(0.0, np.sin(phase + np.pi / 2))
    knee_swing_r = 0.2 * gait_env * np.maximum(0.0, np.sin(phase - np.pi / 2))
    for i in range(n):
        local[i, idx["left_hip"]] = rot_x(-alpha[i] - swing[i])
        local[i, idx["right_hip"]] = rot_x(-alpha[i] + swing[i])
        local[i, idx["left_knee"]] = rot_x(2 * alpha[i] + knee_swing[i])
        local[i, idx["right_knee"]] = rot_x(2 * alpha[i] + knee_swing_r[i])
        local[i, idx["left_ankle"]] = rot_x(-alpha[i])
        local[i, idx["right_ankle"]] = rot_x(-alpha[i])
        local[i, idx["spine"]] = rot_x(0.5 * alpha[i])
        local[i, idx["neck"]] = rot_x(0.4 * pitch[i] - 0.25 * alpha[i])
        local[i, idx["head"]] = rot_x(0.6 * pitch[i] - 0.25 * alpha[i])
        la = -np.radians(90.0) * raise_l[i] + 0.6 * swing[i]
        ra = -np.radians(90.0) * raise_r[i] - 0.6 * swing[i]
        local[i, idx["left_shoulder"]] = rot_x(la) @ rot_z(0.08)
        local[i, idx["right_shoulder"]] = rot_x(ra) @ rot_z(-0.08)
        local[i, idx["left_elbow"]] = rot_x(-0.3 * raise_l[i] - 0.1)
        local[i, idx["right_elbow"]] = rot_x(-0.3 * raise_r[i] - 0.1)

    leg = 0.42
    root[:, 1] = PELVIS_HEIGHT - 2 * leg * (1.0 - np.cos(alpha))
    return MotionSequence(sk, heading, root, local, fps)


def random_motion(
    skeleton: Skeleton,
    n_frames: int,
    rng: np.random.Generator,
    yaw_only_root: bool = False,
    fps: float = 16.0,
) -> MotionSequence:
    """Unstructured random motion for property tests (not physically plausible)."""
    J = skeleton.joint_count
    if yaw_only_root:
        root_rot = rot_y(rng.uniform(-np.pi, np.pi) + np.cumsum(rng.normal(0, 0.1, n_frames)))
    else:
        base = axis_angle_to_matrix(rng.normal(size=3))
        root_rot = base @ axis_angle_to_matrix(np.cumsum(rng.normal(0, 0.1, (n_frames, 3)), axis=0))
    root_pos = rng.normal(0, 2.0, 3) + np.cumsum(rng.normal(0, 0.05, (n_frames, 3)), axis=0)
    aa = rng.normal(0, 0.6, (1, J, 3)) + np.cumsum(rng.normal(0, 0.05, (n_frames, J, 3)), axis=0)
    local = axis_angle_to_matrix(aa)
    if yaw_only_root:
        local[:, 0] = np.eye(3)
    return MotionSequence(skeleton, root_rot, root_pos, local, fps)


# --------------------------------------------------------------------------
# scenes and rendering


@dataclass(frozen=True)
class SceneSpec:
    """Axis-aligned boxes, rows of [center xyz, size xyz, rgb]."""

    boxes: np.ndarray
    floor_colors: tuple = FLOOR_COLORS
    sky_color: tuple = SKY_COLOR
    seed: int = 0
    room_half_size: float = 6.0

    def __post_init__(self):
        b = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 9)
        object.__setattr__(self, "boxes", b)
        lo = b[:, :3] - b[:, 3:6] / 2
        hi = b[:, :3] + b[:, 3:6] / 2
        r = self.room_half_size
        if np.any(b[:, 3:6] <= 0):
            raise ValueError("box sizes must be positive")
        if b.size and (np.any(np.abs(lo[:, [0, 2]]) > r) or np.any(np.abs(hi[:, [0, 2]]) > r)):
            raise ValueError("boxes must lie inside the room")


def generate_scene(seed: int, n_boxes: int = 10, room_half_size: float = 6.0, clear_radius: float = 3.5) -> SceneSpec:
    """Boxes scattered outside a clear central disc where the actor moves."""
    rng = np.random.default_rng(seed)
    boxes = []
    while len(boxes) < n_boxes:
        size = rng.uniform([0.4, 0.4, 0.4], [1.5, 2.5, 1.5])
        lim = room_half_size - size[[0, 2]].max() / 2
        cx, cz = rng.uniform(-lim, lim, 2)
        if np.hypot(cx, cz) - size[[0, 2]].max() < clear_radius:
            continue
        color = rng.integers(40, 216, 3)
        boxes.append([cx, size[1] / 2, cz, *size, *color])
    return SceneSpec(np.array(boxes), seed=seed, room_half_size=room_half_size)


_FACE_SHADE = np.array([0.8, 1.0, 0.65])


def _pixel_rays(K: CameraIntrinsics) -> np.ndarray:
    jj, ii = np.meshgrid(np.arange(K.width) + 0.5, np.arange(K.height) + 0.5)
    # inverse of project(): camera-frame direction with unit depth
    return np.stack([-(jj - K.cx) / K.fx, -(ii - K.cy) / K.fy, np.ones_like(jj)], -1)


def render_frame(
    scene: SceneSpec,
    K: CameraIntrinsics,
    cam_rot: np.ndarray,
    cam_pos: np.ndarray,
    hands: Sequence[tuple[np.ndarray, tuple]] = (),
) -> np.ndarray:
    """Ray cast boxes, a checkered floor and hand markers into an HxWx3 uint8 image.

    Ray parameters equal camera depth, so box and marker depths compare
    directly. Markers are screen-space discs drawn only when their centre
    projects inside the image with positive depth; boxes occlude them.
    """
    d_cam = _pixel_rays(K).reshape(-1, 3)
    d = d_cam @ cam_rot.T
    o = np.asarray(cam_pos, dtype=np.float64)
    P = d.shape[0]
    img = np.tile(np.array(scene.sky_color, dtype=np.float64), (P, 1))
    depth = np.full(P, np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(d[:, 1] < 0, -o[1] / d[:, 1], np.inf)
    hit = np.isfinite(t_floor) & (t_floor > 0)
    if np.any(hit):
        xz = o[[0, 2]] + t_floor[hit, None] * d[hit][:, [0, 2]]
        parity = (np.floor(xz[:, 0] / 0.5) + np.floor(xz[:, 1] / 0.5)).astype(np.int64) % 2
        img[hit] = np.array(scene.floor_colors, dtype=np.float64)[parity]
        depth[hit] = t_floor[hit]

    box_depth = np.full(P, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
    for b in scene.boxes:
        lo, hi = b[:3] - b[3:6] / 2, b[:3] + b[3:6] / 2
        with np.errstate(invalid="ignore"):
            t1 = (lo - o) * inv
            t2 = (hi - o) * inv
        tmin_ax = np.fmin(t1, t2)
        tmin = tmin_ax.max(axis=1)
        tmax = np.fmax(t1, t2).min(axis=1)
        ok = (tmax >= tmin) & (tmin > 0) & (tmin < depth)
        if not np.any(ok):
            continue
        axis = np.argmax(tmin_ax[ok], axis=1)
        img[ok] = b[6:9] * _FACE_SHADE[axis][:, None]
        depth[ok] = tmin[ok]
        box_depth[ok] = tmin[ok]

    img = img.reshape(K.height, K.width, 3)
    box_depth = box_depth.reshape(K.height, K.width)
    ii, jj = np.mgrid[0 : K.height, 0 : K.width]
    for pos, color in hands:
        q = to_camera_frame(np.asarray(pos, dtype=np.float64), cam_rot, o)
        u, v, z = project(q, K)
        if not in_view(u, v, z, K):
            continue
        ci, cj = int(np.floor(v)), int(np.floor(u))
        radius = max(K.fx * HAND_RADIUS / z, MIN_MARKER_RADIUS)
        disc = (ii - ci) ** 2 + (jj - cj) ** 2 <= radius**2
        disc &= z < box_depth
        img[disc] = color
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# samples


@dataclass(frozen=True)
class Sample:
    text: str
    template: str
    video: np.ndarray  # (N_v + 1, H, W, 3) uint8
    motion: MotionSequence
    gt_camera: Se3Trajectory
    scene_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if len(self.motion) != 2 * (self.video.shape[0] - 1) + 1:
            raise ValueError("motion must have 2 N_v + 1 frames")
        if len(self.gt_camera) != self.video.shape[0]:
            raise ValueError("one camera pose per video frame")


@dataclass(frozen=True)
class SynthConfig:
    n_video_frames: int = 9  # N_v + 1
    video_fps: float = 2.0
    image_size: int = 64
    fov_scale: float = 0.5
    mount: tuple = field(default=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)))
    render_hands: bool = True

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.default(self.image_size, self.fov_scale)

    @property
    def mount_matrix(self) -> np.ndarray:
        return np.asarray(self.mount, dtype=np.float64)


def wrist_positions(motion: MotionSequence) -> tuple[np.ndarray, np.ndarray]:
    sk = motion.skeleton
    _, pos = motion.global_transforms()
    return pos[:, sk.index("left_wrist")], pos[:, sk.index("right_wrist")]


def camera_track(motion: MotionSequence, mount: np.ndarray | None = None) -> Se3Trajectory:
    """Head-mounted camera at every even motion frame (the video frames)."""
    rot, pos = motion.head_pose(mount)
    idx = np.arange(0, len(motion), 2)
    return Se3Trajectory(rot[idx], pos[idx], idx / motion.fps)


def render_video(scene: SceneSpec, motion: MotionSequence, cfg: SynthConfig) -> np.ndarray:
    K = cfg.intrinsics
    cams = camera_track(motion, cfg.mount_matrix)
    left, right = wrist_positions(motion)
    frames = []
    for i in range(len(cams)):
        hands = ((left[2 * i], LEFT_HAND_COLOR), (right[2 * i], RIGHT_HAND_COLOR)) if cfg.render_hands else ()
        frames.append(render_frame(scene, K, cams.rotations[i], cams.positions[i], hands))
    return np.stack(frames)


def generate_sample(
    scene: SceneSpec,
    template: str,
    skeleton: Skeleton | None = None,
    cfg: SynthConfig = SynthConfig(),
    seed: int = 0,
) -> Sample:
    n_m = 2 * (cfg.n_video_frames - 1) + 1
    motion = generate_motion(template, skeleton, seed, n_m, 2.0 * cfg.video_fps)
    video = render_video(scene, motion, cfg)
    return Sample(
        template_text(template), template, video, motion, camera_track(motion, cfg.mount_matrix), scene.seed, seed
    )


def generate_dataset(
    templates: Sequence[str],
    count: int,
    scene_seed: int = 0,
    seed: int = 0,
    cfg: SynthConfig = SynthConfig(),
    skeleton: Skeleton | None = None,
) -> list[Sample]:
    """count samples cycling through templates; sample k uses seed + k."""
    scene = generate_scene(scene_seed)
    return [generate_sample(scene, templates[k % len(templates)], skeleton, cfg, seed + k) for k in range(count)]


# --------------------------------------------------------------------------
# dataset persistence


def write_dataset(samples: Sequence[Sample], path: str | os.PathLike, cfg: SynthConfig = SynthConfig()) -> None:
    if not samples:
        raise ValueError("no samples to write")
    sk = samples[0].motion.skeleton
    arrays = []
    info = []
    for k, s in enumerate(samples):
        p = f"{k:06d}/"
        arrays += [
            (p + "video", s.video),
            (p + "text", np.frombuffer(s.text.encode("utf-8"), dtype=np.uint8)),
            (p + "root_rotation", s.motion.root_rotation),
            (p + "root_position", s.motion.root_position),
            (p + "joint_rotations", s.motion.joint_rotations),
            (p + "cam_rotation", s.gt_camera.rotations),
            (p + "cam_position", s.gt_camera.positions),
            (p + "cam_time", s.gt_camera.timestamps),
        ]
        info.append({"template": s.template, "scene_seed": s.scene_seed, "seed": s.seed, "fps": s.motion.fps})
    meta = {
        "kind": "dataset",
        "count": len(samples),
        "skeleton": sk.to_dict(),
        "synth": {
            "n_video_frames": cfg.n_video_frames,
            "video_fps": cfg.video_fps,
            "image_size": cfg.image_size,
            "fov_scale": cfg.fov_scale,
            "mount": [list(r) for r in cfg.mount],
            "render_hands": cfg.render_hands,
        },
        "samples": info,
    }
    container.write_container(path, arrays, meta)


class DatasetReader:
    """Random access over a dataset file; a sample reads only its own arrays."""

    def __init__(self, path: str | os.PathLike, fileobj=None):
        self._r = container.ContainerReader(path, fileobj)
        meta = self._r.meta
        if meta.get("kind") != "dataset":
            self._r.close()
            raise container.FormatError("not a dataset container")
        self.meta = meta
        self.skeleton = Skeleton.from_dict(meta["skeleton"])
        s = meta["synth"]
        self.config = SynthConfig(
            s["n_video_frames"], s["video_fps"], s["image_size"], s["fov_scale"], tuple(tuple(r) for r in s["mount"]), s["render_hands"]
        )

    def __len__(self) -> int:
        return int(self.meta["count"])

    def __getitem__(self, k: int) -> Sample:
        if not 0 <= k < len(self):
            raise IndexError(k)
        p = f"{k:06d}/"
        rd = self._r.read
        info = self.meta["samples"][k]
        motion = MotionSequence(self.skeleton, rd(p + "root_rotation"), rd(p + "root_position"), rd(p + "joint_rotations"), info["fps"])
        cam = Se3Trajectory(rd(p + "cam_rotation"), rd(p + "cam_position"), rd(p + "cam_time"))
        return Sample(
            rd(p + "text").tobytes().decode("utf-8"), info["template"], rd(p + "video"), motion, cam, info["scene_seed"], info["seed"]
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def close(self) -> None:
        self._r.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_dataset(path: str | os.PathLike) -> list[Sample]:
    with DatasetReader(path) as r:
        return list(r)
