"""Pinhole intrinsics, point projection and SE(3) trajectories.

Camera poses are expressed in the body convention of the skeleton (the
camera looks along its local +Z, +Y is up, +X is to the wearer's left).
Image columns grow to the right and rows grow downward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import check_rotation


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    height: int
    width: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def default(cls, size: int = 64, fov_scale: float = 0.5) -> "CameraIntrinsics":
        """Square image with fx = fy = fov_scale * size (0.5 gives a 90 degree FOV)."""
        f = fov_scale * size
        return cls(f, f, size / 2.0, size / 2.0, size, size)

    def to_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, height=self.height, width=self.width)


def to_camera_frame(points: np.ndarray, rotation: np.ndarray, position: np.ndarray) -> np.ndarray:
    """World points (..., 3) into the camera frame: R^T (x - p)."""
    return (np.asarray(points) - position) @ rotation


def project(points_cam: np.ndarray, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (u, v, depth); u, v are continuous pixel coordinates."""
    x, y, z = points_cam[..., 0], points_cam[..., 1], points_cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.cx - K.fx * x / z
        v = K.cy - K.fy * y / z
    return u, v, z


def in_view(u, v, depth, K: CameraIntrinsics) -> np.ndarray:
    return (depth > 0) & (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)


@dataclass(frozen=True)
class Se3Trajectory:
    rotations: np.ndarray  # (L, 3, 3)
    positions: np.ndarray  # (L, 3)
    timestamps: np.ndarray  # (L,)

    def __post_init__(self):
        r = np.asarray(self.rotations, dtype=np.float64)
        p = np.asarray(self.positions, dtype=np.float64)
        t = np.asarray(self.timestamps, dtype=np.float64)
        object.__setattr__(self, "rotations", r)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "timestamps", t)
        n = r.shape[0]
        if r.shape != (n, 3, 3) or p.shape != (n, 3) or t.shape != (n,):
            raise ValueError("inconsistent trajectory shapes")
        check_rotation(r)
        if n > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.rotations.shape[0]

    def subsample(self, idx) -> "Se3Trajectory":
        return Se3Trajectory(self.rotations[idx], self.positions[idx], self.timestamps[idx])

    def transformed(self, rot: np.ndarray, trans: np.ndarray) -> "Se3Trajectory":
        return Se3Trajectory(rot @ self.rotations, self.positions @ rot.T + trans, self.timestamps)
