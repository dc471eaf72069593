"""Skeleton model, forward kinematics, 6D rotations and the two motion codecs.

Conventions: world is Y-up with the XZ plane as the ground, a character at
rest faces +Z and its left hand side is +X. Rotation matrices act on column
vectors. Arrays are numpy float64 throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ORTHO_TOL = 1e-6
DEGENERATE_EPS = 1e-8
CONTACT_SPEED = 0.02  # m per frame

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


class DegenerateRotationError(ValueError):
    """A 6D block whose columns are (near) zero or parallel."""


class RotationValidationError(ValueError):
    """A matrix that is not a proper rotation within tolerance."""


class SequenceTooShortError(ValueError):
    pass


# --------------------------------------------------------------------------
# rotation helpers


def rot6d_to_matrix(r: np.ndarray) -> np.ndarray:
    """Gram-Schmidt a (..., 6) array into (..., 3, 3) rotation matrices.

    The six scalars are the first column followed by the second column.
    """
    r = np.asarray(r, dtype=np.float64)
    a, b = r[..., :3], r[..., 3:6]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na <= DEGENERATE_EPS):
        raise DegenerateRotationError("6D rotation has a zero first column")
    x = a / na
    b_orth = b - np.sum(x * b, axis=-1, keepdims=True) * x
    nb = np.linalg.norm(b_orth, axis=-1, keepdims=True)
    if np.any(nb <= DEGENERATE_EPS):
        raise DegenerateRotationError("6D rotation columns are parallel or zero")
    y = b_orth / nb
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def check_rotation(m: np.ndarray, tol: float = ORTHO_TOL) -> None:
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise RotationValidationError(f"expected (..., 3, 3), got {m.shape}")
    eye = np.eye(3)
    err = np.abs(np.swapaxes(m, -1, -2) @ m - eye).max(initial=0.0)
    if not np.isfinite(err) or err > tol:
        raise RotationValidationError(f"matrix not orthonormal (max err {err:.3g})")
    if np.any(np.linalg.det(m) <= 0):
        raise RotationValidationError("matrix has non-positive determinant")


def matrix_to_rot6d(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    check_rotation(m)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle) -> np.ndarray:
    """Rotation about +Y; vectorised over an array of angles."""
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(angle.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = s
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = -s
    out[..., 2, 2] = c
    return out


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Rodrigues formula, vectorised over (..., 3)."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    safe = np.where(theta < 1e-12, 1.0, theta)
    k = aa / safe
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    K = np.stack(
        [
            np.stack([zero, -kz, ky], -1),
            np.stack([kz, zero, -kx], -1),
            np.stack([-ky, kx, zero], -1),
        ],
        -2,
    )
    th = theta[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + np.sin(th) * K + (1.0 - np.cos(th)) * (K @ K)


def geodesic_angle(ra: np.ndarray, rb: np.ndarray) -> np.ndarray:
    """Angle in radians of ra^T rb.

    Equal to arccos((tr - 1) / 2) with the trace clamped to [-1, 3], but
    evaluated as atan2(sin, cos) so that it stays accurate near zero.
    """
    rel = np.swapaxes(ra, -1, -2) @ rb
    cos = (np.clip(np.trace(rel, axis1=-2, axis2=-1), -1.0, 3.0) - 1.0) / 2.0
    skew = np.stack([rel[..., 2, 1] - rel[..., 1, 2], rel[..., 0, 2] - rel[..., 2, 0], rel[..., 1, 0] - rel[..., 0, 1]], -1)
    return np.arctan2(np.linalg.norm(skew, axis=-1) / 2.0, cos)


def heading_angle(rot: np.ndarray) -> np.ndarray:
    """Yaw of the body forward axis (+Z) projected on the ground plane."""
    fwd = rot[..., :, 2]
    return np.arctan2(fwd[..., 0], fwd[..., 2])


def wrap_angle(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


# --------------------------------------------------------------------------
# skeleton


@dataclass(frozen=True)
class Skeleton:
    parent: np.ndarray
    offset: np.ndarray
    head_index: int
    names: tuple[str, ...] = ()

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=np.int64)
        offset = np.asarray(self.offset, dtype=np.float64)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "offset", offset)
        J = parent.shape[0]
        if J < 2:
            raise ValueError("skeleton needs at least two joints")
        if parent[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for j in range(1, J):
            if not 0 <= parent[j] < j:
                raise ValueError(f"joint {j} parent {parent[j]} breaks topological order")
        if offset.shape != (J, 3) or not np.all(np.isfinite(offset[1:])):
            raise ValueError("offsets must be a finite (J, 3) array")
        if not 0 < self.head_index < J:
            raise ValueError("head_index must name a non-root joint")
        if self.names and len(self.names) != J:
            raise ValueError("names must have one entry per joint")

    @property
    def joint_count(self) -> int:
        return int(self.parent.shape[0])

    def index(self, name: str) -> int:
        return self.names.index(name)

    def chain_to(self, j: int) -> list[int]:
        """Joint indices from the root's first child down to j (root excluded)."""
        chain = []
        while j != 0:
            chain.append(j)
            j = int(self.parent[j])
        return chain[::-1]

    @property
    def non_head(self) -> np.ndarray:
        return np.array([j for j in range(self.joint_count) if j != self.head_index])

    def to_dict(self) -> dict:
        return {
            "parent": self.parent.tolist(),
            "offset": self.offset.tolist(),
            "head_index": self.head_index,
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        return cls(np.array(d["parent"]), np.array(d["offset"]), int(d["head_index"]), tuple(d.get("names", ())))


_DEFAULT_JOINTS = [
    # name, parent, offset
    ("pelvis", -1, (0.0, 0.0, 0.0)),
    ("spine", 0, (0.0, 0.12, 0.0)),
    ("chest", 1, (0.0, 0.15, 0.0)),
    ("neck", 2, (0.0, 0.20, 0.0)),
    ("head", 3, (0.0, 0.15, 0.03)),
    ("left_shoulder", 2, (0.18, 0.15, 0.0)),
    ("left_elbow", 5, (0.0, -0.28, 0.0)),
    ("left_wrist", 6, (0.0, -0.25, 0.0)),
    ("right_shoulder", 2, (-0.18, 0.15, 0.0)),
    ("right_elbow", 8, (0.0, -0.28, 0.0)),
    ("right_wrist", 9, (0.0, -0.25, 0.0)),
    ("left_hip", 0, (0.10, -0.05, 0.0)),
    ("left_knee", 11, (0.0, -0.42, 0.0)),
    ("left_ankle", 12, (0.0, -0.42, 0.0)),
    ("left_toe", 13, (0.0, -0.06, 0.13)),
    ("right_hip", 0, (-0.10, -0.05, 0.0)),
    ("right_knee", 15, (0.0, -0.42, 0.0)),
    ("right_ankle", 16, (0.0, -0.42, 0.0)),
    ("right_toe", 17, (0.0, -0.06, 0.13)),
]
FOOT_JOINTS = ("left_ankle", "left_toe", "right_ankle", "right_toe")
PELVIS_HEIGHT = 0.95


def default_skeleton() -> Skeleton:
    """19-joint humanoid whose toes touch y=0 when the pelvis is at PELVIS_HEIGHT."""
    names = tuple(n for n, _, _ in _DEFAULT_JOINTS)
    parent = np.array([p for _, p, _ in _DEFAULT_JOINTS])
    offset = np.array([o for _, _, o in _DEFAULT_JOINTS])
    return Skeleton(parent, offset, names.index("head"), names)


def chain_skeleton(n: int, offset=(0.0, 1.0, 0.0)) -> Skeleton:
    """Serial chain of n joints; the last joint is the head."""
    parent = np.arange(-1, n - 1)
    offs = np.tile(np.asarray(offset, dtype=np.float64), (n, 1))
    offs[0] = 0.0
    return Skeleton(parent, offs, n - 1, tuple(f"j{i}" for i in range(n)))


# --------------------------------------------------------------------------
# poses and sequences


@dataclass(frozen=True)
class Pose:
    root_rotation: np.ndarray
    root_position: np.ndarray
    joint_rotations: np.ndarray

    def __post_init__(self):
        check_rotation(self.root_rotation)
        check_rotation(self.joint_rotations)


@dataclass(frozen=True)
class MotionSequence:
    """Frames stored as stacked arrays; ``frames`` yields per-frame Pose views.

    joint_rotations[:, 0] is composed after root_rotation, so the root joint's
    global rotation is root_rotation @ joint_rotations[:, 0].
    """

    skeleton: Skeleton
    root_rotation: np.ndarray  # (N, 3, 3)
    root_position: np.ndarray  # (N, 3)
    joint_rotations: np.ndarray  # (N, J, 3, 3)
    fps: float = 16.0

    def __post_init__(self):
        rr = np.asarray(self.root_rotation, dtype=np.float64)
        rp = np.asarray(self.root_position, dtype=np.float64)
        jr = np.asarray(self.joint_rotations, dtype=np.float64)
        object.__setattr__(self, "root_rotation", rr)
        object.__setattr__(self, "root_position", rp)
        object.__setattr__(self, "joint_rotations", jr)
        n = rr.shape[0]
        if n < 2:
            raise SequenceTooShortError("a motion sequence needs at least 2 frames")
        J = self.skeleton.joint_count
        if rr.shape != (n, 3, 3) or rp.shape != (n, 3) or jr.shape != (n, J, 3, 3):
            raise ValueError("inconsistent motion array shapes")
        check_rotation(rr)
        check_rotation(jr)
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    def __len__(self) -> int:
        return self.root_rotation.shape[0]

    @property
    def frames(self) -> list[Pose]:
        return [Pose(self.root_rotation[i], self.root_position[i], self.joint_rotations[i]) for i in range(len(self))]

    @classmethod
    def from_poses(cls, skeleton: Skeleton, poses: Sequence[Pose], fps: float = 16.0) -> "MotionSequence":
        return cls(
            skeleton,
            np.stack([p.root_rotation for p in poses]),
            np.stack([p.root_position for p in poses]),
            np.stack([p.joint_rotations for p in poses]),
            fps,
        )

    def transformed(self, rot: np.ndarray, trans: np.ndarray) -> "MotionSequence":
        """Apply the world rigid transform x -> rot @ x + trans to every frame."""
        return MotionSequence(
            self.skeleton,
            rot @ self.root_rotation,
            self.root_position @ rot.T + trans,
            self.joint_rotations,
            self.fps,
        )

    def global_transforms(self) -> tuple[np.ndarray, np.ndarray]:
        return fk_arrays(self.skeleton, self.root_rotation, self.root_position, self.joint_rotations)

    def head_pose(self, mount: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Head-mounted camera track: head global rotation @ mount, head position."""
        rot, pos = self.global_transforms()
        h = self.skeleton.head_index
        r = rot[:, h]
        if mount is not None:
            r = r @ mount
        return r, pos[:, h]

    def to_dict(self) -> dict:
        return {
            "skeleton": self.skeleton.to_dict(),
            "fps": self.fps,
            "root_rotation": self.root_rotation.tolist(),
            "root_position": self.root_position.tolist(),
            "joint_rotations": self.joint_rotations.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MotionSequence":
        return cls(
            Skeleton.from_dict(d["skeleton"]),
            np.array(d["root_rotation"]),
            np.array(d["root_position"]),
            np.array(d["joint_rotations"]),
            float(d["fps"]),
        )


def fk_arrays(skeleton: Skeleton, root_rotation, root_position, joint_rotations):
    """Vectorised FK. Returns global rotations (..., J, 3, 3) and positions (..., J, 3)."""
    J = skeleton.joint_count
    rots = [None] * J
    poss = [None] * J
    rots[0] = root_rotation @ joint_rotations[..., 0, :, :]
    poss[0] = np.asarray(root_position, dtype=np.float64)
    for j in range(1, J):
        p = skeleton.parent[j]
        rots[j] = rots[p] @ joint_rotations[..., j, :, :]
        poss[j] = poss[p] + np.einsum("...ij,j->...i", rots[p], skeleton.offset[j])
    return np.stack(rots, axis=-3), np.stack(poss, axis=-2)


def forward_kinematics(skeleton: Skeleton, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    return fk_arrays(skeleton, pose.root_rotation, pose.root_position, pose.joint_rotations)


# --------------------------------------------------------------------------
# head-centric representation


def head_centric_layout(J: int) -> dict[str, slice]:
    n = J - 1
    sizes = [("h_r", 6), ("hdot_r", 6), ("h_p", 3), ("hdot_p", 3), ("j_p", 3 * n), ("j_v", 3 * n), ("j_r", 6 * n)]
    out, start = {}, 0
    for name, size in sizes:
        out[name] = slice(start, start + size)
        start += size
    return out


def head_centric_width(J: int) -> int:
    return 18 + 12 * (J - 1)


HEAD_CENTRIC_GROUPS = {
    "head_3D": ("h_p", "hdot_p"),
    "head_6D": ("h_r", "hdot_r"),
    "joint_3D": ("j_p", "j_v"),
    "joint_6D": ("j_r",),
}


def feature_group_indices(J: int) -> dict[str, np.ndarray]:
    """Column indices of the four loss groups of the head-centric layout."""
    lay = head_centric_layout(J)
    return {
        g: np.concatenate([np.arange(lay[f].start, lay[f].stop) for f in fields])
        for g, fields in HEAD_CENTRIC_GROUPS.items()
    }


@dataclass(frozen=True)
class HeadCentricRep:
    """(N, 18 + 12(J-1)) feature matrix with named views."""

    features: np.ndarray
    joint_count: int
    layout: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", f)
        if f.ndim != 2 or f.shape[1] != head_centric_width(self.joint_count):
            raise ValueError(f"expected (N, {head_centric_width(self.joint_count)}) features, got {f.shape}")
        object.__setattr__(self, "layout", head_centric_layout(self.joint_count))

    def __getattr__(self, name):
        lay = self.__dict__.get("layout")
        if lay is not None and name in lay:
            return self.features[:, lay[name]]
        raise AttributeError(name)

    def __len__(self) -> int:
        return self.features.shape[0]


def encode_head_centric(m: MotionSequence) -> HeadCentricRep:
    if len(m) < 2:
        raise SequenceTooShortError("need at least 2 frames")
    sk = m.skeleton
    J, h = sk.joint_count, sk.head_index
    rot, pos = m.global_transforms()
    # rigid normalisation by the inverse frame-0 head pose
    r0, p0 = rot[0, h], pos[0, h]
    rot = r0.T @ rot
    pos = (pos - p0) @ r0
    head_r, head_p = rot[:, h], pos[:, h]
    n = len(m)
    others = sk.non_head

    rel = np.empty_like(head_r)
    rel[0] = np.eye(3)
    rel[1:] = np.swapaxes(head_r[:-1], -1, -2) @ head_r[1:]
    dp = np.zeros_like(head_p)
    dp[1:] = head_p[1:] - head_p[:-1]

    # head-space joint positions / velocities: R_h(t)^T v
    jp = np.einsum("nji,nkj->nki", head_r, pos[:, others] - head_p[:, None])
    disp = np.zeros((n, J - 1, 3))
    disp[1:] = pos[1:, others] - pos[:-1, others]
    jv = np.einsum("nji,nkj->nki", head_r, disp)
    jr = matrix_to_rot6d(m.joint_rotations[:, 1:])

    feats = np.concatenate(
        [
            matrix_to_rot6d(head_r),
            matrix_to_rot6d(rel),
            head_p,
            dp,
            jp.reshape(n, -1),
            jv.reshape(n, -1),
            jr.reshape(n, -1),
        ],
        axis=1,
    )
    # frame 0 is exactly canonical; remove round-off from the normalisation
    lay = head_centric_layout(J)
    feats[0, lay["h_r"]] = IDENTITY_6D
    feats[0, lay["h_p"]] = 0.0
    return HeadCentricRep(feats, J)


def head_centric_positions(rep: HeadCentricRep, skeleton: Skeleton) -> np.ndarray:
    """World positions (N, J, 3) read from the head pose and head-space j_p."""
    head_r = rot6d_to_matrix(rep.h_r)
    head_p = rep.h_p
    n, J = len(rep), skeleton.joint_count
    jp = rep.j_p.reshape(n, J - 1, 3)
    pos = np.empty((n, J, 3))
    pos[:, skeleton.head_index] = head_p
    pos[:, skeleton.non_head] = head_p[:, None] + np.einsum("nij,nkj->nki", head_r, jp)
    return pos


def decode_head_centric(rep: HeadCentricRep, skeleton: Skeleton, fps: float = 16.0) -> MotionSequence:
    """Invert the head-centric features into a MotionSequence in the normalised frame.

    The root rotation is whatever makes FK over j_r reproduce the stored head
    rotation; the root position is the root's entry of j_p.
    """
    if rep.joint_count != skeleton.joint_count:
        raise ValueError("rep and skeleton joint counts differ")
    n, J = len(rep), skeleton.joint_count
    head_r = rot6d_to_matrix(rep.h_r)
    local = np.empty((n, J, 3, 3))
    local[:, 0] = np.eye(3)
    local[:, 1:] = rot6d_to_matrix(rep.j_r.reshape(n, J - 1, 6))
    chain = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    for j in skeleton.chain_to(skeleton.head_index):
        chain = chain @ local[:, j]
    root_rot = head_r @ np.swapaxes(chain, -1, -2)
    # re-orthonormalise against round-off accumulated above
    root_rot = rot6d_to_matrix(np.concatenate([root_rot[..., :, 0], root_rot[..., :, 1]], -1))
    pos = head_centric_positions(rep, skeleton)
    return MotionSequence(skeleton, root_rot, pos[:, 0], local, fps)


# --------------------------------------------------------------------------
# root-centric representation


def root_centric_layout(J: int) -> dict[str, slice]:
    n = J - 1
    sizes = [("rdot_a", 1), ("rdot_xz", 2), ("r_y", 1), ("j_p", 3 * n), ("j_v", 3 * n), ("j_r", 6 * n), ("c_f", 4)]
    out, start = {}, 0
    for name, size in sizes:
        out[name] = slice(start, start + size)
        start += size
    return out


def root_centric_width(J: int) -> int:
    return 4 + 12 * (J - 1) + 4


@dataclass(frozen=True)
class RootCentricRep:
    features: np.ndarray
    joint_count: int
    layout: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", f)
        if f.ndim != 2 or f.shape[1] != root_centric_width(self.joint_count):
            raise ValueError(f"expected (N, {root_centric_width(self.joint_count)}) features, got {f.shape}")
        object.__setattr__(self, "layout", root_centric_layout(self.joint_count))

    def __getattr__(self, name):
        lay = self.__dict__.get("layout")
        if lay is not None and name in lay:
            return self.features[:, lay[name]]
        raise AttributeError(name)

    def __len__(self) -> int:
        return self.features.shape[0]


def _foot_indices(skeleton: Skeleton) -> list[int]:
    if skeleton.names and all(n in skeleton.names for n in FOOT_JOINTS):
        return [skeleton.index(n) for n in FOOT_JOINTS]
    # fall back to the four last leaves
    leaves = [j for j in range(skeleton.joint_count) if j not in set(skeleton.parent.tolist())]
    return (leaves * 4)[-4:]


def root_canonical_transform(m: MotionSequence) -> tuple[np.ndarray, np.ndarray]:
    """Rigid transform turning frame 0's root to face +Z above the origin."""
    rot, pos = m.global_transforms()
    yaw0 = heading_angle(rot[0, 0])
    r = rot_y(-yaw0)
    t = -r @ np.array([pos[0, 0, 0], 0.0, pos[0, 0, 2]])
    return r, t


def encode_root_centric(m: MotionSequence, contact_speed: float = CONTACT_SPEED) -> RootCentricRep:
    if len(m) < 2:
        raise SequenceTooShortError("need at least 2 frames")
    sk = m.skeleton
    J, n = sk.joint_count, len(m)
    r, t = root_canonical_transform(m)
    rot, pos = m.transformed(r, t).global_transforms()
    yaw = heading_angle(rot[:, 0])
    inv_heading = np.swapaxes(rot_y(yaw), -1, -2)
    root = pos[:, 0]

    rdot_a = np.zeros(n)
    rdot_a[1:] = wrap_angle(yaw[1:] - yaw[:-1])
    vel = np.zeros((n, 3))
    vel[1:] = np.einsum("nij,nj->ni", inv_heading[1:], root[1:] - root[:-1])

    rel = pos[:, 1:] - (root * np.array([1.0, 0.0, 1.0]))[:, None]
    jp = np.einsum("nij,nkj->nki", inv_heading, rel)
    disp = np.zeros((n, J - 1, 3))
    disp[1:] = pos[1:, 1:] - pos[:-1, 1:]
    jv = np.einsum("nij,nkj->nki", inv_heading, disp)
    jr = matrix_to_rot6d(m.joint_rotations[:, 1:])

    feet = _foot_indices(sk)
    speed = np.zeros((n, 4))
    step = np.linalg.norm(pos[1:, feet] - pos[:-1, feet], axis=-1)
    speed[1:] = step
    speed[0] = step[0]
    contacts = (speed < contact_speed).astype(np.float64)

    feats = np.concatenate(
        [
            rdot_a[:, None],
            vel[:, [0, 2]],
            root[:, 1:2],
            jp.reshape(n, -1),
            jv.reshape(n, -1),
            jr.reshape(n, -1),
            contacts,
        ],
        axis=1,
    )
    return RootCentricRep(feats, J)


def decode_root_centric(rep: RootCentricRep, skeleton: Skeleton, fps: float = 16.0) -> MotionSequence:
    """Integrate root velocities into a sequence in the canonical frame.

    The root orientation is reconstructed as a pure heading rotation; any
    pelvis tilt is not carried by this representation.
    """
    n, J = len(rep), skeleton.joint_count
    if J != rep.joint_count:
        raise ValueError("skeleton does not match the representation's joint count")
    yaw = np.cumsum(rep.rdot_a[:, 0])
    heading = rot_y(yaw)
    vel = np.zeros((n, 3))
    vel[:, [0, 2]] = rep.rdot_xz
    root = np.cumsum(np.einsum("nij,nj->ni", heading, vel), axis=0)
    root[:, 1] = rep.r_y[:, 0]
    local = np.empty((n, J, 3, 3))
    local[:, 0] = np.eye(3)
    local[:, 1:] = rot6d_to_matrix(rep.j_r.reshape(n, J - 1, 6))
    return MotionSequence(skeleton, heading, root, local, fps)


def root_centric_head_pose(rep: RootCentricRep, skeleton: Skeleton) -> tuple[np.ndarray, np.ndarray]:
    """Integrate root velocities, then FK down to the head."""
    m = decode_root_centric(rep, skeleton)
    rot, pos = m.global_transforms()
    h = skeleton.head_index
    return rot[:, h], pos[:, h]


def head_pose_probe(
    rep_kind: str,
    features: np.ndarray,
    skeleton: Skeleton,
    truth: MotionSequence,
) -> tuple[float, float]:
    """Error of the cheapest head-pose extraction each representation allows.

    Returns (mean translation error in m, mean rotation error in degrees)
    against the ground-truth head track expressed in the representation's
    canonical frame.
    """
    if rep_kind == "head":
        rep = HeadCentricRep(features, skeleton.joint_count)
        est_r, est_p = rot6d_to_matrix(rep.h_r), rep.h_p
        rot, pos = truth.global_transforms()
        h = skeleton.head_index
        r0, p0 = rot[0, h], pos[0, h]
        gt_r, gt_p = r0.T @ rot[:, h], (pos[:, h] - p0) @ r0
    elif rep_kind == "root":
        rep = RootCentricRep(features, skeleton.joint_count)
        est_r, est_p = root_centric_head_pose(rep, skeleton)
        r, t = root_canonical_transform(truth)
        gt_r, gt_p = truth.transformed(r, t).head_pose()
    else:
        raise ValueError(f"unknown representation kind {rep_kind!r}")
    trans = float(np.linalg.norm(est_p - gt_p, axis=-1).mean())
    rot_deg = float(np.degrees(geodesic_angle(est_r, gt_r)).mean())
    return trans, rot_deg
