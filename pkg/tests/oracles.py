"""Independent reference implementations used only by the tests.

Each oracle takes a different route from the package code: literal set
enumeration instead of interval arithmetic, quaternions instead of traces,
scipy's general sqrtm instead of a symmetric eigendecomposition, explicit
loops instead of vectorised einsums.
"""
from __future__ import annotations

import math

import numpy as np
import torch
from scipy.linalg import sqrtm
from scipy.spatial.transform import Rotation


def mask_permissions_bruteforce(F_v: int, F_m: int, c: int = 4, r: int = 2):
    """Raw-frame enumeration of the observation/action rule, lifted to latents."""
    n_v = c * (F_v - 1)
    n_m = c * (F_m - 1)
    assert n_m == r * n_v

    def obs(lv):
        return {0} if lv == 0 else set(range(c * (lv - 1) + 1, c * lv + 1))

    def acts(lm):
        if lm == 0:
            return set()
        raw = set(range(c * (lm - 1) + 1, c * lm + 1))
        return {i for i in range(n_v) if raw & set(range(r * i + 1, r * i + r + 1))}

    v2m = np.zeros((F_v, F_m), dtype=bool)
    m2v = np.zeros((F_m, F_v), dtype=bool)
    for lv in range(F_v):
        for lm in range(F_m):
            A, O = acts(lm), obs(lv)
            v2m[lv, lm] = any((i - 1) in A for i in O if i >= 1)
            m2v[lm, lv] = any(i in O or (i + 1) in O for i in A)
    v2m[0, 0] = m2v[0, 0] = True
    return v2m, m2v


def quaternion_angle_deg(ra: np.ndarray, rb: np.ndarray) -> np.ndarray:
    """Relative rotation angle via unit quaternions (double cover handled by abs)."""
    qa = Rotation.from_matrix(ra).as_quat()
    qb = Rotation.from_matrix(rb).as_quat()
    dot = np.abs(np.sum(qa * qb, axis=-1)).clip(0.0, 1.0)
    return np.degrees(2.0 * np.arccos(dot))


def frechet_sqrtm(mu_a, cov_a, mu_b, cov_b) -> float:
    covmean = sqrtm(cov_a @ cov_b)
    covmean = np.real(covmean)
    d = mu_a - mu_b
    return float(d @ d + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(covmean))


def frechet_eig(mu_a, cov_a, mu_b, cov_b) -> float:
    """Eigenvalues of the (non-symmetric) product cov_a cov_b: tr sqrt = sum sqrt(eig)."""
    ev = np.linalg.eigvals(cov_a @ cov_b)
    d = mu_a - mu_b
    return float(d @ d + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sum(np.sqrt(np.clip(ev.real, 0, None))))


def dense_attention(q, k, v, allowed):
    """Per-row softmax with an explicit python loop and -inf fill."""
    B, H, L, d = q.shape
    out = torch.zeros_like(q)
    for b in range(B):
        for h in range(H):
            for i in range(L):
                row = torch.full((L,), float("-inf"), dtype=q.dtype)
                for j in range(L):
                    if allowed[i, j]:
                        row[j] = (q[b, h, i] * k[b, h, j]).sum() / math.sqrt(d)
                w = torch.exp(row - row.max())
                w = w / w.sum()
                out[b, h, i] = (w[:, None] * v[b, h]).sum(0)
    return out


def fk_loop(parent, offset, root_rot, root_pos, local):
    """Single-frame forward kinematics with explicit loops."""
    J = len(parent)
    G = [None] * J
    P = [None] * J
    G[0] = root_rot @ local[0]
    P[0] = np.array(root_pos, dtype=float)
    for j in range(1, J):
        p = parent[j]
        G[j] = G[p] @ local[j]
        P[j] = P[p] + G[p] @ offset[j]
    return np.array(G), np.array(P)


def central_difference(f, x: torch.Tensor, h: float = 1e-3, indices=None) -> torch.Tensor:
    """d f / d x for scalar f by central differences at flat ``indices`` (default all)."""
    g = torch.zeros_like(x)
    flat = x.view(-1)
    gf = g.view(-1)
    for i in range(flat.numel()) if indices is None else indices:
        i = int(i)
        old = flat[i].item()
        with torch.no_grad():
            flat[i] = old + h
            fp = float(f())
            flat[i] = old - h
            fm = float(f())
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: torch.Tensor, b: torch.Tensor) -> float:
    return float((a - b).norm() / max(float(a.norm()), float(b.norm()), 1e-12))
