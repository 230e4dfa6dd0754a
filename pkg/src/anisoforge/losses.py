"""Embedding training losses: corner dot-product loss plus Laplacian term.

Pure deterministic reference functions; the neural trainer must reproduce
these values, so summation order is fixed (numpy reductions over arrays in
face/vertex order).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import EmbeddedMesh
from .mesh import MeshError

DEFAULT_W_LAP = 0.1


@dataclass
class LossBreakdown:
    l_dot: float
    l_lap: float
    w_lap: float
    total: float

    def to_dict(self):
        return {
            "l_dot": self.l_dot,
            "l_lap": self.l_lap,
            "w_lap": self.w_lap,
            "total": self.total,
        }


def _check_pair(pred: EmbeddedMesh, truth: EmbeddedMesh):
    if pred.coords.shape != truth.coords.shape or not np.array_equal(
        pred.faces, truth.faces
    ):
        raise MeshError("pred/truth connectivity mismatch")


def _corner_dots(coords: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """(F, 3) dot products of the two edge vectors at each face corner."""
    p_i, p_j, p_k = coords[faces[:, 0]], coords[faces[:, 1]], coords[faces[:, 2]]
    e_ij, e_jk, e_ki = p_j - p_i, p_k - p_j, p_i - p_k
    d_i = np.einsum("fc,fc->f", e_ij, -e_ki)   # <e_ij, e_ik>
    d_j = np.einsum("fc,fc->f", e_jk, -e_ij)   # <e_jk, e_ji>
    d_k = np.einsum("fc,fc->f", e_ki, -e_jk)   # <e_ki, e_kj>
    return np.stack([d_i, d_j, d_k], axis=1)


def dot_product_loss(pred: EmbeddedMesh, truth: EmbeddedMesh) -> float:
    """Mean over the 3|F| corner terms of squared dot-product differences."""
    _check_pair(pred, truth)
    if len(pred.faces) == 0:
        raise MeshError("mesh has no faces")
    dp = _corner_dots(pred.coords, pred.faces)
    dt = _corner_dots(truth.coords, truth.faces)
    return float(((dp - dt) ** 2).sum() / (3.0 * len(pred.faces)))


def _uniform_laplacians(coords: np.ndarray, offsets, idx) -> np.ndarray:
    V, C = coords.shape
    lap = np.zeros((V, C))
    for v in range(V):
        nbr = idx[offsets[v] : offsets[v + 1]]
        if len(nbr) == 0:
            raise MeshError(f"vertex {v} has an empty one-ring")
        lap[v] = coords[v] - coords[nbr].mean(axis=0)
    return lap


def laplacian_loss(pred: EmbeddedMesh, truth: EmbeddedMesh) -> float:
    """Sum over vertices of squared uniform-Laplacian differences."""
    _check_pair(pred, truth)
    offsets, idx = _one_ring(pred.faces, pred.n_vertices)
    lp = _uniform_laplacians(pred.coords, offsets, idx)
    lt = _uniform_laplacians(truth.coords, offsets, idx)
    return float(((lp - lt) ** 2).sum())


def _one_ring(faces: np.ndarray, V: int):
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    both = np.concatenate([e, e[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    offsets = np.searchsorted(both[:, 0], np.arange(V + 1))
    return offsets, both[:, 1]


def total_loss(pred: EmbeddedMesh, truth: EmbeddedMesh, w_lap: float = DEFAULT_W_LAP) -> LossBreakdown:
    if w_lap < 0:
        raise ValueError("w_lap must be >= 0")
    l_dot = dot_product_loss(pred, truth)
    l_lap = laplacian_loss(pred, truth)
    return LossBreakdown(l_dot=l_dot, l_lap=l_lap, w_lap=w_lap, total=l_dot + w_lap * l_lap)


# -- ablation variants (diagnostic only) --------------------------------------


def l2_loss(pred: EmbeddedMesh, truth: EmbeddedMesh) -> float:
    """Mean squared vertex-coordinate error (ablation diagnostic)."""
    _check_pair(pred, truth)
    return float(((pred.coords - truth.coords) ** 2).sum(axis=1).mean())


def cosine_loss(pred: EmbeddedMesh, truth: EmbeddedMesh) -> float:
    """Mean (1 - cos) misalignment of edge vectors (ablation diagnostic)."""
    _check_pair(pred, truth)
    f = pred.faces
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    ep = pred.coords[e[:, 1]] - pred.coords[e[:, 0]]
    et = truth.coords[e[:, 1]] - truth.coords[e[:, 0]]
    num = np.einsum("ec,ec->e", ep, et)
    den = np.linalg.norm(ep, axis=1) * np.linalg.norm(et, axis=1)
    cos = num / np.maximum(den, 1e-300)
    return float((1.0 - cos).mean())
