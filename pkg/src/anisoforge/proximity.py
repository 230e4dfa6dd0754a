"""Nearest-point-on-surface queries against a triangle mesh.

k-d tree on face centroids for candidates, exact point-triangle distance
for the refinement.  Good enough for well-shaped desk-scale meshes; the
candidate count is configurable where thin geometry needs more.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .mesh import SurfaceMesh


def _point_triangle_closest(p, a, b, c):
    """Vectorized closest point on triangles (Ericson).  All (..., 3)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    denom = va + vb + vc
    denom = np.where(np.abs(denom) < 1e-300, 1.0, denom)
    v = vb / denom
    w = vc / denom
    u = 1.0 - v - w
    bary = np.stack([u, v, w], axis=-1)

    # region tests override the interior solution
    out = np.where(
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0))[..., None],
        np.stack([1 - _safe_div(d1, d1 - d3), _safe_div(d1, d1 - d3), np.zeros_like(d1)], axis=-1),
        bary,
    )
    out = np.where(
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0))[..., None],
        np.stack([1 - _safe_div(d2, d2 - d6), np.zeros_like(d2), _safe_div(d2, d2 - d6)], axis=-1),
        out,
    )
    wline = _safe_div(d4 - d3, (d4 - d3) + (d5 - d6))
    out = np.where(
        ((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0))[..., None],
        np.stack([np.zeros_like(wline), 1 - wline, wline], axis=-1),
        out,
    )
    out = np.where(((d1 <= 0) & (d2 <= 0))[..., None], np.array([1.0, 0.0, 0.0]), out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[..., None], np.array([0.0, 1.0, 0.0]), out)
    out = np.where(((d6 >= 0) & (d5 <= d6))[..., None], np.array([0.0, 0.0, 1.0]), out)

    out = np.clip(out, 0.0, 1.0)
    out /= out.sum(-1, keepdims=True)
    q = out[..., :1] * a + out[..., 1:2] * b + out[..., 2:] * c
    return q, out


def _safe_div(num, den):
    return num / np.where(np.abs(den) < 1e-300, 1.0, den)


class NearestSurface:
    """Closest-point queries on a fixed triangle mesh."""

    def __init__(self, mesh: SurfaceMesh, k_candidates: int = 8):
        self.mesh = mesh
        self.k = min(k_candidates, mesh.n_faces)
        tri = mesh.vertices[mesh.faces]
        self._tri = tri
        self._tree = cKDTree(tri.mean(axis=1))

    def query(self, points):
        """Returns (distances, face ids, closest points, barycentric)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        _, cand = self._tree.query(p, k=self.k)
        cand = cand.reshape(len(p), -1)
        tri = self._tri[cand]  # (Q, K, 3, 3)
        q, bary = _point_triangle_closest(
            p[:, None, :], tri[:, :, 0], tri[:, :, 1], tri[:, :, 2]
        )
        d2 = ((q - p[:, None, :]) ** 2).sum(-1)
        best = d2.argmin(axis=1)
        rows = np.arange(len(p))
        return (
            np.sqrt(d2[rows, best]),
            cand[rows, best],
            q[rows, best],
            bary[rows, best],
        )
