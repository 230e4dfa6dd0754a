"""Per-vertex curvature frames and the curvature metric tensor field.

The metric at a vertex is M = R diag(1, (s2/s1)^2, 1) R^t with
R = [v_min, v_max, n], s1 = sqrt(max(|K_min|, floor)), s2 = sqrt(max(|K_max|,
floor)) and the stretch ratio s2/s1 clamped to [1, ceil].  Principal
curvatures come from quadric fitting over k-ring neighborhoods.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mesh import SurfaceMesh, vertex_normals

log = logging.getLogger("anisoforge.metric")

DEFAULT_FLOOR = 1e-3
DEFAULT_CEIL = 100.0
EIG_EPS = 1e-8  # admissible metric eigenvalue range [EIG_EPS, 1/EIG_EPS]


@dataclass
class CurvatureFrames:
    """Per-vertex principal frames: arrays over all vertices."""

    v_min: np.ndarray  # (V, 3) direction of the small-|K| curvature
    v_max: np.ndarray  # (V, 3)
    normal: np.ndarray  # (V, 3)
    k_min: np.ndarray  # (V,)
    k_max: np.ndarray  # (V,)
    boundary: np.ndarray  # (V,) bool, frame fit one-sided
    fallback: np.ndarray  # (V,) bool, too few neighbors, identity fallback

    def __len__(self):
        return len(self.k_min)


@dataclass
class MetricField:
    """Per-vertex SPD tensors plus the scalar stretch ratios they encode."""

    tensors: np.ndarray  # (V, 3, 3)
    ratios: np.ndarray  # (V,)
    frames: Optional[CurvatureFrames] = None

    def __len__(self):
        return len(self.ratios)


# -- curvature estimation ----------------------------------------------------


def _k_ring(offsets, idx, v, rings):
    seen = {v}
    frontier = [v]
    for _ in range(rings):
        nxt = []
        for u in frontier:
            for w in idx[offsets[u] : offsets[u + 1]]:
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        frontier = nxt
    seen.discard(v)
    return np.fromiter(seen, dtype=np.int64)


def _tangent_basis(n):
    a = np.zeros(3)
    a[np.argmin(np.abs(n))] = 1.0
    t1 = np.cross(n, a)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return t1, t2


def principal_curvatures(mesh: SurfaceMesh, radius_rings: int = 2) -> CurvatureFrames:
    """Quadric-fit principal curvatures and directions at every vertex.

    Convex regions (surface bulging along the outward normal) get positive
    curvature.  Vertices with fewer than 5 usable neighbors fall back to
    zero curvature (identity metric after flooring) and are flagged.
    """
    if radius_rings < 1:
        raise ValueError("radius_rings must be >= 1")
    V = mesh.n_vertices
    normals = vertex_normals(mesh)
    offsets, idx = mesh.vertex_neighbors

    bnd_vertices = np.zeros(V, dtype=bool)
    be = mesh.edges[mesh.boundary_edge_mask]
    bnd_vertices[be.reshape(-1)] = True

    v_min = np.zeros((V, 3))
    v_max = np.zeros((V, 3))
    k_min = np.zeros(V)
    k_max = np.zeros(V)
    fallback = np.zeros(V, dtype=bool)

    verts = mesh.vertices
    for v in range(V):
        n = normals[v]
        ring = _k_ring(offsets, idx, v, radius_rings)
        if len(ring) < 5 or np.linalg.norm(n) < 0.5:
            fallback[v] = True
            if np.linalg.norm(n) < 0.5:
                n = np.array([0.0, 0.0, 1.0])
            t1, t2 = _tangent_basis(n)
            v_min[v], v_max[v] = t1, t2
            continue
        t1, t2 = _tangent_basis(n)
        d = verts[ring] - verts[v]
        x = d @ t1
        y = d @ t2
        z = d @ n
        # z ~ a x^2 + b xy + c y^2 + d x + e y
        A = np.stack([x * x, x * y, y * y, x, y], axis=1)
        coef, *_ = np.linalg.lstsq(A, z, rcond=None)
        a, b, c, dd, ee = coef
        denom = np.sqrt(1.0 + dd * dd + ee * ee)
        E, F, G = 1.0 + dd * dd, dd * ee, 1.0 + ee * ee
        L, M, N = 2.0 * a / denom, b / denom, 2.0 * c / denom
        det = E * G - F * F
        S = (
            np.array([[G * L - F * M, G * M - F * N], [E * M - F * L, E * N - F * M]])
            / det
        )
        # symmetrize before eigendecomposition: S is similar to a symmetric
        # matrix; the asymmetry is fit noise
        Ssym = 0.5 * (S + S.T)
        evals, evecs = np.linalg.eigh(Ssym)
        evals = -evals  # sign: convex along +n is positive
        # order by |K|: index 0 -> K_min
        o = np.argsort(np.abs(evals))
        kmin, kmax = evals[o[0]], evals[o[1]]
        p, q = evecs[:, o[0]]
        # lift to 3D through the fitted surface tangents
        rx = t1 + dd * n
        ry = t2 + ee * n
        dir3 = p * rx + q * ry
        dir3 -= (dir3 @ n) * n
        norm = np.linalg.norm(dir3)
        if norm < 1e-12:
            dir3 = t1
        else:
            dir3 /= norm
        v_min[v] = dir3
        v_max[v] = np.cross(n, dir3)
        k_min[v], k_max[v] = kmin, kmax

    return CurvatureFrames(
        v_min=v_min,
        v_max=v_max,
        normal=normals,
        k_min=k_min,
        k_max=k_max,
        boundary=bnd_vertices,
        fallback=fallback,
    )


# -- metric assembly ---------------------------------------------------------


def _check_frames_orthonormal(frames: CurvatureFrames, tol=1e-6):
    R = np.stack([frames.v_min, frames.v_max, frames.normal], axis=2)
    gram = np.einsum("vij,vik->vjk", R, R)
    err = np.abs(gram - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"frames are not orthonormal (max deviation {err:.2e})")


def build_metric(
    frames: CurvatureFrames,
    floor: float = DEFAULT_FLOOR,
    ceil: float = DEFAULT_CEIL,
) -> MetricField:
    """Assemble the curvature metric from principal frames."""
    if not (0 < floor < ceil):
        raise ValueError("need 0 < floor < ceil")
    _check_frames_orthonormal(frames)
    s1 = np.sqrt(np.maximum(np.abs(frames.k_min), floor))
    s2 = np.sqrt(np.maximum(np.abs(frames.k_max), floor))
    ratios = np.clip(s2 / s1, 1.0, ceil)
    tensors = tensors_from_frames(frames, ratios)
    return MetricField(tensors=tensors, ratios=ratios, frames=frames)


def tensors_from_frames(frames: CurvatureFrames, ratios: np.ndarray) -> np.ndarray:
    R = np.stack([frames.v_min, frames.v_max, frames.normal], axis=2)  # columns
    diag = np.zeros((len(ratios), 3))
    diag[:, 0] = 1.0
    diag[:, 1] = ratios**2
    diag[:, 2] = 1.0
    M = np.einsum("vij,vj,vkj->vik", R, diag, R)
    return 0.5 * (M + np.transpose(M, (0, 2, 1)))


def smooth_stretch(field: MetricField, mesh: SurfaceMesh, iterations: int = 1) -> MetricField:
    """Area-weighted one-ring averaging of the stretch ratios.

    Frames stay fixed; tensors are rebuilt from the smoothed ratios.  The
    one-ring neighborhood includes the center vertex.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return field
    if field.frames is None:
        raise ValueError("smoothing needs the curvature frames")
    offsets, idx = mesh.vertex_neighbors
    w = mesh.vertex_areas
    ratios = field.ratios.copy()
    for _ in range(iterations):
        out = np.empty_like(ratios)
        for v in range(mesh.n_vertices):
            nbr = idx[offsets[v] : offsets[v + 1]]
            num = w[v] * ratios[v] + (w[nbr] * ratios[nbr]).sum()
            den = w[v] + w[nbr].sum()
            out[v] = num / den if den > 0 else ratios[v]
        ratios = out
    tensors = tensors_from_frames(field.frames, ratios)
    return MetricField(tensors=tensors, ratios=ratios, frames=field.frames)


def face_metric(field: MetricField, mesh: SurfaceMesh, face: int) -> np.ndarray:
    """Vertex-averaged tensor of one face."""
    i, j, k = mesh.faces[face]
    return (field.tensors[i] + field.tensors[j] + field.tensors[k]) / 3.0


def face_metrics(field: MetricField, mesh: SurfaceMesh) -> np.ndarray:
    """Vertex-averaged tensors of all faces, shape (F, 3, 3)."""
    t = field.tensors
    f = mesh.faces
    return (t[f[:, 0]] + t[f[:, 1]] + t[f[:, 2]]) / 3.0


def metric_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric principal square root of an SPD tensor (or batch)."""
    M = np.asarray(M, dtype=np.float64)
    batched = M.ndim == 3
    evals, evecs = np.linalg.eigh(M)
    if evals.min() <= 0:
        raise ValueError("matrix is not positive definite")
    if batched:
        Q = np.einsum("vij,vj,vkj->vik", evecs, np.sqrt(evals), evecs)
        return 0.5 * (Q + np.transpose(Q, (0, 2, 1)))
    Q = (evecs * np.sqrt(evals)) @ evecs.T
    return 0.5 * (Q + Q.T)


# -- serialization -----------------------------------------------------------

_UT = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def save_metric(field: MetricField, path) -> None:
    """JSON metric file: upper-triangular tensors + ratios."""
    data = {
        "format": "anisoforge-metric",
        "version": 1,
        "vertex_count": len(field),
        "tensors": [[float(M[i, j]) for i, j in _UT] for M in field.tensors],
        "ratios": [float(r) for r in field.ratios],
    }
    with open(path, "w") as fh:
        json.dump(data, fh)


def load_metric(path) -> MetricField:
    with open(path) as fh:
        data = json.load(fh)
    if data.get("format") != "anisoforge-metric" or data.get("version") != 1:
        raise ValueError(f"{path}: not a version-1 metric file")
    V = data["vertex_count"]
    tensors = np.zeros((V, 3, 3))
    raw = data["tensors"]
    if len(raw) != V or len(data["ratios"]) != V:
        raise ValueError(f"{path}: vertex count mismatch")
    for v, six in enumerate(raw):
        for (i, j), val in zip(_UT, six):
            tensors[v, i, j] = val
            tensors[v, j, i] = val
    evals = np.linalg.eigvalsh(tensors)
    if evals.min() < EIG_EPS or evals.max() > 1.0 / EIG_EPS:
        raise ValueError(f"{path}: tensor eigenvalues outside [{EIG_EPS}, {1/EIG_EPS}]")
    return MetricField(tensors=tensors, ratios=np.array(data["ratios"]), frames=None)
