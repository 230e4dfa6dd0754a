"""Deterministic high-dimensional embedding of a metric field.

Keeps the original 3D coordinates as the first three channels and solves
for extra channels so that embedded edge vectors realize the metric dot
products.  Per face, the target deformation is the lifted Jacobian
J = [I_3; B; 0] with B = sqrt(M_F - I_3) (PSD part), so that J^t J = M_F;
the extra channels are fit by an area-weighted sparse least squares over
edge differences, one gauge vertex pinned per connected component.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .mesh import MeshError, SurfaceMesh
from .metric import MetricField, face_metrics, metric_sqrt

log = logging.getLogger("anisoforge.embed")

M_BAR = 8  # 3 original + 5 solved channels, fixed


@dataclass
class EmbeddedMesh:
    """Mesh connectivity with per-vertex coordinates in R^8."""

    coords: np.ndarray  # (V, 8)
    faces: np.ndarray  # (F, 3), shared with the source mesh
    provenance: str = "deterministic"  # or "neural"

    def __post_init__(self):
        if self.coords.ndim != 2 or self.coords.shape[1] != M_BAR:
            raise ValueError(f"coords must be (V, {M_BAR})")

    @property
    def n_vertices(self):
        return len(self.coords)

    @property
    def coords3(self):
        return self.coords[:, :3]


@dataclass
class TriangleBasis:
    """Source basis of one face: edge vectors plus the offset fourth vertex."""

    w_prime: np.ndarray  # 3x3, columns [vj-vi, vk-vi, vl-vi]
    jacobian: np.ndarray  # 3x3 SPD with J^t J = M_F


def fourth_vertex(v_i, v_j, v_k) -> np.ndarray:
    """Offset point above the triangle: v_i + cross / sqrt(||cross||)."""
    v_i = np.asarray(v_i, dtype=np.float64)
    cross = np.cross(np.asarray(v_j, float) - v_i, np.asarray(v_k, float) - v_i)
    norm = np.linalg.norm(cross)
    if norm <= 1e-12:
        raise ValueError("degenerate triangle (collinear vertices)")
    return v_i + cross / np.sqrt(norm)


def triangle_basis(v_i, v_j, v_k, M_F) -> TriangleBasis:
    v_i = np.asarray(v_i, float)
    v_l = fourth_vertex(v_i, v_j, v_k)
    w_prime = np.stack(
        [np.asarray(v_j, float) - v_i, np.asarray(v_k, float) - v_i, v_l - v_i], axis=1
    )
    return TriangleBasis(w_prime=w_prime, jacobian=face_jacobian(M_F))


def face_jacobian(M_F) -> np.ndarray:
    """Symmetric principal square root of the face metric (gauge choice)."""
    return metric_sqrt(M_F)


def lifted_jacobian(M_F) -> np.ndarray:
    """8x3 Jacobian [I_3; B; 0] with B^t B = clip(M_F - I_3, PSD).

    Exact whenever M_F >= I_3, which the curvature metric guarantees
    (eigenvalues {1, ratio^2 >= 1, 1}); negative eigenvalues of M - I are
    clipped to zero otherwise.
    """
    M_F = np.asarray(M_F, dtype=np.float64)
    D = 0.5 * (M_F + M_F.T) - np.eye(3)
    evals, evecs = np.linalg.eigh(D)
    clipped = np.maximum(evals, 0.0)
    B = (evecs * np.sqrt(clipped)) @ evecs.T
    J = np.zeros((M_BAR, 3))
    J[:3, :3] = np.eye(3)
    J[3:6, :3] = B
    return J


def _edge_targets(mesh: SurfaceMesh, field: MetricField):
    """Per face, the lifted target extra-channel vectors for edges ij, ik."""
    MF = face_metrics(field, mesh)
    v = mesh.vertices
    f = mesh.faces
    e_ij = v[f[:, 1]] - v[f[:, 0]]
    e_ik = v[f[:, 2]] - v[f[:, 0]]
    D = 0.5 * (MF + np.transpose(MF, (0, 2, 1))) - np.eye(3)
    evals, evecs = np.linalg.eigh(D)
    nclip = int((evals < -1e-9).sum())
    if nclip:
        log.warning("clipped %d negative eigenvalues of M - I in the lift", nclip)
    B = np.einsum("fij,fj,fkj->fik", evecs, np.sqrt(np.maximum(evals, 0.0)), evecs)
    t_ij = np.einsum("fij,fj->fi", B, e_ij)  # (F, 3) targets in channels 3..5
    t_ik = np.einsum("fij,fj->fi", B, e_ik)
    return t_ij, t_ik


def solve_embedding(mesh: SurfaceMesh, field: MetricField) -> EmbeddedMesh:
    """Least-squares extra channels; first three channels copied bitwise."""
    if len(field) != mesh.n_vertices:
        raise MeshError("metric field / mesh vertex count mismatch")
    V = mesh.n_vertices
    F = mesh.n_faces
    if F == 0:
        raise MeshError("mesh has no faces")
    t_ij, t_ik = _edge_targets(mesh, field)
    w = np.sqrt(mesh.face_areas)
    bad = mesh.face_areas <= 0
    if bad.any():
        raise MeshError(f"{int(bad.sum())} zero-area faces; clean the mesh first")

    f = mesh.faces
    rows = np.repeat(np.arange(2 * F), 2)
    cols = np.concatenate(
        [np.stack([f[:, 1], f[:, 0]], axis=1), np.stack([f[:, 2], f[:, 0]], axis=1)]
    ).reshape(-1)
    vals = np.concatenate(
        [
            np.stack([w, -w], axis=1),
            np.stack([w, -w], axis=1),
        ]
    ).reshape(-1)
    A = coo_matrix((vals, (rows, cols)), shape=(2 * F, V)).tocsr()
    # rhs: (2F, 5); channels 3..5 get the lifted targets, 6..7 stay zero
    b = np.zeros((2 * F, M_BAR - 3))
    b[:F, :3] = t_ij * w[:, None]
    b[F:, :3] = t_ik * w[:, None]

    # pin the lowest vertex id of each connected component
    edges = mesh.edges
    adj = coo_matrix(
        (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(V, V)
    )
    ncomp, labels = connected_components(adj, directed=False)
    pinned = np.zeros(V, dtype=bool)
    for c in range(ncomp):
        pinned[np.nonzero(labels == c)[0][0]] = True
    free = np.nonzero(~pinned)[0]

    Af = A[:, free]
    N = csc_matrix(Af.T @ Af)
    rhs = Af.T @ b
    try:
        lu = splu(N)
    except RuntimeError as exc:
        raise MeshError(f"singular embedding system after pinning: {exc}")
    u = np.zeros((V, M_BAR - 3))
    for c in range(M_BAR - 3):
        u[free, c] = lu.solve(rhs[:, c])
    if not np.isfinite(u).all():
        raise MeshError("non-finite embedding solution")

    coords = np.zeros((V, M_BAR))
    coords[:, :3] = mesh.vertices  # copied, never solved
    coords[:, 3:] = u
    return EmbeddedMesh(coords=coords, faces=mesh.faces, provenance="deterministic")


def embedding_objective(mesh: SurfaceMesh, field: MetricField, extra: np.ndarray) -> float:
    """Area-weighted objective value for given extra channels (V, 5)."""
    t_ij, t_ik = _edge_targets(mesh, field)
    f = mesh.faces
    d_ij = extra[f[:, 1]] - extra[f[:, 0]]
    d_ik = extra[f[:, 2]] - extra[f[:, 0]]
    r = np.zeros(mesh.n_faces)
    r += ((d_ij[:, :3] - t_ij) ** 2).sum(axis=1) + (d_ij[:, 3:] ** 2).sum(axis=1)
    r += ((d_ik[:, :3] - t_ik) ** 2).sum(axis=1) + (d_ik[:, 3:] ** 2).sum(axis=1)
    return float((mesh.face_areas * r).sum())


def embed_residual(embedded: EmbeddedMesh, mesh: SurfaceMesh, field: MetricField):
    """Per-face Frobenius residual of the embedding objective.

    Returns (absolute (F,), relative (F,), summary dict).
    """
    if embedded.n_vertices != mesh.n_vertices or not np.array_equal(
        embedded.faces, mesh.faces
    ):
        raise MeshError("embedded mesh does not match source connectivity")
    t_ij, t_ik = _edge_targets(mesh, field)
    f = mesh.faces
    extra = embedded.coords[:, 3:]
    d_ij = extra[f[:, 1]] - extra[f[:, 0]]
    d_ik = extra[f[:, 2]] - extra[f[:, 0]]
    res2 = (
        ((d_ij[:, :3] - t_ij) ** 2).sum(axis=1)
        + (d_ij[:, 3:] ** 2).sum(axis=1)
        + ((d_ik[:, :3] - t_ik) ** 2).sum(axis=1)
        + (d_ik[:, 3:] ** 2).sum(axis=1)
    )
    absolute = np.sqrt(res2)
    v = mesh.vertices
    e_ij = v[f[:, 1]] - v[f[:, 0]]
    e_ik = v[f[:, 2]] - v[f[:, 0]]
    target2 = (
        (e_ij**2).sum(axis=1)
        + (t_ij**2).sum(axis=1)
        + (e_ik**2).sum(axis=1)
        + (t_ik**2).sum(axis=1)
    )
    relative = absolute / np.maximum(np.sqrt(target2), 1e-300)
    summary = {
        "abs_min": float(absolute.min()),
        "abs_median": float(np.median(absolute)),
        "abs_max": float(absolute.max()),
        "rel_min": float(relative.min()),
        "rel_median": float(np.median(relative)),
        "rel_max": float(relative.max()),
    }
    return absolute, relative, summary


def edge_length_distortion(embedded: EmbeddedMesh, field: MetricField, mesh: SurfaceMesh) -> np.ndarray:
    """Per-edge ratio of embedded length to metric length."""
    if embedded.n_vertices != mesh.n_vertices:
        raise MeshError("embedded mesh does not match source connectivity")
    edges = mesh.edges
    e3 = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    Me = 0.5 * (field.tensors[edges[:, 0]] + field.tensors[edges[:, 1]])
    metric_len = np.sqrt(np.einsum("ei,eij,ej->e", e3, Me, e3))
    if (metric_len <= 0).any():
        raise MeshError("zero metric length edge")
    ebar = embedded.coords[edges[:, 1]] - embedded.coords[edges[:, 0]]
    return np.linalg.norm(ebar, axis=1) / metric_len


# -- .hde files ----------------------------------------------------------------

_HDE_MAGIC = "HDE1"


def save_hde(embedded: EmbeddedMesh, path) -> None:
    """Text embedding file: header, m-bar floats per vertex, face list."""
    with open(path, "w") as fh:
        fh.write(
            f"{_HDE_MAGIC} {embedded.n_vertices} {len(embedded.faces)} "
            f"{M_BAR} {embedded.provenance}\n"
        )
        for row in embedded.coords:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")
        for a, b, c in embedded.faces:
            fh.write(f"{a} {b} {c}\n")


def load_hde(path) -> EmbeddedMesh:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[0] != _HDE_MAGIC:
            raise MeshError(f"{path}: not an {_HDE_MAGIC} embedding file")
        nv, nf, mbar = int(header[1]), int(header[2]), int(header[3])
        tag = header[4]
        if mbar != M_BAR:
            raise MeshError(f"{path}: unsupported embedding dimension {mbar}")
        coords = np.zeros((nv, M_BAR))
        for i in range(nv):
            parts = fh.readline().split()
            if len(parts) != M_BAR:
                raise MeshError(f"{path}: bad vertex line {i}")
            coords[i] = [float(x) for x in parts]
        faces = np.zeros((nf, 3), dtype=np.int64)
        for i in range(nf):
            parts = fh.readline().split()
            if len(parts) != 3:
                raise MeshError(f"{path}: bad face line {i}")
            faces[i] = [int(x) for x in parts]
    if nf and (faces.min() < 0 or faces.max() >= nv):
        raise MeshError(f"{path}: face index out of range")
    return EmbeddedMesh(coords=coords, faces=faces, provenance=tag)


def embed_from_mesh3(mesh: SurfaceMesh, provenance="deterministic") -> EmbeddedMesh:
    """Zero-padded 8D lift of a plain 3D mesh (identity-metric shortcut)."""
    coords = np.zeros((mesh.n_vertices, M_BAR))
    coords[:, :3] = mesh.vertices
    return EmbeddedMesh(coords=coords, faces=mesh.faces, provenance=provenance)
