"""Triangle mesh container, OBJ/OFF I/O, validation and normalization."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

log = logging.getLogger("anisoforge.mesh")

DEGENERATE_AREA_TOL = 1e-12


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


class MeshFormatError(MeshError):
    """Unparseable mesh file; carries the offending line number."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


@dataclass
class MeshDiagnostics:
    non_manifold_edges: int = 0
    degenerate_faces: int = 0
    duplicate_vertices: int = 0
    components: int = 0
    boundary_edges: int = 0
    orientation_conflicts: int = 0
    isolated_vertices: int = 0

    def is_clean(self) -> bool:
        return (
            self.non_manifold_edges == 0
            and self.degenerate_faces == 0
            and self.orientation_conflicts == 0
        )


class SurfaceMesh:
    """Indexed triangle mesh, immutable after construction.

    Vertices are float64 (V, 3), faces int64 (F, 3) with counterclockwise
    orientation as stored.  Adjacency structures are built lazily and cached;
    the arrays themselves are marked read-only so the mesh can be shared
    across threads.
    """

    def __init__(self, vertices, faces):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        faces = np.ascontiguousarray(faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {vertices.shape}")
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {faces.shape}")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise MeshError("face index out of range")
        if faces.size:
            same = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 2] == faces[:, 0])
            )
            if same.any():
                raise MeshError(
                    f"{int(same.sum())} faces reference a vertex twice"
                )
        vertices.setflags(write=False)
        faces.setflags(write=False)
        self.vertices = vertices
        self.faces = faces
        self._cache = {}

    # -- basic counts ------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def __repr__(self):
        return f"SurfaceMesh(V={self.n_vertices}, F={self.n_faces})"

    # -- cached adjacency --------------------------------------------------

    def _cached(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (E, 2) vertex-index pairs."""

        def build():
            if self.n_faces == 0:
                return np.zeros((0, 2), dtype=np.int64)
            e = np.concatenate(
                [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
            )
            e = np.sort(e, axis=1)
            e = np.unique(e, axis=0)
            e.setflags(write=False)
            return e

        return self._cached("edges", build)

    @property
    def edge_face_count(self) -> np.ndarray:
        """Number of incident faces per edge (aligned with ``edges``)."""
        return self._edge_tables()[1]

    def _edge_tables(self):
        def build():
            edges = self.edges
            if len(edges) == 0:
                return np.zeros((0, 2), np.int64), np.zeros(0, np.int64)
            key = edges[:, 0] * self.n_vertices + edges[:, 1]
            half = np.concatenate(
                [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
            )
            hkey = np.sort(half, axis=1)
            hkey = hkey[:, 0] * self.n_vertices + hkey[:, 1]
            idx = np.searchsorted(key, hkey)
            counts = np.bincount(idx, minlength=len(edges))
            # first two incident faces per edge; extra faces only counted
            ef = np.full((len(edges), 2), -1, dtype=np.int64)
            fids = np.tile(np.arange(self.n_faces), 3)
            order = np.argsort(idx, kind="stable")
            sidx = idx[order]
            sfid = fids[order]
            starts = np.searchsorted(sidx, np.arange(len(edges)))
            for e in range(len(edges)):
                s = starts[e]
                c = counts[e]
                if c > 0:
                    ef[e, 0] = sfid[s]
                if c > 1:
                    ef[e, 1] = sfid[s + 1]
            ef.setflags(write=False)
            counts.setflags(write=False)
            return ef, counts

        return self._cached("edge_tables", build)

    @property
    def edge_faces(self) -> np.ndarray:
        """First two incident face ids per edge, -1 padded."""
        return self._edge_tables()[0]

    @property
    def boundary_edge_mask(self) -> np.ndarray:
        def build():
            m = self.edge_face_count == 1
            m.setflags(write=False)
            return m

        return self._cached("boundary_mask", build)

    @property
    def vertex_neighbors(self):
        """One-ring vertex adjacency as CSR-style (offsets, indices)."""

        def build():
            edges = self.edges
            both = np.concatenate([edges, edges[:, ::-1]])
            order = np.lexsort((both[:, 1], both[:, 0]))
            both = both[order]
            offsets = np.searchsorted(
                both[:, 0], np.arange(self.n_vertices + 1)
            ).astype(np.int64)
            idx = both[:, 1].copy()
            offsets.setflags(write=False)
            idx.setflags(write=False)
            return offsets, idx

        return self._cached("vneighbors", build)

    @property
    def vertex_faces(self):
        """Incident faces per vertex as CSR-style (offsets, indices)."""

        def build():
            vids = self.faces.reshape(-1)
            fids = np.repeat(np.arange(self.n_faces, dtype=np.int64), 3)
            order = np.argsort(vids, kind="stable")
            vids = vids[order]
            fids = fids[order]
            offsets = np.searchsorted(vids, np.arange(self.n_vertices + 1)).astype(
                np.int64
            )
            offsets.setflags(write=False)
            fids.setflags(write=False)
            return offsets, fids

        return self._cached("vfaces", build)

    @property
    def face_normals(self) -> np.ndarray:
        """Unit face normals; zero rows for degenerate faces."""

        def build():
            v = self.vertices
            f = self.faces
            n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
            norm = np.linalg.norm(n, axis=1)
            good = norm > 0
            n[good] /= norm[good, None]
            n[~good] = 0.0
            n.setflags(write=False)
            return n

        return self._cached("fnormals", build)

    @property
    def face_areas(self) -> np.ndarray:
        def build():
            v = self.vertices
            f = self.faces
            c = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
            a = 0.5 * np.linalg.norm(c, axis=1)
            a.setflags(write=False)
            return a

        return self._cached("fareas", build)

    @property
    def vertex_areas(self) -> np.ndarray:
        """Barycentric vertex areas (one third of incident face areas)."""

        def build():
            a = np.zeros(self.n_vertices)
            fa = self.face_areas / 3.0
            for k in range(3):
                np.add.at(a, self.faces[:, k], fa)
            a.setflags(write=False)
            return a

        return self._cached("vareas", build)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_faces


# -- construction helpers ----------------------------------------------------


def _fan_triangulate(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def load_mesh(path) -> SurfaceMesh:
    """Load an OBJ or OFF triangle mesh; polygons are fan-triangulated."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix == ".off":
        return _load_off(path)
    raise MeshFormatError(path, 0, f"unsupported format '{suffix}' (OBJ/OFF only)")


def _load_obj(path) -> SurfaceMesh:
    verts = []
    faces = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshFormatError(path, lineno, "vertex needs 3 coordinates")
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshFormatError(path, lineno, "bad vertex coordinate")
            elif tag == "f":
                idx = []
                for token in parts[1:]:
                    stem = token.split("/")[0]
                    try:
                        i = int(stem)
                    except ValueError:
                        raise MeshFormatError(path, lineno, f"bad face index {token!r}")
                    if i == 0:
                        raise MeshFormatError(path, lineno, "OBJ face indices are 1-based")
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise MeshFormatError(path, lineno, "face needs at least 3 vertices")
                for tri in _fan_triangulate(idx):
                    faces.append(tri)
            # vn/vt/o/g/s/usemtl/mtllib silently ignored
    if not verts:
        raise MeshFormatError(path, 0, "no vertices found")
    try:
        return SurfaceMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except MeshError as exc:
        raise MeshFormatError(path, 0, str(exc))


def _load_off(path) -> SurfaceMesh:
    with open(path) as fh:
        lines = fh.readlines()
    tokens = []
    linenos = []
    for lineno, line in enumerate(lines, start=1):
        body = line.split("#")[0].strip()
        if body:
            for tok in body.split():
                tokens.append(tok)
                linenos.append(lineno)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(tokens):
            raise MeshFormatError(path, linenos[-1] if linenos else 0, f"truncated file reading {what}")
        out = tokens[pos : pos + n]
        pos += n
        return out

    first = take(1, "header")[0]
    if first.upper() == "OFF":
        counts = take(3, "counts")
    else:
        counts = [first] + take(2, "counts")
    try:
        nv, nf, _ = (int(c) for c in counts)
    except ValueError:
        raise MeshFormatError(path, linenos[0], "bad OFF counts")
    verts = np.zeros((nv, 3))
    for i in range(nv):
        xyz = take(3, "vertex")
        try:
            verts[i] = [float(x) for x in xyz]
        except ValueError:
            raise MeshFormatError(path, linenos[min(pos, len(linenos)) - 1], "bad vertex coordinate")
    faces = []
    for _ in range(nf):
        n = int(take(1, "face size")[0])
        idx = [int(t) for t in take(n, "face")]
        if n < 3:
            raise MeshFormatError(path, linenos[min(pos, len(linenos)) - 1], "face needs >= 3 vertices")
        for tri in _fan_triangulate(idx):
            faces.append(tri)
    try:
        return SurfaceMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))
    except MeshError as exc:
        raise MeshFormatError(path, 0, str(exc))


def save_mesh(mesh: SurfaceMesh, path) -> None:
    """Write OBJ or OFF (by extension) with 9 significant digits."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        with open(path, "w") as fh:
            for v in mesh.vertices:
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
            for f in mesh.faces:
                fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    elif suffix == ".off":
        with open(path, "w") as fh:
            fh.write("OFF\n")
            fh.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
            for v in mesh.vertices:
                fh.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
            for f in mesh.faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
    else:
        raise MeshFormatError(path, 0, f"unsupported format '{suffix}' (OBJ/OFF only)")


# -- normalization -----------------------------------------------------------


@dataclass
class BoxTransform:
    """Uniform scale + translation: y = (x - center) * scale."""

    center: np.ndarray
    scale: float

    def apply(self, points):
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def invert(self, points):
        return np.asarray(points, dtype=np.float64) / self.scale + self.center


def normalize_unit_box(mesh: SurfaceMesh):
    """Scale/translate the mesh into [-1, 1]^3, longest axis touching the box.

    Returns (normalized mesh, BoxTransform) with the transform invertible.
    """
    if mesh.n_vertices == 0:
        raise MeshError("empty mesh")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise MeshError("zero-extent bounding box")
    tf = BoxTransform(center=(lo + hi) / 2.0, scale=2.0 / extent)
    return SurfaceMesh(tf.apply(mesh.vertices), mesh.faces), tf


# -- normals -----------------------------------------------------------------


def vertex_normals(mesh: SurfaceMesh) -> np.ndarray:
    """Area-weighted vertex normals; isolated vertices get a zero normal."""
    n = np.zeros((mesh.n_vertices, 3))
    v = mesh.vertices
    f = mesh.faces
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])  # area-weighted
    for k in range(3):
        np.add.at(n, f[:, k], fn)
    norm = np.linalg.norm(n, axis=1)
    good = norm > 1e-300
    n[good] /= norm[good, None]
    n[~good] = 0.0
    if (~good).any():
        log.warning("%d vertices have undefined normals (isolated or degenerate)", int((~good).sum()))
    return n


# -- validation --------------------------------------------------------------


def validate(mesh: SurfaceMesh) -> MeshDiagnostics:
    """Diagnostic counts only; never mutates or rejects the mesh."""
    d = MeshDiagnostics()
    d.non_manifold_edges = int((mesh.edge_face_count > 2).sum())
    d.boundary_edges = int(mesh.boundary_edge_mask.sum())
    d.degenerate_faces = int((mesh.face_areas < DEGENERATE_AREA_TOL).sum())

    if mesh.n_vertices:
        _, uidx = np.unique(mesh.vertices, axis=0, return_index=True)
        d.duplicate_vertices = mesh.n_vertices - len(uidx)

    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.faces.reshape(-1)] = True
    d.isolated_vertices = int((~used).sum())

    if mesh.n_vertices:
        edges = mesh.edges
        if len(edges):
            m = coo_matrix(
                (np.ones(len(edges)), (edges[:, 0], edges[:, 1])),
                shape=(mesh.n_vertices, mesh.n_vertices),
            )
            d.components = int(connected_components(m, directed=False)[0])
        else:
            d.components = mesh.n_vertices

    # orientation: a consistently oriented manifold edge is traversed once
    # in each direction by its two faces
    if mesh.n_faces:
        half = np.concatenate(
            [mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]]
        )
        key = half[:, 0] * mesh.n_vertices + half[:, 1]
        _, counts = np.unique(key, return_counts=True)
        d.orientation_conflicts = int((counts > 1).sum())
    return d
