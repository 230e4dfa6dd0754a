"""Restricted Voronoi diagrams of site points on the embedded surface.

Cells are built per surface triangle by re-entrant clipping against site
bisectors, with every produced corner carrying symbolic provenance
(configuration C1/C2/C3) so the CVT gradient can differentiate through the
clipping.  Candidate owners per triangle come from a k-d tree ball query;
bisectors are processed in increasing distance until the security radius
guarantees no farther site can cut the cell.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .embed import M_BAR, EmbeddedMesh

log = logging.getLogger("anisoforge.rvd")

DROP_AREA = 1e-14
SITE_CAP = 10**7


@dataclass
class SiteSet:
    """Voronoi sites in R^8 with barycentric anchors on the embedded surface."""

    positions: np.ndarray  # (N, 8)
    anchor_face: np.ndarray  # (N,)
    anchor_bary: np.ndarray  # (N, 3)

    def __post_init__(self):
        if self.positions.ndim != 2 or self.positions.shape[1] != M_BAR:
            raise ValueError(f"positions must be (N, {M_BAR})")
        if not np.isfinite(self.positions).all():
            raise ValueError("non-finite site positions")
        if len(self.positions) < 1:
            raise ValueError("need at least one site")
        bad = (self.anchor_bary < -1e-9).any() or (
            np.abs(self.anchor_bary.sum(axis=1) - 1.0) > 1e-9
        ).any()
        if bad:
            raise ValueError("anchors must be valid barycentric coordinates")

    def __len__(self):
        return len(self.positions)

    def copy(self):
        return SiteSet(
            self.positions.copy(), self.anchor_face.copy(), self.anchor_bary.copy()
        )


@dataclass
class ClipVertex:
    """One RVD facet corner with its symbolic provenance."""

    position: np.ndarray
    config: str  # "C1" | "C2" | "C3"
    mesh_vertex: int = -1  # C1
    edge: tuple = ()  # C2: (va, vb)
    bisectors: tuple = ()  # C2: (owner, j); C3: ((owner, j), (owner, k))
    lambdas: tuple = ()  # C2: (lambda1, lambda2)
    face: int = -1  # C3 (and the source face generally)


@dataclass
class RvdFacet:
    site: int
    face: int
    corners: list
    area: float


@dataclass
class RestrictedVoronoiDiagram:
    """Facet soup grouped by site, with flat arrays for the kernels."""

    embedded: EmbeddedMesh
    sites: SiteSet
    n_facets: int
    fac_site: np.ndarray  # (M,)
    fac_face: np.ndarray  # (M,)
    fac_pos: np.ndarray  # (M, 3, 8)
    fac_cfg: np.ndarray  # (M, 3) in {0, 1, 2}
    fac_prov: np.ndarray  # (M, 3, 3)
    fac_lam: np.ndarray  # (M, 3, 2)
    plane_o: np.ndarray
    plane_u: np.ndarray
    plane_v: np.ndarray
    masses: np.ndarray  # (N,) facet-area sums per site

    def facet_areas(self) -> np.ndarray:
        p = self.fac_pos
        u = p[:, 1] - p[:, 0]
        v = p[:, 2] - p[:, 0]
        uu = (u * u).sum(axis=1)
        vv = (v * v).sum(axis=1)
        uv = (u * v).sum(axis=1)
        return 0.5 * np.sqrt(np.maximum(uu * vv - uv * uv, 0.0))

    def facet(self, t: int) -> RvdFacet:
        corners = []
        s = int(self.fac_site[t])
        f = int(self.fac_face[t])
        for k in range(3):
            cfg = int(self.fac_cfg[t, k])
            pos = self.fac_pos[t, k].copy()
            if cfg == _kernels.CFG_C1:
                corners.append(
                    ClipVertex(pos, "C1", mesh_vertex=int(self.fac_prov[t, k, 0]), face=f)
                )
            elif cfg == _kernels.CFG_C2:
                corners.append(
                    ClipVertex(
                        pos,
                        "C2",
                        edge=(int(self.fac_prov[t, k, 0]), int(self.fac_prov[t, k, 1])),
                        bisectors=(s, int(self.fac_prov[t, k, 2])),
                        lambdas=(float(self.fac_lam[t, k, 0]), float(self.fac_lam[t, k, 1])),
                        face=f,
                    )
                )
            else:
                corners.append(
                    ClipVertex(
                        pos,
                        "C3",
                        bisectors=(
                            (s, int(self.fac_prov[t, k, 0])),
                            (s, int(self.fac_prov[t, k, 1])),
                        ),
                        face=f,
                    )
                )
        return RvdFacet(site=s, face=f, corners=corners, area=float(self.facet_areas()[t]))

    def facets(self):
        for t in range(self.n_facets):
            yield self.facet(t)

    def replay_positions(self) -> tuple:
        """Recompute all corner positions from provenance; (positions, failures)."""
        out = np.zeros_like(self.fac_pos)
        bad = _kernels._replay_positions(
            self.n_facets,
            self.fac_site,
            self.fac_face,
            self.fac_cfg,
            self.fac_prov,
            np.ascontiguousarray(self.embedded.coords),
            np.ascontiguousarray(self.sites.positions),
            self.plane_o,
            self.plane_u,
            self.plane_v,
            out,
        )
        return out, int(bad)


# -- geometry helpers ---------------------------------------------------------


def facet_area(corners) -> float:
    """Heron area of a triangle in R^m, Kahan-stabilized edge ordering."""
    p = np.asarray(corners, dtype=np.float64)
    if p.shape != (3, p.shape[1]):
        raise ValueError("corners must be (3, m)")
    a = float(np.linalg.norm(p[0] - p[1]))
    b = float(np.linalg.norm(p[1] - p[2]))
    c = float(np.linalg.norm(p[2] - p[0]))
    return float(_kernels._heron(a, b, c))


def embedded_face_planes(embedded: EmbeddedMesh):
    """Deterministic orthonormal in-plane basis (o, u, v) per embedded face."""
    coords = embedded.coords
    f = embedded.faces
    o = coords[f[:, 0]].copy()
    e1 = coords[f[:, 1]] - coords[f[:, 0]]
    e2 = coords[f[:, 2]] - coords[f[:, 0]]
    n1 = np.linalg.norm(e1, axis=1)
    n1 = np.where(n1 > 0, n1, 1.0)
    u = e1 / n1[:, None]
    e2p = e2 - (e2 * u).sum(axis=1)[:, None] * u
    n2 = np.linalg.norm(e2p, axis=1)
    n2 = np.where(n2 > 0, n2, 1.0)
    v = e2p / n2[:, None]
    return np.ascontiguousarray(o), np.ascontiguousarray(u), np.ascontiguousarray(v)


def embedded_face_areas(embedded: EmbeddedMesh) -> np.ndarray:
    coords = embedded.coords
    f = embedded.faces
    u = coords[f[:, 1]] - coords[f[:, 0]]
    v = coords[f[:, 2]] - coords[f[:, 0]]
    uu = (u * u).sum(axis=1)
    vv = (v * v).sum(axis=1)
    uv = (u * v).sum(axis=1)
    return 0.5 * np.sqrt(np.maximum(uu * vv - uv * uv, 0.0))


# -- site initialization --------------------------------------------------------


def init_sites(embedded: EmbeddedMesh, n: int, seed: int) -> SiteSet:
    """Sample n sites on the embedded surface, probability ~ high-d area."""
    if n < 4:
        raise ValueError("need at least 4 sites")
    if n > SITE_CAP:
        raise ValueError(f"site count {n} exceeds the sanity cap {SITE_CAP}")
    areas = embedded_face_areas(embedded)
    total = areas.sum()
    if total <= 0:
        raise ValueError("embedded surface has zero area")
    rng = np.random.default_rng(seed)
    faces = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    bary = np.stack([1.0 - u - v, u, v], axis=1)
    tri = embedded.coords[embedded.faces[faces]]  # (n, 3, 8)
    positions = np.einsum("nk,nkc->nc", bary, tri)
    return SiteSet(positions=positions, anchor_face=faces.astype(np.int64), anchor_bary=bary)


# -- public clipping op -----------------------------------------------------------


def clip_by_bisector(polygon, x_i, x_j):
    """Keep the part of a polygon (or 2-point segment) closer to x_i.

    Returns (points, records); records[k] is None for kept input vertices or
    (lambda1, lambda2, a_index, b_index) for new intersection vertices with
    position lambda1 * P[a] + lambda2 * P[b].
    """
    P = [np.asarray(p, dtype=np.float64) for p in polygon]
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    gap = np.linalg.norm(x_i - x_j)
    if gap <= 1e-12:
        raise ValueError("coincident sites have no bisector")
    nrm = x_j - x_i
    mid = 0.5 * (x_i + x_j)

    def h(p):
        return float(nrm @ (p - mid))

    def cut(a, b):
        ha, hb = h(P[a]), h(P[b])
        t = ha / (ha - hb)
        lam1, lam2 = 1.0 - t, t
        return P[a] * lam1 + P[b] * lam2, (lam1, lam2, a, b)

    if len(P) == 2:  # open segment
        ha, hb = h(P[0]), h(P[1])
        if ha <= 0 and hb <= 0:
            return [P[0], P[1]], [None, None]
        if ha > 0 and hb > 0:
            return [], []
        pos, rec = cut(0, 1)
        if ha <= 0:
            return [P[0], pos], [None, rec]
        return [pos, P[1]], [rec, None]

    out = []
    recs = []
    n = len(P)
    for m in range(n):
        m2 = (m + 1) % n
        hP, hQ = h(P[m]), h(P[m2])
        if hP <= 0:
            out.append(P[m])
            recs.append(None)
        if (hP < 0 and hQ > 0) or (hP > 0 and hQ < 0):
            pos, rec = cut(m, m2)
            out.append(pos)
            recs.append(rec)
    return out, recs


# -- RVD construction ---------------------------------------------------------------


def _site_neighbor_tables(sites: np.ndarray, k: int):
    tree = cKDTree(sites)
    n = len(sites)
    k = min(k, n - 1)
    if k == 0:
        return tree, np.full((n, 0), -1, dtype=np.int64), np.full((n, 0), np.inf)
    dist, idx = tree.query(sites, k=k + 1)
    # strip self matches (first column, up to duplicates)
    nbr_idx = np.full((n, k), -1, dtype=np.int64)
    nbr_dist = np.full((n, k), np.inf)
    for i in range(n):
        cols = [c for c in range(k + 1) if idx[i, c] != i][:k]
        nbr_idx[i, : len(cols)] = idx[i, cols]
        nbr_dist[i, : len(cols)] = dist[i, cols]
    return tree, np.ascontiguousarray(nbr_idx), np.ascontiguousarray(nbr_dist)


def _candidate_pairs(embedded: EmbeddedMesh, tree: cKDTree, sites: np.ndarray):
    coords = embedded.coords
    f = embedded.faces
    tri = coords[f]  # (F, 3, 8)
    centroid = tri.mean(axis=1)
    r_face = np.linalg.norm(tri - centroid[:, None, :], axis=2).max(axis=1)
    d_g, nearest_g = tree.query(centroid)
    radius = d_g + 2.0 * r_face
    radius *= 1.0 + 1e-12
    radius += 1e-12
    balls = tree.query_ball_point(centroid, r=radius)
    pair_face = []
    pair_site = []
    for fi in range(len(f)):
        cand = balls[fi]
        if not cand:
            cand = [int(nearest_g[fi])]
        for s in sorted(cand):
            pair_face.append(fi)
            pair_site.append(s)
    return (
        np.asarray(pair_face, dtype=np.int64),
        np.asarray(pair_site, dtype=np.int64),
    )


def compute_rvd(embedded: EmbeddedMesh, sites: SiteSet) -> RestrictedVoronoiDiagram:
    """Exact-in-floats RVD of the sites on the embedded surface."""
    pos = np.ascontiguousarray(sites.positions)
    if len(pos) > 1 and np.unique(pos, axis=0).shape[0] < 2:
        raise ValueError("all sites coincide; the diagram is undefined")
    verts8 = np.ascontiguousarray(embedded.coords)
    faces = np.ascontiguousarray(embedded.faces)
    plane_o, plane_u, plane_v = embedded_face_planes(embedded)
    n = len(sites)

    k = min(n - 1, 48)
    while True:
        tree, nbr_idx, nbr_dist = _site_neighbor_tables(pos, k)
        pair_face, pair_site = _candidate_pairs(embedded, tree, pos)
        cap = max(16 * len(pair_face), 1024)
        while True:
            fac_site = np.zeros(cap, dtype=np.int64)
            fac_face = np.zeros(cap, dtype=np.int64)
            fac_pos = np.zeros((cap, 3, M_BAR))
            fac_cfg = np.zeros((cap, 3), dtype=np.int64)
            fac_prov = np.zeros((cap, 3, 3), dtype=np.int64)
            fac_lam = np.zeros((cap, 3, 2))
            n_fac, overflow, unresolved = _kernels.build_rvd(
                verts8, faces, pos, pair_face, pair_site, nbr_idx, nbr_dist,
                k >= n - 1,
                plane_o, plane_u, plane_v, DROP_AREA,
                fac_site, fac_face, fac_pos, fac_cfg, fac_prov, fac_lam,
            )
            if overflow:
                cap *= 2
                continue
            break
        if unresolved and k < n - 1:
            k = min(n - 1, k * 2)
            log.info("security radius unmet for %d cells; retrying with k=%d", unresolved, k)
            continue
        if unresolved:
            log.warning("%d cells exhausted the full site list", unresolved)
        break

    masses = np.zeros(n)
    if n_fac:
        p = fac_pos[:n_fac]
        u = p[:, 1] - p[:, 0]
        v = p[:, 2] - p[:, 0]
        uu = (u * u).sum(axis=1)
        vv = (v * v).sum(axis=1)
        uv = (u * v).sum(axis=1)
        areas = 0.5 * np.sqrt(np.maximum(uu * vv - uv * uv, 0.0))
        np.add.at(masses, fac_site[:n_fac], areas)

    return RestrictedVoronoiDiagram(
        embedded=embedded,
        sites=sites,
        n_facets=int(n_fac),
        fac_site=fac_site[:n_fac],
        fac_face=fac_face[:n_fac],
        fac_pos=fac_pos[:n_fac],
        fac_cfg=fac_cfg[:n_fac],
        fac_prov=fac_prov[:n_fac],
        fac_lam=fac_lam[:n_fac],
        plane_o=plane_o,
        plane_u=plane_u,
        plane_v=plane_v,
        masses=masses,
    )
