"""Back-projection to 3D, dual-mesh extraction, inverted-element repair.

The high-d diagram back-projects by truncating the extra channels (the
first three coordinates were never modified); sites land on the original
surface through their barycentric anchors.  The output connectivity is the
dual of the diagram: one vertex per site, one triangle per three-cell
corner.  Inverted duals (normal opposing the local source normal) are
repaired by inserting sites and re-optimizing, bounded by a budget.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cvt import optimize
from .embed import EmbeddedMesh
from .mesh import SurfaceMesh, validate
from .proximity import NearestSurface
from .rvd import RestrictedVoronoiDiagram, SiteSet, compute_rvd

log = logging.getLogger("anisoforge.extract")

DEFAULT_BUDGET_FRACTION = 0.05
DEFAULT_REPAIR_ITERS = 25


@dataclass
class BackProjection:
    fac_site: np.ndarray
    fac_face: np.ndarray
    fac_pos3: np.ndarray  # (M, 3, 3) truncated corners
    sites3: np.ndarray  # (N, 3) anchor-reconstructed site positions


@dataclass
class RepairLog:
    insertions: list = field(default_factory=list)  # (round, n_inverted, n_inserted)
    rounds: int = 0
    budget: int = 0
    exhausted: bool = False

    def to_dict(self):
        return {
            "rounds": self.rounds,
            "budget": self.budget,
            "exhausted": self.exhausted,
            "insertions": [
                {"round": r, "inverted": ni, "inserted": ns}
                for r, ni, ns in self.insertions
            ],
        }


@dataclass
class RemeshResult:
    mesh: SurfaceMesh
    site_of_vertex: np.ndarray
    sites: SiteSet
    rvd: RestrictedVoronoiDiagram
    repair: RepairLog
    inverted_remaining: int = 0


def _check_anchors(embedded: EmbeddedMesh, sites: SiteSet):
    n_faces = len(embedded.faces)
    if (sites.anchor_face < 0).any() or (sites.anchor_face >= n_faces).any():
        raise ValueError("stale site anchors: face id out of range")
    b = sites.anchor_bary
    if (b < -1e-6).any() or (np.abs(b.sum(axis=1) - 1.0) > 1e-6).any():
        raise ValueError("stale site anchors: invalid barycentric coordinates")


def back_project(rvd: RestrictedVoronoiDiagram, sites: SiteSet) -> BackProjection:
    """Truncate facet corners to 3D; rebuild site positions from anchors."""
    _check_anchors(rvd.embedded, sites)
    emb = rvd.embedded
    tri3 = emb.coords3[emb.faces[sites.anchor_face]]  # (N, 3, 3)
    sites3 = np.einsum("nk,nkc->nc", sites.anchor_bary, tri3)
    return BackProjection(
        fac_site=rvd.fac_site,
        fac_face=rvd.fac_face,
        fac_pos3=rvd.fac_pos[:, :, :3].copy(),
        sites3=sites3,
    )


def extract_rdt(rvd: RestrictedVoronoiDiagram, sites: SiteSet) -> tuple:
    """Dual triangulation: (SurfaceMesh, site-of-vertex map).

    A triangle (i, j, k) is emitted whenever cells i, j, k share a C3
    corner; orientation follows the source face the corner lies in.
    """
    if len(sites) < 3:
        raise ValueError("need at least 3 cells to extract a dual mesh")
    bp = back_project(rvd, sites)
    emb = rvd.embedded
    v3 = emb.coords3
    f = emb.faces
    fn = np.cross(
        v3[f[:, 1]] - v3[f[:, 0]], v3[f[:, 2]] - v3[f[:, 0]]
    )

    tris = {}
    c3_rows, c3_cols = np.nonzero(rvd.fac_cfg == 2)
    for t, k in zip(c3_rows, c3_cols):
        s = int(rvd.fac_site[t])
        j = int(rvd.fac_prov[t, k, 0])
        kk = int(rvd.fac_prov[t, k, 1])
        key = tuple(sorted((s, j, kk)))
        if len(set(key)) < 3 or key in tris:
            continue
        face = int(rvd.fac_face[t])
        a, b, c = bp.sites3[s], bp.sites3[j], bp.sites3[kk]
        n = np.cross(b - a, c - a)
        if n @ fn[face] >= 0:
            tris[key] = (s, j, kk)
        else:
            tris[key] = (s, kk, j)

    if not tris:
        return SurfaceMesh(bp.sites3, np.zeros((0, 3), dtype=np.int64)), np.arange(
            len(sites), dtype=np.int64
        )
    faces = np.array([tris[k] for k in sorted(tris)], dtype=np.int64)
    mesh = SurfaceMesh(bp.sites3, faces)
    diag = validate(mesh)
    if not diag.is_clean():
        log.info(
            "dual mesh diagnostics: %d non-manifold edges, %d orientation conflicts",
            diag.non_manifold_edges,
            diag.orientation_conflicts,
        )
    return mesh, np.arange(len(sites), dtype=np.int64)


def detect_inverted(rdt: SurfaceMesh, reference: SurfaceMesh) -> np.ndarray:
    """Face ids whose normal opposes the nearest reference face normal."""
    if rdt.n_faces == 0:
        return np.zeros(0, dtype=np.int64)
    centroids = rdt.vertices[rdt.faces].mean(axis=1)
    ns = NearestSurface(reference)
    _, ref_face, _, _ = ns.query(centroids)
    dots = (rdt.face_normals * reference.face_normals[ref_face]).sum(axis=1)
    return np.nonzero(dots < 0.0)[0].astype(np.int64)


def _circumcenter3(a, b, c):
    # classic barycentric circumcenter; falls back to the centroid for
    # degenerate triangles
    la, lb, lc = ((b - c) ** 2).sum(), ((a - c) ** 2).sum(), ((a - b) ** 2).sum()
    wa = la * (lb + lc - la)
    wb = lb * (lc + la - lb)
    wc = lc * (la + lb - lc)
    w = wa + wb + wc
    if abs(w) < 1e-300:
        return (a + b + c) / 3.0
    return (wa * a + wb * b + wc * c) / w


def repair_insert(sites: SiteSet, inverted: np.ndarray, embedded: EmbeddedMesh,
                  s: float, budget: int = None, repair_iters: int = DEFAULT_REPAIR_ITERS,
                  seed: int = 0):
    """Insert sites near inverted duals and re-optimize until clean.

    Returns (SiteSet, RepairLog, final RemeshResult pieces are left to the
    caller).  The loop is bounded: at most `budget` insertions, then the
    log is flagged as exhausted.
    """
    log_obj = RepairLog()
    if budget is None:
        budget = max(1, int(round(DEFAULT_BUDGET_FRACTION * len(sites))))
    log_obj.budget = budget
    if len(inverted) == 0:
        return sites, log_obj

    surface3 = SurfaceMesh(embedded.coords3, embedded.faces)
    ns = NearestSurface(surface3)
    inserted_total = 0
    current = sites
    rvd = compute_rvd(embedded, current)
    mesh, _ = extract_rdt(rvd, current)
    inv = detect_inverted(mesh, surface3)

    while len(inv) > 0:
        log_obj.rounds += 1
        n_insert = min(len(inv), budget - inserted_total)
        if n_insert <= 0:
            log_obj.exhausted = True
            log.warning("repair budget %d exhausted with %d inverted faces left", budget, len(inv))
            break
        # anchor each inverted dual's circumcenter back on the surface
        new_pos = []
        new_face = []
        new_bary = []
        for fid in inv[:n_insert]:
            i, j, k = mesh.faces[fid]
            cc = _circumcenter3(mesh.vertices[i], mesh.vertices[j], mesh.vertices[k])
            _, face, _, bary = ns.query(cc[None])
            face = int(face[0])
            bary = bary[0]
            tri8 = embedded.coords[embedded.faces[face]]
            new_pos.append(bary @ tri8)
            new_face.append(face)
            new_bary.append(bary)
        current = SiteSet(
            positions=np.vstack([current.positions, np.array(new_pos)]),
            anchor_face=np.concatenate([current.anchor_face, np.array(new_face, dtype=np.int64)]),
            anchor_bary=np.vstack([current.anchor_bary, np.array(new_bary)]),
        )
        inserted_total += n_insert
        log_obj.insertions.append((log_obj.rounds, int(len(inv)), int(n_insert)))
        current, _, _ = optimize(
            embedded, current, s=s, max_iters=repair_iters, grad_tol=1e-3
        )
        rvd = compute_rvd(embedded, current)
        mesh, _ = extract_rdt(rvd, current)
        inv = detect_inverted(mesh, surface3)
    return current, log_obj


def run_remesh(embedded: EmbeddedMesh, sites: SiteSet, s: float,
               max_iters: int, grad_tol: float = 1e-3,
               repair_budget: int = None, repair_iters: int = DEFAULT_REPAIR_ITERS):
    """Optimize, extract the dual, repair inversions; the full meshing tail."""
    opt_sites, trace, flags = optimize(
        embedded, sites, s=s, max_iters=max_iters, grad_tol=grad_tol
    )
    rvd = compute_rvd(embedded, opt_sites)
    mesh, site_map = extract_rdt(rvd, opt_sites)
    surface3 = SurfaceMesh(embedded.coords3, embedded.faces)
    inv = detect_inverted(mesh, surface3)
    repair = RepairLog()
    if len(inv):
        opt_sites, repair = repair_insert(
            opt_sites, inv, embedded, s=s, budget=repair_budget,
            repair_iters=repair_iters,
        )
        rvd = compute_rvd(embedded, opt_sites)
        mesh, site_map = extract_rdt(rvd, opt_sites)
        inv = detect_inverted(mesh, surface3)
    result = RemeshResult(
        mesh=mesh,
        site_of_vertex=site_map,
        sites=opt_sites,
        rvd=rvd,
        repair=repair,
        inverted_remaining=int(len(inv)),
    )
    return result, trace, flags


# -- dumps -------------------------------------------------------------------


def save_rvd_obj(rvd: RestrictedVoronoiDiagram, sites: SiteSet, path) -> None:
    """3D RVD facets as OBJ triangles grouped per cell."""
    bp = back_project(rvd, sites)
    order = np.argsort(rvd.fac_site, kind="stable")
    with open(path, "w") as fh:
        vid = 1
        current = -1
        for t in order:
            s = int(rvd.fac_site[t])
            if s != current:
                fh.write(f"g cell_{s}\n")
                current = s
            for k in range(3):
                p = bp.fac_pos3[t, k]
                fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
            fh.write(f"f {vid} {vid + 1} {vid + 2}\n")
            vid += 3


def save_rvd_text(rvd: RestrictedVoronoiDiagram, path) -> None:
    """Text dump: site id, corner positions, configuration tags per facet."""
    names = ["C1", "C2", "C3"]
    with open(path, "w") as fh:
        fh.write(f"rvd {rvd.n_facets}\n")
        for t in range(rvd.n_facets):
            tags = " ".join(names[int(c)] for c in rvd.fac_cfg[t])
            coords = " ".join(
                " ".join(f"{x:.17g}" for x in rvd.fac_pos[t, k]) for k in range(3)
            )
            fh.write(f"{int(rvd.fac_site[t])} {tags} {coords}\n")
