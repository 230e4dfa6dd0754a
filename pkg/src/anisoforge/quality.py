"""Quantitative evaluation: metric-aware triangle quality, surface accuracy
distances (CD / F1 / NC / HD), sharp-edge metrics (ECD / EF1), reporting.

Distance conventions: CD is the mean bidirectional point-to-nearest-surface
L2 distance, HD the max; reports scale CD by 1e5 and HD/ECD by 1e2 in the
CSV columns to match the usual presentation for [-1, 1] models.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .mesh import SurfaceMesh
from .metric import MetricField, metric_sqrt
from .proximity import NearestSurface

log = logging.getLogger("anisoforge.quality")

DEFAULT_SAMPLES = 100_000
DEFAULT_F1_TAU = 0.005
DEFAULT_DIHEDRAL_DEG = 30.0
DEFAULT_EDGE_SAMPLES = 4096

CSV_COLUMNS = [
    "Method", "V_in", "V_out", "Stretch", "CD", "F1", "NC", "HD",
    "ECD", "EF1", "T_em", "G_avg", "T_me",
]


@dataclass
class QualityReport:
    method: str = "nm-cvt"
    v_in: int = 0
    v_out: int = 0
    stretch: float = 1.0
    cd: float = 0.0  # raw model units
    f1: float = 0.0
    nc: float = 0.0
    hd: float = 0.0  # raw model units
    ecd: float = 0.0  # raw model units
    ef1: float = 0.0
    g_avg: float = 0.0
    g_min: float = 0.0
    t_embed: Optional[float] = None
    t_mesh: Optional[float] = None
    edge_flag: str = ""

    def csv_row(self):
        return [
            self.method, self.v_in, self.v_out, f"{self.stretch:.3f}",
            f"{self.cd * 1e5:.3f}", f"{self.f1:.3f}", f"{self.nc:.3f}",
            f"{self.hd * 1e2:.3f}", f"{self.ecd * 1e2:.3f}", f"{self.ef1:.3f}",
            "" if self.t_embed is None else f"{self.t_embed:.3f}",
            f"{self.g_avg:.3f}",
            "" if self.t_mesh is None else f"{self.t_mesh:.3f}",
        ]

    def to_dict(self):
        return asdict(self)


# -- triangle quality -----------------------------------------------------------


def triangle_quality(tri, Q) -> float:
    """Shape quality 2*sqrt(3)*S/(p*h) of the metric-transformed triangle."""
    tri = np.asarray(tri, dtype=np.float64).reshape(3, 3)
    Q = np.asarray(Q, dtype=np.float64)
    t = tri @ Q.T
    a = np.linalg.norm(t[0] - t[1])
    b = np.linalg.norm(t[1] - t[2])
    c = np.linalg.norm(t[2] - t[0])
    h = max(a, b, c)
    p = 0.5 * (a + b + c)
    S = 0.5 * np.linalg.norm(np.cross(t[1] - t[0], t[2] - t[0]))
    if p * h < 1e-300:
        return 0.0
    return float(2.0 * np.sqrt(3.0) * S / (p * h))


def _vertex_roots(field: MetricField) -> np.ndarray:
    return metric_sqrt(field.tensors)


def interpolate_roots(points, source: SurfaceMesh, field: MetricField) -> np.ndarray:
    """Q = sqrt(M) blended barycentrically at the closest source points."""
    roots = _vertex_roots(field)
    ns = NearestSurface(source)
    _, fids, _, bary = ns.query(points)
    corner = roots[source.faces[fids]]  # (Q, 3, 3, 3)
    return np.einsum("qk,qkij->qij", bary, corner)


def mesh_quality(mesh: SurfaceMesh, field: MetricField, source: SurfaceMesh):
    """(G_avg, G_min, histogram) of per-face quality under the metric."""
    Qv = interpolate_roots(mesh.vertices, source, field)
    qual = np.zeros(mesh.n_faces)
    for fidx in range(mesh.n_faces):
        i, j, k = mesh.faces[fidx]
        Q = (Qv[i] + Qv[j] + Qv[k]) / 3.0
        qual[fidx] = triangle_quality(mesh.vertices[[i, j, k]], Q)
    hist, edges = np.histogram(qual, bins=20, range=(0.0, 1.0))
    return float(qual.mean()), float(qual.min()), (hist, edges), qual


# -- sampling ---------------------------------------------------------------------


def sample_surface(mesh: SurfaceMesh, n: int, seed: int):
    """Area-weighted surface samples: (points, face ids), deterministic."""
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas
    total = areas.sum()
    if total <= 0 or mesh.n_faces == 0:
        raise ValueError("cannot sample an empty or degenerate mesh")
    fids = rng.choice(mesh.n_faces, size=n, p=areas / total)
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    tri = mesh.vertices[mesh.faces[fids]]
    pts = (
        tri[:, 0] * (1 - u - v)[:, None] + tri[:, 1] * u[:, None] + tri[:, 2] * v[:, None]
    )
    return pts, fids


def surface_distances(result: SurfaceMesh, reference: SurfaceMesh,
                      n_samples: int = DEFAULT_SAMPLES,
                      f1_tau: float = DEFAULT_F1_TAU, seed: int = 0):
    """(CD, F1, NC, HD): symmetric sampled point-to-surface metrics."""
    if n_samples < 10**4:
        raise ValueError("need at least 1e4 samples for stable distances")
    if result.n_faces == 0 or reference.n_faces == 0:
        raise ValueError("empty mesh")
    p_res, f_res = sample_surface(result, n_samples, seed)
    p_ref, f_ref = sample_surface(reference, n_samples, seed + 1)
    ns_res = NearestSurface(result)
    ns_ref = NearestSurface(reference)
    d_res, near_ref_face, _, _ = ns_ref.query(p_res)
    d_ref, near_res_face, _, _ = ns_res.query(p_ref)

    cd = 0.5 * (d_res.mean() + d_ref.mean())
    hd = max(d_res.max(), d_ref.max())
    precision = (d_res <= f1_tau).mean()
    recall = (d_ref <= f1_tau).mean()
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)

    n_res = result.face_normals[f_res]
    n_ref_matched = reference.face_normals[near_ref_face]
    n_ref = reference.face_normals[f_ref]
    n_res_matched = result.face_normals[near_res_face]
    nc = 0.5 * (
        np.abs((n_res * n_ref_matched).sum(axis=1)).mean()
        + np.abs((n_ref * n_res_matched).sum(axis=1)).mean()
    )
    return float(cd), float(f1), float(nc), float(hd)


# -- sharp-edge metrics --------------------------------------------------------------


def sharp_edges(mesh: SurfaceMesh, dihedral_deg: float = DEFAULT_DIHEDRAL_DEG) -> np.ndarray:
    """Interior edges whose adjacent faces bend more than the threshold."""
    if not 0 < dihedral_deg < 180:
        raise ValueError("dihedral threshold must be in (0, 180)")
    edges = mesh.edges
    ef = mesh.edge_faces
    interior = mesh.edge_face_count == 2
    n1 = mesh.face_normals[ef[interior, 0]]
    n2 = mesh.face_normals[ef[interior, 1]]
    cos = np.clip((n1 * n2).sum(axis=1), -1.0, 1.0)
    angle = np.degrees(np.arccos(cos))
    out = np.zeros(len(edges), dtype=bool)
    out[np.nonzero(interior)[0][angle > dihedral_deg]] = True
    return out


def sample_edges(mesh: SurfaceMesh, edge_mask: np.ndarray, n: int) -> np.ndarray:
    """Deterministic samples along the masked edges, count ~ length."""
    edges = mesh.edges[edge_mask]
    if len(edges) == 0:
        return np.zeros((0, 3))
    a = mesh.vertices[edges[:, 0]]
    b = mesh.vertices[edges[:, 1]]
    lengths = np.linalg.norm(b - a, axis=1)
    total = lengths.sum()
    out = []
    for i in range(len(edges)):
        m = max(1, int(round(n * lengths[i] / total)))
        t = (np.arange(m) + 0.5) / m
        out.append(a[i] + t[:, None] * (b[i] - a[i]))
    return np.vstack(out)


def edge_metrics(result: SurfaceMesh, reference: SurfaceMesh,
                 dihedral_deg: float = DEFAULT_DIHEDRAL_DEG,
                 n_samples: int = DEFAULT_EDGE_SAMPLES,
                 f1_tau: float = DEFAULT_F1_TAU):
    """(ECD, EF1, flag) between sharp-edge sample sets of the two meshes."""
    s_res = sample_edges(result, sharp_edges(result, dihedral_deg), n_samples)
    s_ref = sample_edges(reference, sharp_edges(reference, dihedral_deg), n_samples)
    if len(s_res) == 0 and len(s_ref) == 0:
        return 0.0, 1.0, ""
    if len(s_res) == 0 or len(s_ref) == 0:
        # one-sided: report worst case against the bounding diameter
        pts = np.vstack([reference.vertices, result.vertices])
        diam = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        log.warning("sharp edges found on only one mesh; edge metrics flagged")
        return diam, 0.0, "one-sided"
    t_res = cKDTree(s_res)
    t_ref = cKDTree(s_ref)
    d_res, _ = t_ref.query(s_res)
    d_ref, _ = t_res.query(s_ref)
    ecd = 0.5 * (d_res.mean() + d_ref.mean())
    precision = (d_res <= f1_tau).mean()
    recall = (d_ref <= f1_tau).mean()
    ef1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return float(ecd), float(ef1), ""


# -- reporting --------------------------------------------------------------------


def emit_report(report: QualityReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)


def load_report(path) -> QualityReport:
    with open(path) as fh:
        return QualityReport(**json.load(fh))


def emit_csv(reports, path) -> None:
    """Scaled CSV rows (CD x1e5, HD/ECD x1e2) in the standard column order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow(r.csv_row())
