"""Normal-metric CVT in the embedding space: energy, exact gradient, L-BFGS.

The energy integrates the squared normal-metric distance of a block metric
that scales displacement along the original 3D face normal by a factor s
while leaving the extra embedding channels untouched.  Gradients chain the
per-facet closed form through the clip-vertex provenance (C1 fixed, C2 on a
mesh edge, C3 in a face plane), so they are exact wherever the diagram's
combinatorics are stable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .embed import M_BAR, EmbeddedMesh
from .rvd import (
    ClipVertex,
    RestrictedVoronoiDiagram,
    SiteSet,
    compute_rvd,
    embedded_face_planes,
)

log = logging.getLogger("anisoforge.cvt")

DEFAULT_S = 7.0
DEFAULT_GRAD_TOL = 1e-3
DEFAULT_MAX_ITERS = 500
LBFGS_MEMORY = 7
LINE_SEARCH_TRIALS = 30


@dataclass
class NormalMetric:
    """Block metric: (s-1) N N^t + I on the 3D block, identity elsewhere."""

    matrix: np.ndarray  # (m_bar, m_bar)
    s: float
    normal3: np.ndarray

    def apply(self, y):
        y = np.asarray(y, dtype=np.float64)
        out = y.copy()
        nd = y[..., :3] @ self.normal3
        out[..., :3] += (self.s - 1.0) * nd[..., None] * self.normal3
        return out


def normal_metric(face_normal, s: float, m_bar: int = M_BAR) -> NormalMetric:
    n = np.asarray(face_normal, dtype=np.float64)
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError("face normal must be unit length")
    if s < 1.0:
        raise ValueError("normal emphasis s must be >= 1")
    M = np.eye(m_bar)
    M[:3, :3] += (s - 1.0) * np.outer(n, n)
    return NormalMetric(matrix=M, s=float(s), normal3=n)


# -- per-facet closed form -----------------------------------------------------


def facet_energy(corners, x0, metric: NormalMetric) -> float:
    """Exact integral of ||M (y - x0)||^2 over the facet triangle."""
    C = np.asarray(corners, dtype=np.float64).reshape(3, -1)
    x0 = np.asarray(x0, dtype=np.float64)
    U = metric.apply(C - x0)
    sum_uu = (U * U).sum()
    cross = U[0] @ U[1] + U[1] @ U[2] + U[0] @ U[2]
    F = (sum_uu + cross) / 6.0
    a = np.linalg.norm(C[0] - C[1])
    b = np.linalg.norm(C[1] - C[2])
    c = np.linalg.norm(C[2] - C[0])
    return float(_kernels._heron(a, b, c) * F)


def facet_gradient(corners, x0, metric: NormalMetric):
    """(dE/dx0, [dE/dC1, dE/dC2, dE/dC3]) of facet_energy."""
    C = np.asarray(corners, dtype=np.float64).reshape(3, -1)
    x0 = np.asarray(x0, dtype=np.float64)
    U = metric.apply(C - x0)
    sum_uu = (U * U).sum()
    cross = U[0] @ U[1] + U[1] @ U[2] + U[0] @ U[2]
    F = (sum_uu + cross) / 6.0
    a = np.linalg.norm(C[0] - C[1])
    b = np.linalg.norm(C[1] - C[2])
    c = np.linalg.norm(C[2] - C[0])
    area = float(_kernels._heron(a, b, c))
    dC = np.zeros_like(C)
    if area > 1e-14:
        # metric part: |T| M (dF/dU_i)
        for k in range(3):
            dFdU = (2.0 * U[k] + U[(k + 1) % 3] + U[(k + 2) % 3]) / 6.0
            dC[k] = area * metric.apply(dFdU)
        # Euclidean Heron area part: F * d|T|/dC_i
        dAda = a * (b * b + c * c - a * a) / (8.0 * area)
        dAdb = b * (c * c + a * a - b * b) / (8.0 * area)
        dAdc = c * (a * a + b * b - c * c) / (8.0 * area)
        e01 = (C[0] - C[1]) / a
        e12 = (C[1] - C[2]) / b
        e20 = (C[2] - C[0]) / c
        dC[0] += F * (dAda * e01 - dAdc * e20)
        dC[1] += F * (dAdb * e12 - dAda * e01)
        dC[2] += F * (dAdc * e20 - dAdb * e12)
    dx0 = -dC.sum(axis=0)
    return dx0, dC


def clip_vertex_jacobian(vertex: ClipVertex, sites: SiteSet, embedded: EmbeddedMesh):
    """Sparse derivative of one clip vertex w.r.t. the involved sites.

    Returns {site_id: (8, 8) dC/dsite} (empty for C1).  Raises if the
    provenance no longer reproduces the stored position (stale diagram).
    """
    pos = np.asarray(vertex.position, dtype=np.float64)
    verts8 = embedded.coords
    out = {}
    if vertex.config == "C1":
        replay = verts8[vertex.mesh_vertex]
        if np.abs(replay - pos).max() > 1e-8:
            raise ValueError("provenance replay failed (stale RVD)")
        return out
    if vertex.config == "C2":
        s, j = vertex.bisectors
        va, vb = vertex.edge
        A, B = verts8[va], verts8[vb]
        x0, x1 = sites.positions[s], sites.positions[j]
        n = x1 - x0
        hA = n @ (A - 0.5 * (x0 + x1))
        hB = n @ (B - 0.5 * (x0 + x1))
        t = hA / (hA - hB)
        replay = A + t * (B - A)
        if np.abs(replay - pos).max() > 1e-8:
            raise ValueError("provenance replay failed (stale RVD)")
        u = B - A
        nu = n @ u
        out[s] = np.outer(u, replay - x0) / nu
        out[j] = np.outer(u, x1 - replay) / nu
        return out
    # C3: two clipping passes, x0 parts summed
    (s, j), (_, k) = vertex.bisectors
    f = vertex.face
    plane_o, plane_u, plane_v = embedded_face_planes(embedded)
    o, u, v = plane_o[f], plane_u[f], plane_v[f]
    x0 = sites.positions[s]
    xj = sites.positions[j]
    xk = sites.positions[k]
    replay = np.empty(M_BAR)
    ok = _kernels._c3_solve(o, u, v, x0, xj, xk, replay)
    if not ok or np.abs(replay - pos).max() > 1e-8:
        raise ValueError("provenance replay failed (stale RVD)")
    nj = xj - x0
    nk = xk - x0
    dirj = -(nj @ v) * u + (nj @ u) * v  # in-plane direction of bisector-j line
    dirk = -(nk @ v) * u + (nk @ u) * v
    out[s] = np.zeros((M_BAR, M_BAR))
    # pass 1: bisector (s, j) moves, the point slides along the b_k line
    njdk = nj @ dirk
    if abs(njdk) > 1e-300:
        out[s] += np.outer(dirk, replay - x0) / njdk
        out[j] = np.outer(dirk, xj - replay) / njdk
    # pass 2: bisector (s, k) moves, the point slides along the b_j line
    nkdj = nk @ dirj
    if abs(nkdj) > 1e-300:
        out[s] += np.outer(dirj, replay - x0) / nkdj
        out[k] = np.outer(dirj, xk - replay) / nkdj
    return out


# -- assembled energy and gradient ------------------------------------------------


@dataclass
class EnergyReport:
    energy: float
    gradient: np.ndarray  # (N, 8)
    masses: np.ndarray  # (N,)
    rvd: RestrictedVoronoiDiagram
    meta: dict = field(default_factory=dict)


def _face_normals3(embedded: EmbeddedMesh) -> np.ndarray:
    v = embedded.coords3
    f = embedded.faces
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norm = np.linalg.norm(n, axis=1)
    good = norm > 0
    n[good] /= norm[good, None]
    n[~good] = 0.0
    return np.ascontiguousarray(n)


def total_energy_grad(embedded: EmbeddedMesh, sites: SiteSet, s: float = DEFAULT_S,
                      want_grad: bool = True) -> EnergyReport:
    """Fresh RVD at the current sites, closed-form energy, exact gradient."""
    rvd = compute_rvd(embedded, sites)
    fn3 = _face_normals3(embedded)
    n = len(sites)
    grad = np.zeros((n, M_BAR))
    masses = np.zeros(n)
    E = _kernels.energy_grad(
        rvd.n_facets, rvd.fac_site, rvd.fac_face, rvd.fac_pos, rvd.fac_cfg,
        rvd.fac_prov, np.ascontiguousarray(embedded.coords),
        np.ascontiguousarray(sites.positions), fn3,
        rvd.plane_o, rvd.plane_u, rvd.plane_v, float(s), grad, masses, want_grad,
    )
    if not np.isfinite(E) or not np.isfinite(grad).all():
        raise FloatingPointError("non-finite CVT energy or gradient")
    return EnergyReport(energy=float(E), gradient=grad, masses=masses, rvd=rvd)


def frozen_energy(rvd: RestrictedVoronoiDiagram, site_positions: np.ndarray,
                  s: float) -> float:
    """Energy with the diagram's combinatorics frozen: every corner replayed
    from provenance at the given site positions.  The finite-difference
    oracle for the analytic gradient."""
    fn3 = _face_normals3(rvd.embedded)
    return float(
        _kernels.replay_energy(
            rvd.n_facets, rvd.fac_site, rvd.fac_face, rvd.fac_cfg, rvd.fac_prov,
            np.ascontiguousarray(rvd.embedded.coords),
            np.ascontiguousarray(site_positions), fn3,
            rvd.plane_o, rvd.plane_u, rvd.plane_v, float(s),
        )
    )


def quadrature_energy(rvd: RestrictedVoronoiDiagram, site_positions: np.ndarray,
                      s: float = 1.0) -> float:
    """Independent facet-energy evaluator: degree-2 edge-midpoint quadrature,
    exact for the quadratic integrand.  Cross-checks the closed form."""
    p = rvd.fac_pos
    x0 = site_positions[rvd.fac_site]
    fn3 = _face_normals3(rvd.embedded)[rvd.fac_face]
    mids = np.stack(
        [0.5 * (p[:, 0] + p[:, 1]), 0.5 * (p[:, 1] + p[:, 2]), 0.5 * (p[:, 2] + p[:, 0])],
        axis=1,
    )
    d = mids - x0[:, None, :]
    nd = np.einsum("mkc,mc->mk", d[:, :, :3], fn3)
    d3 = d[:, :, :3] + (s - 1.0) * nd[:, :, None] * fn3[:, None, :]
    val = (d3**2).sum(axis=2) + (d[:, :, 3:] ** 2).sum(axis=2)
    areas = rvd.facet_areas()
    return float((areas * val.mean(axis=1)).sum())


# -- optimizer ------------------------------------------------------------------


def _project_anchors(rvd: RestrictedVoronoiDiagram, sites: SiteSet) -> SiteSet:
    """Re-anchor each site to the closest point of its own cell facets."""
    n = len(sites)
    best_d2 = np.full(n, np.inf)
    anchor_face = sites.anchor_face.copy()
    anchor_q = np.zeros((n, M_BAR))
    _kernels.project_sites_to_cells(
        rvd.n_facets, rvd.fac_site, rvd.fac_face, rvd.fac_pos,
        np.ascontiguousarray(sites.positions),
        rvd.plane_o, rvd.plane_u, rvd.plane_v,
        best_d2, anchor_face, anchor_q,
    )
    bary = sites.anchor_bary.copy()
    found = np.isfinite(best_d2)
    if found.any():
        emb = rvd.embedded
        f = anchor_face[found]
        o = rvd.plane_o[f]
        u = rvd.plane_u[f]
        v = rvd.plane_v[f]
        tri = emb.coords[emb.faces[f]]  # (m, 3, 8)
        q = anchor_q[found]
        # barycentric from the 2D plane coordinates
        a2 = np.einsum("mc,mc->m", tri[:, 0] - o, u), np.einsum("mc,mc->m", tri[:, 0] - o, v)
        b2 = np.einsum("mc,mc->m", tri[:, 1] - o, u), np.einsum("mc,mc->m", tri[:, 1] - o, v)
        c2 = np.einsum("mc,mc->m", tri[:, 2] - o, u), np.einsum("mc,mc->m", tri[:, 2] - o, v)
        q2 = np.einsum("mc,mc->m", q - o, u), np.einsum("mc,mc->m", q - o, v)
        det = (b2[0] - a2[0]) * (c2[1] - a2[1]) - (c2[0] - a2[0]) * (b2[1] - a2[1])
        det = np.where(np.abs(det) < 1e-300, 1.0, det)
        wb = ((q2[0] - a2[0]) * (c2[1] - a2[1]) - (c2[0] - a2[0]) * (q2[1] - a2[1])) / det
        wc = ((b2[0] - a2[0]) * (q2[1] - a2[1]) - (q2[0] - a2[0]) * (b2[1] - a2[1])) / det
        wa = 1.0 - wb - wc
        b = np.stack([wa, wb, wc], axis=1)
        b = np.clip(b, 0.0, None)
        b /= b.sum(axis=1, keepdims=True)
        bary[found] = b
    return SiteSet(positions=sites.positions, anchor_face=anchor_face, anchor_bary=bary)


def optimize(embedded: EmbeddedMesh, sites0: SiteSet, s: float = DEFAULT_S,
             max_iters: int = DEFAULT_MAX_ITERS, grad_tol: float = DEFAULT_GRAD_TOL,
             memory: int = LBFGS_MEMORY, callback=None):
    """Limited-memory quasi-Newton descent of the normal-metric CVT energy.

    Returns (SiteSet, trace, flags): trace rows are dicts with the accepted
    iterate's energy, gradient norm and step length; flags report line-search
    failure and convergence.  Accepted energies are non-increasing by
    construction (Armijo), and anchors are refreshed after every accepted
    step so back-projection stays valid.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    n = len(sites0)
    shape = (n, M_BAR)
    anchors = [sites0.anchor_face.copy(), sites0.anchor_bary.copy()]
    last_rvd = [None]

    def make_sites(x):
        return SiteSet(
            positions=x.reshape(shape).copy(),
            anchor_face=anchors[0],
            anchor_bary=anchors[1],
        )

    def fg(x):
        rep = total_energy_grad(embedded, make_sites(x), s)
        last_rvd[0] = rep.rvd
        return rep.energy, rep.gradient.reshape(-1)

    x = sites0.positions.reshape(-1).copy()
    f, g = fg(x)
    g0norm = np.linalg.norm(g)
    gnorm = g0norm
    # absolute floor so starting at a critical point counts as converged
    gtol = max(grad_tol * g0norm, 1e-12 * (1.0 + abs(f)))
    trace = [{"iter": 0, "energy": f, "grad_norm": gnorm, "step": 0.0}]
    flags = {"converged": gnorm <= gtol, "line_search_failed": False}
    S, Y, RHO = [], [], []

    it = 0
    while it < max_iters and not flags["converged"]:
        it += 1
        d = _two_loop(g, S, Y, RHO)
        dg = d @ g
        if not np.isfinite(dg) or dg >= 0.0:
            S.clear()
            Y.clear()
            RHO.clear()
            d = -g
            dg = d @ g
        alpha, f_new, g_new, ok = _wolfe_search(fg, x, f, g, d, dg)
        if not ok:
            flags["line_search_failed"] = True
            log.warning("line search failed after %d trials at iter %d", LINE_SEARCH_TRIALS, it)
            break
        x_new = x + alpha * d
        s_vec = x_new - x
        y_vec = g_new - g
        sy = s_vec @ y_vec
        if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            S.append(s_vec)
            Y.append(y_vec)
            RHO.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
                RHO.pop(0)
        x, f, g = x_new, f_new, g_new
        gnorm = np.linalg.norm(g)
        # refresh anchors from the accepted step's own diagram
        proj = _project_anchors(last_rvd[0], make_sites(x))
        anchors[0] = proj.anchor_face
        anchors[1] = proj.anchor_bary
        trace.append({"iter": it, "energy": f, "grad_norm": gnorm, "step": float(alpha)})
        if callback is not None:
            callback(it, f, gnorm)
        if gnorm <= gtol:
            flags["converged"] = True
    return make_sites(x), trace, flags


def _two_loop(g, S, Y, RHO):
    q = -g.copy()
    if not S:
        return q
    alphas = []
    for s_vec, y_vec, rho in zip(reversed(S), reversed(Y), reversed(RHO)):
        a = rho * (s_vec @ q)
        alphas.append(a)
        q -= a * y_vec
    gamma = (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
    q *= gamma
    for (s_vec, y_vec, rho), a in zip(zip(S, Y, RHO), reversed(alphas)):
        b = rho * (y_vec @ q)
        q += (a - b) * s_vec
    return q


def _wolfe_search(fg, x, f0, g0, d, dg0, c1=1e-4, c2=0.9):
    """Weak Wolfe bisection (Lewis-Overton), robust to the energy's kinks."""
    lo, hi = 0.0, np.inf
    alpha = 1.0
    best = None
    for _ in range(LINE_SEARCH_TRIALS):
        f_a, g_a = fg(x + alpha * d)
        if f_a > f0 + c1 * alpha * dg0 or not np.isfinite(f_a):
            hi = alpha
            alpha = 0.5 * (lo + hi)
            continue
        if best is None or f_a < best[1]:
            best = (alpha, f_a)
        if g_a @ d < c2 * dg0:
            lo = alpha
            alpha = 2.0 * alpha if np.isinf(hi) else 0.5 * (lo + hi)
            continue
        return alpha, f_a, g_a, True
    if best is not None:
        # Armijo held somewhere: accept the best decrease seen (re-evaluate
        # so downstream state matches the accepted point)
        f_b, g_b = fg(x + best[0] * d)
        return best[0], f_b, g_b, True
    return 0.0, f0, g0, False
