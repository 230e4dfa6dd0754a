"""Numba kernels: re-entrant cell clipping, facet energies, gradients.

All hot loops of the high-d CVT live here.  Everything is serial with a
fixed iteration order so energies, gradients and traces are reproducible
bit for bit.

Corner configuration encoding (cfg):
    0 (C1)  original embedded-surface vertex; prov = (vertex id, -1, -1)
    1 (C2)  mesh edge x bisector;             prov = (va, vb, other site)
    2 (C3)  face plane x two bisectors;       prov = (site j, site k, -1),
            j the earlier clip, k the later one.

A C2 position replays as the intersection of the full mesh edge [A, B]
with the bisector; a C3 position replays as the in-plane 2x2 solve of the
two bisector constraints in the face's orthonormal plane basis.  Replay is
what the gradient rules differentiate, so stored and replayed positions
must agree (checked by tests).
"""

import numpy as np
from numba import njit

MBAR = 8
MAXV = 64  # polygon buffer; a convex cell section never gets close

CFG_C1 = 0
CFG_C2 = 1
CFG_C3 = 2

SUP_EDGE = 0
SUP_BIS = 1


@njit(cache=True)
def _dot8(a, b):
    acc = 0.0
    for c in range(MBAR):
        acc += a[c] * b[c]
    return acc


@njit(cache=True)
def _bisector_h(y, s0, s1):
    """Signed bisector offset: negative on the s0 side."""
    acc = 0.0
    for c in range(MBAR):
        acc += (s1[c] - s0[c]) * (y[c] - 0.5 * (s0[c] + s1[c]))
    return acc


@njit(cache=True)
def _heron(a, b, c):
    """Numerically stable Heron area from edge lengths (Kahan ordering)."""
    # sort descending: a >= b >= c
    if a < b:
        a, b = b, a
    if b < c:
        b, c = c, b
    if a < b:
        a, b = b, a
    t = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    if t <= 0.0:
        return 0.0
    return 0.25 * np.sqrt(t)


@njit(cache=True)
def _tri_area8(p0, p1, p2):
    a = 0.0
    b = 0.0
    c = 0.0
    for k in range(MBAR):
        d01 = p1[k] - p0[k]
        d12 = p2[k] - p1[k]
        d20 = p0[k] - p2[k]
        a += d01 * d01
        b += d12 * d12
        c += d20 * d20
    return _heron(np.sqrt(a), np.sqrt(b), np.sqrt(c))


@njit(cache=True)
def _c3_solve(o, u, v, s0, sj, sk, out):
    """In-plane intersection of two bisectors; returns False if singular."""
    nju = 0.0
    njv = 0.0
    nku = 0.0
    nkv = 0.0
    rj = 0.0
    rk = 0.0
    for c in range(MBAR):
        nj = sj[c] - s0[c]
        nk = sk[c] - s0[c]
        nju += nj * u[c]
        njv += nj * v[c]
        nku += nk * u[c]
        nkv += nk * v[c]
        rj += nj * (0.5 * (s0[c] + sj[c]) - o[c])
        rk += nk * (0.5 * (s0[c] + sk[c]) - o[c])
    det = nju * nkv - njv * nku
    if abs(det) < 1e-300:
        return False
    alpha = (rj * nkv - rk * njv) / det
    beta = (nju * rk - nku * rj) / det
    for c in range(MBAR):
        out[c] = o[c] + alpha * u[c] + beta * v[c]
    return True


@njit(cache=True)
def _replay_positions(n_fac, fac_site, fac_face, fac_cfg, fac_prov,
                      verts8, sites, plane_o, plane_u, plane_v, out_pos):
    """Recompute all facet corner positions from provenance; returns failures."""
    bad = 0
    for t in range(n_fac):
        s = fac_site[t]
        f = fac_face[t]
        for k in range(3):
            cfg = fac_cfg[t, k]
            if cfg == CFG_C1:
                vid = fac_prov[t, k, 0]
                for c in range(MBAR):
                    out_pos[t, k, c] = verts8[vid, c]
            elif cfg == CFG_C2:
                va = fac_prov[t, k, 0]
                vb = fac_prov[t, k, 1]
                j = fac_prov[t, k, 2]
                hA = _bisector_h(verts8[va], sites[s], sites[j])
                hB = _bisector_h(verts8[vb], sites[s], sites[j])
                denom = hA - hB
                if denom == 0.0:
                    bad += 1
                    continue
                tt = hA / denom
                for c in range(MBAR):
                    out_pos[t, k, c] = verts8[va, c] + tt * (verts8[vb, c] - verts8[va, c])
            else:
                j = fac_prov[t, k, 0]
                kk = fac_prov[t, k, 1]
                ok = _c3_solve(
                    plane_o[f], plane_u[f], plane_v[f],
                    sites[s], sites[j], sites[kk], out_pos[t, k],
                )
                if not ok:
                    bad += 1
    return bad


@njit(cache=True)
def _clip_cell(verts8, faces, sites, f, s, nbr_idx, nbr_dist, nbr_complete,
               plane_o, plane_u, plane_v,
               pos, cfg, pr1, pr2, pr3, lam1, lam2, sup_k, sup_a, sup_b,
               npos, ncfg, npr1, npr2, npr3, nlam1, nlam2, nsup_k, nsup_a, nsup_b,
               hbuf):
    """Clip face f against all bisectors of site s.

    Returns (n, status): n vertices left in the `pos...` buffers (the final
    polygon always ends in the first buffer set), status 0 ok, 1 ran out of
    neighbor candidates before the security radius was reached.
    """
    va = faces[f, 0]
    vb = faces[f, 1]
    vc = faces[f, 2]
    n = 3
    for c in range(MBAR):
        pos[0, c] = verts8[va, c]
        pos[1, c] = verts8[vb, c]
        pos[2, c] = verts8[vc, c]
    for m in range(3):
        cfg[m] = CFG_C1
        pr1[m] = faces[f, m]
        pr2[m] = -1
        pr3[m] = -1
        lam1[m] = 0.0
        lam2[m] = 0.0
        sup_k[m] = SUP_EDGE
    sup_a[0] = va
    sup_b[0] = vb
    sup_a[1] = vb
    sup_b[1] = vc
    sup_a[2] = vc
    sup_b[2] = va

    r2max = 0.0
    for m in range(3):
        d2 = 0.0
        for c in range(MBAR):
            dd = pos[m, c] - sites[s, c]
            d2 += dd * dd
        if d2 > r2max:
            r2max = d2

    K = nbr_idx.shape[1]
    # with the complete site list, falling off the end is also secure
    secured = K == 0 or nbr_complete
    for kk in range(K):
        j = nbr_idx[s, kk]
        if j < 0:
            secured = True
            break
        dj = nbr_dist[s, kk]
        if dj * dj >= 4.0 * r2max:
            secured = True
            break
        # --- one Sutherland-Hodgman pass against bisector (s, j) ---
        for m in range(n):
            hbuf[m] = _bisector_h(pos[m], sites[s], sites[j])
        nn = 0
        for m in range(n):
            m2 = m + 1
            if m2 == n:
                m2 = 0
            hP = hbuf[m]
            hQ = hbuf[m2]
            if hP <= 0.0:
                # keep P
                for c in range(MBAR):
                    npos[nn, c] = pos[m, c]
                ncfg[nn] = cfg[m]
                npr1[nn] = pr1[m]
                npr2[nn] = pr2[m]
                npr3[nn] = pr3[m]
                nlam1[nn] = lam1[m]
                nlam2[nn] = lam2[m]
                if hQ <= 0.0 or hP < 0.0:
                    nsup_k[nn] = sup_k[m]
                    nsup_a[nn] = sup_a[m]
                    nsup_b[nn] = sup_b[m]
                else:
                    nsup_k[nn] = SUP_BIS
                    nsup_a[nn] = j
                    nsup_b[nn] = -1
                nn += 1
            if (hP < 0.0 and hQ > 0.0) or (hP > 0.0 and hQ < 0.0):
                # crossing: emit the intersection vertex
                if sup_k[m] == SUP_EDGE:
                    ea = sup_a[m]
                    eb = sup_b[m]
                    hA = _bisector_h(verts8[ea], sites[s], sites[j])
                    hB = _bisector_h(verts8[eb], sites[s], sites[j])
                    tt = hA / (hA - hB)
                    if tt < 0.0:
                        tt = 0.0
                    elif tt > 1.0:
                        tt = 1.0
                    for c in range(MBAR):
                        npos[nn, c] = verts8[ea, c] + tt * (verts8[eb, c] - verts8[ea, c])
                    ncfg[nn] = CFG_C2
                    npr1[nn] = ea
                    npr2[nn] = eb
                    npr3[nn] = j
                    nlam1[nn] = 1.0 - tt
                    nlam2[nn] = tt
                else:
                    jprev = sup_a[m]
                    ok = _c3_solve(
                        plane_o[f], plane_u[f], plane_v[f],
                        sites[s], sites[jprev], sites[j], npos[nn],
                    )
                    if not ok:
                        # nearly parallel in-plane bisectors: fall back to
                        # the segment parameterization
                        tt = hP / (hP - hQ)
                        for c in range(MBAR):
                            npos[nn, c] = pos[m, c] + tt * (pos[m2, c] - pos[m, c])
                    ncfg[nn] = CFG_C3
                    npr1[nn] = jprev
                    npr2[nn] = j
                    npr3[nn] = -1
                    nlam1[nn] = 0.0
                    nlam2[nn] = 0.0
                if hP < 0.0:
                    # exiting: next stretch runs along the new bisector
                    nsup_k[nn] = SUP_BIS
                    nsup_a[nn] = j
                    nsup_b[nn] = -1
                else:
                    # entering: continue along the old support
                    nsup_k[nn] = sup_k[m]
                    nsup_a[nn] = sup_a[m]
                    nsup_b[nn] = sup_b[m]
                nn += 1
        if nn < 3:
            return 0, 0
        # copy back into the primary buffers
        for m in range(nn):
            for c in range(MBAR):
                pos[m, c] = npos[m, c]
            cfg[m] = ncfg[m]
            pr1[m] = npr1[m]
            pr2[m] = npr2[m]
            pr3[m] = npr3[m]
            lam1[m] = nlam1[m]
            lam2[m] = nlam2[m]
            sup_k[m] = nsup_k[m]
            sup_a[m] = nsup_a[m]
            sup_b[m] = nsup_b[m]
        n = nn
        r2max = 0.0
        for m in range(n):
            d2 = 0.0
            for c in range(MBAR):
                dd = pos[m, c] - sites[s, c]
                d2 += dd * dd
            if d2 > r2max:
                r2max = d2
    if not secured:
        return n, 1
    return n, 0


@njit(cache=True)
def build_rvd(verts8, faces, sites, pair_face, pair_site, nbr_idx, nbr_dist, nbr_complete,
              plane_o, plane_u, plane_v, drop_area,
              fac_site, fac_face, fac_pos, fac_cfg, fac_prov, fac_lam):
    """Clip every candidate (face, site) pair; emit fan-triangulated facets.

    Returns (n_facets, overflow, unresolved).
    """
    cap = fac_site.shape[0]
    nfac = 0
    unresolved = 0

    pos = np.empty((MAXV, MBAR))
    cfg = np.empty(MAXV, np.int64)
    pr1 = np.empty(MAXV, np.int64)
    pr2 = np.empty(MAXV, np.int64)
    pr3 = np.empty(MAXV, np.int64)
    lam1 = np.empty(MAXV)
    lam2 = np.empty(MAXV)
    sup_k = np.empty(MAXV, np.int64)
    sup_a = np.empty(MAXV, np.int64)
    sup_b = np.empty(MAXV, np.int64)
    npos = np.empty((MAXV, MBAR))
    ncfg = np.empty(MAXV, np.int64)
    npr1 = np.empty(MAXV, np.int64)
    npr2 = np.empty(MAXV, np.int64)
    npr3 = np.empty(MAXV, np.int64)
    nlam1 = np.empty(MAXV)
    nlam2 = np.empty(MAXV)
    nsup_k = np.empty(MAXV, np.int64)
    nsup_a = np.empty(MAXV, np.int64)
    nsup_b = np.empty(MAXV, np.int64)
    hbuf = np.empty(MAXV)

    for p in range(len(pair_face)):
        f = pair_face[p]
        s = pair_site[p]
        n, status = _clip_cell(
            verts8, faces, sites, f, s, nbr_idx, nbr_dist, nbr_complete,
            plane_o, plane_u, plane_v,
            pos, cfg, pr1, pr2, pr3, lam1, lam2, sup_k, sup_a, sup_b,
            npos, ncfg, npr1, npr2, npr3, nlam1, nlam2, nsup_k, nsup_a, nsup_b,
            hbuf,
        )
        if status == 1:
            unresolved += 1
            continue
        if n < 3:
            continue
        for m in range(1, n - 1):
            area = _tri_area8(pos[0], pos[m], pos[m + 1])
            if area < drop_area:
                continue
            if nfac >= cap:
                return nfac, 1, unresolved
            fac_site[nfac] = s
            fac_face[nfac] = f
            idx0 = 0
            idx1 = m
            idx2 = m + 1
            kk = 0
            for idx in (idx0, idx1, idx2):
                for c in range(MBAR):
                    fac_pos[nfac, kk, c] = pos[idx, c]
                fac_cfg[nfac, kk] = cfg[idx]
                fac_prov[nfac, kk, 0] = pr1[idx]
                fac_prov[nfac, kk, 1] = pr2[idx]
                fac_prov[nfac, kk, 2] = pr3[idx]
                fac_lam[nfac, kk, 0] = lam1[idx]
                fac_lam[nfac, kk, 1] = lam2[idx]
                kk += 1
            nfac += 1
    return nfac, 0, unresolved


@njit(cache=True)
def _mbar_apply(y, normal3, s_factor, out):
    """out = M_bar y for the block normal metric of one face."""
    ndot = y[0] * normal3[0] + y[1] * normal3[1] + y[2] * normal3[2]
    scale = (s_factor - 1.0) * ndot
    out[0] = y[0] + scale * normal3[0]
    out[1] = y[1] + scale * normal3[1]
    out[2] = y[2] + scale * normal3[2]
    for c in range(3, MBAR):
        out[c] = y[c]


@njit(cache=True)
def energy_grad(n_fac, fac_site, fac_face, fac_pos, fac_cfg, fac_prov,
                verts8, sites, fnormals3, plane_o, plane_u, plane_v,
                s_factor, grad, masses, want_grad):
    """Total energy; optionally accumulate the site gradient in-place.

    grad is (N, 8) zeroed by the caller; masses likewise (N,).
    """
    E = 0.0
    U = np.empty((3, MBAR))
    y = np.empty(MBAR)
    dEdC = np.empty((3, MBAR))
    tmp = np.empty(MBAR)
    dirj = np.empty(MBAR)
    dirk = np.empty(MBAR)
    for t in range(n_fac):
        s = fac_site[t]
        f = fac_face[t]
        x0 = sites[s]
        nrm = fnormals3[f]
        for k in range(3):
            for c in range(MBAR):
                y[c] = fac_pos[t, k, c] - x0[c]
            _mbar_apply(y, nrm, s_factor, U[k])
        # closed-form second moment: |T|/6 * (sum_i U_i.U_i + sum_{i<j} U_i.U_j)
        sumUU = 0.0
        for k in range(3):
            sumUU += _dot8(U[k], U[k])
        cross = _dot8(U[0], U[1]) + _dot8(U[1], U[2]) + _dot8(U[0], U[2])
        F = (sumUU + cross) / 6.0
        a = 0.0
        b = 0.0
        c2 = 0.0
        for c in range(MBAR):
            d01 = fac_pos[t, 0, c] - fac_pos[t, 1, c]
            d12 = fac_pos[t, 1, c] - fac_pos[t, 2, c]
            d20 = fac_pos[t, 2, c] - fac_pos[t, 0, c]
            a += d01 * d01
            b += d12 * d12
            c2 += d20 * d20
        a = np.sqrt(a)
        b = np.sqrt(b)
        cc = np.sqrt(c2)
        area = _heron(a, b, cc)
        E += area * F
        masses[s] += area
        if not want_grad or area <= 1e-14:
            # degenerate facets contribute zero gradient
            continue
        # dF/dU_i = (2 U_i + U_j + U_k) / 6, mapped back through M_bar
        for k in range(3):
            for c in range(MBAR):
                tmp[c] = (2.0 * U[k][c] + U[(k + 1) % 3][c] + U[(k + 2) % 3][c]) / 6.0
            _mbar_apply(tmp, nrm, s_factor, dEdC[k])
            for c in range(MBAR):
                dEdC[k][c] *= area
        # Euclidean Heron area gradient: dA/da = a (b^2 + c^2 - a^2) / (8 A)
        dAda = a * (b * b + cc * cc - a * a) / (8.0 * area)
        dAdb = b * (cc * cc + a * a - b * b) / (8.0 * area)
        dAdc = cc * (a * a + b * b - cc * cc) / (8.0 * area)
        for c in range(MBAR):
            e01 = fac_pos[t, 0, c] - fac_pos[t, 1, c]
            e12 = fac_pos[t, 1, c] - fac_pos[t, 2, c]
            e20 = fac_pos[t, 2, c] - fac_pos[t, 0, c]
            g01 = dAda * e01 / a
            g12 = dAdb * e12 / b
            g20 = dAdc * e20 / cc
            dEdC[0][c] += F * (g01 - g20)
            dEdC[1][c] += F * (g12 - g01)
            dEdC[2][c] += F * (g20 - g12)
        # site derivative by the negation identity
        for c in range(MBAR):
            grad[s, c] -= dEdC[0][c] + dEdC[1][c] + dEdC[2][c]
        # chain through the clip-vertex configurations
        for k in range(3):
            cfgk = fac_cfg[t, k]
            if cfgk == CFG_C1:
                continue
            w = dEdC[k]
            if cfgk == CFG_C2:
                ea = fac_prov[t, k, 0]
                eb = fac_prov[t, k, 1]
                j = fac_prov[t, k, 2]
                nu = 0.0
                su = 0.0
                for c in range(MBAR):
                    uc = verts8[eb, c] - verts8[ea, c]
                    nu += (sites[j, c] - sites[s, c]) * uc
                    su += w[c] * uc
                if abs(nu) < 1e-300:
                    continue
                coef = su / nu
                for c in range(MBAR):
                    grad[s, c] += coef * (fac_pos[t, k, c] - sites[s, c])
                    grad[j, c] += coef * (sites[j, c] - fac_pos[t, k, c])
            else:
                j = fac_prov[t, k, 0]
                kk = fac_prov[t, k, 1]
                # in-plane directions of the two bisector cut lines
                nju = 0.0
                njv = 0.0
                nku = 0.0
                nkv = 0.0
                for c in range(MBAR):
                    nju += (sites[j, c] - sites[s, c]) * plane_u[f, c]
                    njv += (sites[j, c] - sites[s, c]) * plane_v[f, c]
                    nku += (sites[kk, c] - sites[s, c]) * plane_u[f, c]
                    nkv += (sites[kk, c] - sites[s, c]) * plane_v[f, c]
                for c in range(MBAR):
                    dirj[c] = -njv * plane_u[f, c] + nju * plane_v[f, c]
                    dirk[c] = -nkv * plane_u[f, c] + nku * plane_v[f, c]
                # pass 1: bisector (s, j) moves, point slides along dirk
                njdk = 0.0
                wdk = 0.0
                nkdj = 0.0
                wdj = 0.0
                for c in range(MBAR):
                    njdk += (sites[j, c] - sites[s, c]) * dirk[c]
                    wdk += w[c] * dirk[c]
                    nkdj += (sites[kk, c] - sites[s, c]) * dirj[c]
                    wdj += w[c] * dirj[c]
                if abs(njdk) > 1e-300:
                    coef = wdk / njdk
                    for c in range(MBAR):
                        grad[s, c] += coef * (fac_pos[t, k, c] - sites[s, c])
                        grad[j, c] += coef * (sites[j, c] - fac_pos[t, k, c])
                # pass 2: bisector (s, kk) moves, point slides along dirj
                if abs(nkdj) > 1e-300:
                    coef = wdj / nkdj
                    for c in range(MBAR):
                        grad[s, c] += coef * (fac_pos[t, k, c] - sites[s, c])
                        grad[kk, c] += coef * (sites[kk, c] - fac_pos[t, k, c])
    return E


@njit(cache=True)
def replay_energy(n_fac, fac_site, fac_face, fac_cfg, fac_prov,
                  verts8, sites, fnormals3, plane_o, plane_u, plane_v, s_factor):
    """Energy with frozen combinatorics: corner positions replayed from
    provenance at the *current* sites.  Used by finite-difference oracles."""
    E = 0.0
    P = np.empty((3, MBAR))
    U = np.empty((3, MBAR))
    y = np.empty(MBAR)
    for t in range(n_fac):
        s = fac_site[t]
        f = fac_face[t]
        for k in range(3):
            cfgk = fac_cfg[t, k]
            if cfgk == CFG_C1:
                vid = fac_prov[t, k, 0]
                for c in range(MBAR):
                    P[k, c] = verts8[vid, c]
            elif cfgk == CFG_C2:
                va = fac_prov[t, k, 0]
                vb = fac_prov[t, k, 1]
                j = fac_prov[t, k, 2]
                hA = _bisector_h(verts8[va], sites[s], sites[j])
                hB = _bisector_h(verts8[vb], sites[s], sites[j])
                tt = hA / (hA - hB)
                for c in range(MBAR):
                    P[k, c] = verts8[va, c] + tt * (verts8[vb, c] - verts8[va, c])
            else:
                j = fac_prov[t, k, 0]
                kk = fac_prov[t, k, 1]
                _c3_solve(
                    plane_o[f], plane_u[f], plane_v[f],
                    sites[s], sites[j], sites[kk], P[k],
                )
        nrm = fnormals3[f]
        for k in range(3):
            for c in range(MBAR):
                y[c] = P[k, c] - sites[s, c]
            _mbar_apply(y, nrm, s_factor, U[k])
        sumUU = 0.0
        for k in range(3):
            sumUU += _dot8(U[k], U[k])
        cross = _dot8(U[0], U[1]) + _dot8(U[1], U[2]) + _dot8(U[0], U[2])
        F = (sumUU + cross) / 6.0
        E += _tri_area8(P[0], P[1], P[2]) * F
    return E


@njit(cache=True)
def project_sites_to_cells(n_fac, fac_site, fac_face, fac_pos, sites,
                           plane_o, plane_u, plane_v,
                           best_d2, anchor_face, anchor_q):
    """Closest point of each site on its own cell facets.

    best_d2 must start at +inf; anchor_q receives the closest 8D point and
    anchor_face the source face id.
    """
    q2 = np.empty(2)
    for t in range(n_fac):
        s = fac_site[t]
        f = fac_face[t]
        # 2D coordinates in the face plane
        ax = 0.0
        ay = 0.0
        bx = 0.0
        by = 0.0
        cx = 0.0
        cy = 0.0
        px = 0.0
        py = 0.0
        for c in range(MBAR):
            ax += (fac_pos[t, 0, c] - plane_o[f, c]) * plane_u[f, c]
            ay += (fac_pos[t, 0, c] - plane_o[f, c]) * plane_v[f, c]
            bx += (fac_pos[t, 1, c] - plane_o[f, c]) * plane_u[f, c]
            by += (fac_pos[t, 1, c] - plane_o[f, c]) * plane_v[f, c]
            cx += (fac_pos[t, 2, c] - plane_o[f, c]) * plane_u[f, c]
            cy += (fac_pos[t, 2, c] - plane_o[f, c]) * plane_v[f, c]
            px += (sites[s, c] - plane_o[f, c]) * plane_u[f, c]
            py += (sites[s, c] - plane_o[f, c]) * plane_v[f, c]
        # squared distance from the site to the plane (constant per face)
        dplane2 = 0.0
        for c in range(MBAR):
            r = sites[s, c] - (plane_o[f, c] + px * plane_u[f, c] + py * plane_v[f, c])
            dplane2 += r * r
        _closest_in_tri_2d(px, py, ax, ay, bx, by, cx, cy, q2)
        dx = q2[0] - px
        dy = q2[1] - py
        d2 = dplane2 + dx * dx + dy * dy
        if d2 < best_d2[s]:
            best_d2[s] = d2
            anchor_face[s] = f
            for c in range(MBAR):
                anchor_q[s, c] = (
                    plane_o[f, c] + q2[0] * plane_u[f, c] + q2[1] * plane_v[f, c]
                )
    return 0


@njit(cache=True)
def _closest_in_tri_2d(px, py, ax, ay, bx, by, cx, cy, out):
    """Closest point to (px, py) inside triangle abc, 2D (Ericson-style)."""
    abx = bx - ax
    aby = by - ay
    acx = cx - ax
    acy = cy - ay
    apx = px - ax
    apy = py - ay
    d1 = abx * apx + aby * apy
    d2 = acx * apx + acy * apy
    if d1 <= 0.0 and d2 <= 0.0:
        out[0] = ax
        out[1] = ay
        return
    bpx = px - bx
    bpy = py - by
    d3 = abx * bpx + aby * bpy
    d4 = acx * bpx + acy * bpy
    if d3 >= 0.0 and d4 <= d3:
        out[0] = bx
        out[1] = by
        return
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        out[0] = ax + v * abx
        out[1] = ay + v * aby
        return
    cpx = px - cx
    cpy = py - cy
    d5 = abx * cpx + aby * cpy
    d6 = acx * cpx + acy * cpy
    if d6 >= 0.0 and d5 <= d6:
        out[0] = cx
        out[1] = cy
        return
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        out[0] = ax + w * acx
        out[1] = ay + w * acy
        return
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out[0] = bx + w * (cx - bx)
        out[1] = by + w * (cy - by)
        return
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    out[0] = ax + abx * v + acx * w
    out[1] = ay + aby * v + acy * w
