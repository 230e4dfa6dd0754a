import numpy as np
import pytest

from anisoforge.metric import (
    CurvatureFrames,
    MetricField,
    build_metric,
    face_metric,
    face_metrics,
    load_metric,
    metric_sqrt,
    principal_curvatures,
    save_metric,
    smooth_stretch,
)

from _meshgen import icosphere, plane_grid, torus, vertex_fan


def random_spd(rng, max_cond=1e6):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    lo = rng.uniform(-3, 0)
    evals = 10.0 ** rng.uniform(lo, min(lo + np.log10(max_cond), 3), size=3)
    return (q * evals) @ q.T


def frames_from_vectors(vmin, n, kmin, kmax):
    vmin = np.asarray(vmin, dtype=float)
    n = np.asarray(n, dtype=float)
    vmin = vmin / np.linalg.norm(vmin)
    n = n / np.linalg.norm(n)
    vmax = np.cross(n, vmin)
    one = np.ones(1)
    return CurvatureFrames(
        v_min=vmin[None],
        v_max=vmax[None],
        normal=n[None],
        k_min=np.array([kmin]),
        k_max=np.array([kmax]),
        boundary=np.zeros(1, bool),
        fallback=np.zeros(1, bool),
    )


# -- principal curvatures ----------------------------------------------------


def test_sphere_curvatures():
    mesh = icosphere(4)  # 2562 vertices
    fr = principal_curvatures(mesh, radius_rings=2)
    err_min = np.abs(fr.k_min - 1.0)
    err_max = np.abs(fr.k_max - 1.0)
    assert err_min.mean() < 0.1
    assert err_max.mean() < 0.1


def test_plane_curvatures_zero():
    mesh = plane_grid(8)
    fr = principal_curvatures(mesh)
    interior = ~fr.boundary
    assert np.abs(fr.k_min[interior]).max() < 1e-9
    assert np.abs(fr.k_max[interior]).max() < 1e-9
    assert fr.boundary.any()  # open grid has a flagged rim


def test_torus_gaussian_curvature_outer_equator():
    R, r = 1.0, 1.0 / 3.0
    mesh = torus(64, 32, R=R, r=r)
    fr = principal_curvatures(mesh, radius_rings=2)
    # outer equator: tube angle 0 -> radial distance R + r, z = 0
    rad = np.linalg.norm(mesh.vertices[:, :2], axis=1)
    outer = (np.abs(rad - (R + r)) < 1e-9) & (np.abs(mesh.vertices[:, 2]) < 1e-9)
    assert outer.sum() > 0
    gauss = fr.k_min[outer] * fr.k_max[outer]
    analytic = 1.0 / (r * (R + r))  # cos(0) / (r (R + r cos 0))
    assert np.abs(gauss / analytic - 1.0).max() < 0.15


def test_frame_orthonormal_right_handed():
    mesh = icosphere(2)
    fr = principal_curvatures(mesh)
    R = np.stack([fr.v_min, fr.v_max, fr.normal], axis=2)
    gram = np.einsum("vij,vik->vjk", R, R)
    assert np.abs(gram - np.eye(3)).max() < 1e-6
    cross = np.cross(fr.v_min, fr.v_max)
    assert np.abs(cross - fr.normal).max() < 1e-6
    assert (np.abs(fr.k_min) <= np.abs(fr.k_max) + 1e-12).all()


def test_fallback_on_tiny_mesh():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]])
    mesh_small = plane_grid(1)
    fr = principal_curvatures(mesh_small)
    assert fr.fallback.any()
    del v, mesh_small


# -- build_metric ------------------------------------------------------------


def test_umbilic_gives_identity():
    fr = frames_from_vectors([1, 0, 0], [0, 0, 1], 2.0, 2.0)
    field = build_metric(fr)
    np.testing.assert_allclose(field.tensors[0], np.eye(3), atol=1e-12)


def test_floor_and_eigenvalues():
    fr = frames_from_vectors([1, 0, 0], [0, 0, 1], 0.01, 4.0)
    field = build_metric(fr, floor=0.04, ceil=100.0)
    assert field.ratios[0] == pytest.approx(10.0)
    evals = np.sort(np.linalg.eigvalsh(field.tensors[0]))
    np.testing.assert_allclose(evals, [1.0, 1.0, 100.0], rtol=1e-12)


def test_ratio_clamped_to_ceil():
    fr = frames_from_vectors([1, 0, 0], [0, 0, 1], 1e-4, 400.0)
    field = build_metric(fr, floor=1e-4, ceil=20.0)
    assert field.ratios[0] == pytest.approx(20.0)


def test_non_orthonormal_frames_rejected():
    fr = frames_from_vectors([1, 0, 0], [0, 0, 1], 1.0, 1.0)
    fr.v_max[0] = [1, 0, 0]  # duplicate of v_min
    with pytest.raises(ValueError):
        build_metric(fr)


def test_metric_quadratic_forms():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = rng.standard_normal(3)
        t = rng.standard_normal(3)
        t -= (t @ n) * n / (n @ n)
        fr = frames_from_vectors(t, n, rng.uniform(0, 2), rng.uniform(2, 9))
        field = build_metric(fr, floor=1e-3, ceil=100.0)
        M = field.tensors[0]
        r = field.ratios[0]
        assert fr.v_min[0] @ M @ fr.v_min[0] == pytest.approx(1.0, abs=1e-9)
        assert fr.v_max[0] @ M @ fr.v_max[0] == pytest.approx(r * r, rel=1e-9)
        assert fr.normal[0] @ M @ fr.normal[0] == pytest.approx(1.0, abs=1e-9)


# -- smoothing ---------------------------------------------------------------


def test_smooth_zero_iterations_identity():
    mesh, _ = vertex_fan()
    fr = principal_curvatures(mesh, 1)
    field = build_metric(fr)
    out = smooth_stretch(field, mesh, 0)
    np.testing.assert_array_equal(out.ratios, field.ratios)


def test_smooth_constant_fixed_point():
    mesh = icosphere(1)
    fr = principal_curvatures(mesh)
    field = build_metric(fr)
    field = MetricField(field.tensors, np.full(len(field), 3.0), field.frames)
    out = smooth_stretch(field, mesh, 5)
    np.testing.assert_allclose(out.ratios, 3.0, rtol=1e-12)


def test_smooth_spike_decreases_and_envelope():
    mesh, spike = vertex_fan(ratio_center=10.0)
    fr = principal_curvatures(mesh, 1)
    ratios = np.ones(mesh.n_vertices)
    ratios[0] = spike
    field = MetricField(
        tensors=np.tile(np.eye(3), (mesh.n_vertices, 1, 1)), ratios=ratios, frames=fr
    )
    out = smooth_stretch(field, mesh, 1)
    assert out.ratios[0] < spike
    assert out.ratios.min() >= ratios.min() - 1e-12
    assert out.ratios.max() <= ratios.max() + 1e-12


# -- face metric and square root ----------------------------------------------


def test_face_metric_identical_tensors():
    mesh = plane_grid(1)
    field = MetricField(
        np.tile(np.diag([2.0, 3.0, 1.0]), (mesh.n_vertices, 1, 1)),
        np.ones(mesh.n_vertices),
    )
    np.testing.assert_allclose(face_metric(field, mesh, 0), np.diag([2.0, 3.0, 1.0]))


def test_face_metric_arithmetic_mean():
    mesh = plane_grid(1)
    tensors = np.tile(np.eye(3), (mesh.n_vertices, 1, 1))
    i, j, k = mesh.faces[0]
    tensors[i] = np.diag([1.0, 1, 1])
    tensors[j] = np.diag([4.0, 1, 1])
    tensors[k] = np.diag([7.0, 1, 1])
    field = MetricField(tensors, np.ones(mesh.n_vertices))
    np.testing.assert_allclose(face_metric(field, mesh, 0), np.diag([4.0, 1, 1]))


def test_face_metric_spd_preserved():
    rng = np.random.default_rng(3)
    mesh = plane_grid(1)
    tensors = np.stack([random_spd(rng) for _ in range(mesh.n_vertices)])
    field = MetricField(tensors, np.ones(mesh.n_vertices))
    for f in range(mesh.n_faces):
        evals = np.linalg.eigvalsh(face_metric(field, mesh, f))
        assert evals.min() > 0
    np.testing.assert_allclose(
        face_metrics(field, mesh)[0], face_metric(field, mesh, 0)
    )


def test_metric_sqrt_diagonal():
    np.testing.assert_allclose(metric_sqrt(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(
        metric_sqrt(np.diag([4.0, 9.0, 1.0])), np.diag([2.0, 3.0, 1.0])
    )


def test_metric_sqrt_reconstruction_batch():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        M = random_spd(rng, max_cond=1e6)
        Q = metric_sqrt(M)
        rel = np.linalg.norm(Q @ Q - M) / np.linalg.norm(M)
        worst = max(worst, rel)
    assert worst < 1e-10


def test_metric_sqrt_rejects_indefinite():
    with pytest.raises(ValueError):
        metric_sqrt(np.diag([1.0, -1.0, 1.0]))


# -- serialization -----------------------------------------------------------


def test_metric_round_trip(tmp_path):
    mesh = icosphere(2)
    field = build_metric(principal_curvatures(mesh))
    p = tmp_path / "metric.json"
    save_metric(field, p)
    back = load_metric(p)
    np.testing.assert_allclose(back.tensors, field.tensors, rtol=0, atol=1e-15)
    np.testing.assert_allclose(back.ratios, field.ratios, rtol=0, atol=1e-15)


def test_metric_eigenvector_alignment_in_tangent():
    # the smallest in-tangent eigendirection of M is v_min (within 1e-4 rad)
    rng = np.random.default_rng(29)
    for _ in range(30):
        n = rng.standard_normal(3)
        t = rng.standard_normal(3)
        t -= (t @ n) * n / (n @ n)
        fr = frames_from_vectors(t, n, rng.uniform(0.5, 1.5), rng.uniform(3, 9))
        field = build_metric(fr, floor=1e-3, ceil=100.0)
        M = field.tensors[0]
        nrm = fr.normal[0]
        # independent tangent basis from the normal alone
        a = np.zeros(3)
        a[np.argmin(np.abs(nrm))] = 1.0
        t1 = np.cross(nrm, a)
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(nrm, t1)
        T = np.stack([t1, t2], axis=1)
        Mt = T.T @ M @ T
        evals, evecs = np.linalg.eigh(Mt)
        d3 = T @ evecs[:, 0]
        cos = abs(d3 @ fr.v_min[0])
        assert np.arccos(min(cos, 1.0)) < 1e-4
