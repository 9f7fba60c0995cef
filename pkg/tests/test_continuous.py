"""Keypoint reduction and the exact two-ball side solver.

Oracles: dense Schur complements for the reduced quadratic, cvxpy
(Clarabel) for the nonsmooth two-ball problem.
"""

import cvxpy as cp
import numpy as np
import pytest

from sigma import synthetic
from sigma.continuous import (build_keypoint_quadratic, side_value,
                              solve_side)
from sigma.operators import cotan_stiffness, graph_laplacian


def dense_projector(vertices):
    xt = np.column_stack([vertices, np.ones(len(vertices))])
    return np.eye(len(vertices)) - xt @ np.linalg.solve(xt.T @ xt, xt.T)


def dense_reduced_quadratic(stiff, vertices, keypoints, projected):
    """Schur-complement oracle for min ||Delta x||^2 with x pinned at keypoints."""
    s = stiff.matrix.toarray()
    if projected:
        pi = dense_projector(vertices)
        delta = pi @ s @ pi
    else:
        delta = s
    m = delta @ delta  # normal matrix of ||Delta x||
    n = len(vertices)
    kp = np.asarray(keypoints)
    free = np.setdiff1d(np.arange(n), kp)
    mii = m[np.ix_(kp, kp)]
    mif = m[np.ix_(kp, free)]
    mff = m[np.ix_(free, free)]
    return mii - mif @ np.linalg.pinv(mff, rcond=1e-11) @ mif.T


def cvxpy_two_ball(lam, b_tilde, a, c):
    """Reference solve of min a ||w - b~||_F + c ||diag(lam) w||_F."""
    w = cp.Variable(b_tilde.shape)
    obj = a * cp.norm(w - b_tilde, "fro") + c * cp.norm(
        cp.multiply(lam[:, None], w), "fro")
    prob = cp.Problem(cp.Minimize(obj))
    prob.solve(solver=cp.CLARABEL)
    return prob.value


class _StubQuad:
    """Minimal eigvecs/g_diag carrier so side solves can be tested directly."""

    def __init__(self, eigvecs, g_diag):
        self.eigvecs = eigvecs
        self.g_diag = g_diag


def random_stub(rng, n, n_zero=1):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    g = np.abs(rng.normal(size=n)) + 0.1
    g[rng.choice(n, size=n_zero, replace=False)] = 0.0
    return _StubQuad(q, g)


@pytest.fixture(scope="module")
def small_quads():
    mesh = synthetic.icosphere(1)
    kp = synthetic.fps_keypoints(mesh, 5)
    stiff = cotan_stiffness(mesh)
    proj = build_keypoint_quadratic(stiff.matrix, mesh.vertices, kp, projected=True)
    plain = build_keypoint_quadratic(stiff.matrix, mesh.vertices, kp, projected=False)
    return mesh, kp, stiff, proj, plain


class TestKeypointQuadratic:
    def test_projected_matches_dense_schur(self, small_quads):
        mesh, kp, stiff, proj, _ = small_quads
        oracle = dense_reduced_quadratic(stiff, mesh.vertices, kp, projected=True)
        scale = max(abs(oracle).max(), 1e-30)
        np.testing.assert_allclose(proj.q, oracle, atol=1e-8 * scale)

    def test_plain_matches_dense_schur(self, small_quads):
        mesh, kp, stiff, _, plain = small_quads
        oracle = dense_reduced_quadratic(stiff, mesh.vertices, kp, projected=False)
        scale = max(abs(oracle).max(), 1e-30)
        np.testing.assert_allclose(plain.q, oracle, atol=1e-8 * scale)

    def test_seminorm_equals_quadratic_form(self, small_quads, rng):
        _, _, _, proj, _ = small_quads
        v = rng.normal(size=(proj.n, 3))
        direct = np.sqrt(max(np.trace(v.T @ proj.q @ v), 0.0))
        assert proj.seminorm(v) == pytest.approx(direct, abs=1e-12)

    def test_homogeneous_keypoint_values_in_kernel(self, small_quads):
        # pinning keypoints at any similarity image of themselves costs zero
        mesh, kp, _, proj, _ = small_quads
        coords = np.column_stack([mesh.vertices[kp], np.ones(len(kp))])
        scale = np.linalg.norm(proj.q) * np.linalg.norm(coords) ** 2
        assert proj.seminorm(coords) <= 1e-8 * np.sqrt(scale)

    def test_plain_kernel_is_only_constants(self, small_quads):
        _, kp, _, _, plain = small_quads
        ones = np.ones((len(kp), 1))
        assert plain.seminorm(ones) <= 1e-8
        coords = plain._vertices[kp]
        assert plain.seminorm(coords) > 1e-3 * np.linalg.norm(coords)

    def test_lift_pins_keypoints_and_attains_seminorm(self, small_quads, rng):
        mesh, kp, stiff, proj, _ = small_quads
        v = rng.normal(size=(len(kp), 3))
        xhat = proj.lift(v)
        np.testing.assert_allclose(xhat[kp], v, atol=1e-9)
        pi = dense_projector(mesh.vertices)
        energy = np.linalg.norm(pi @ (stiff.matrix @ (pi @ xhat)))
        assert energy == pytest.approx(proj.seminorm(v), rel=1e-7, abs=1e-9)

    def test_lift_pattern_all_false_returns_vertices(self, small_quads):
        mesh, _, _, proj, _ = small_quads
        out = proj.lift_pattern(np.zeros(proj.n, dtype=bool), np.zeros((0, 3)))
        np.testing.assert_array_equal(out, mesh.vertices)
        assert out is not mesh.vertices

    def test_lift_pattern_subset(self, small_quads, rng):
        mesh, kp, stiff, proj, _ = small_quads
        mask = np.array([True, False, True, True, False])
        v = rng.normal(size=(mask.sum(), 3))
        xhat = proj.lift_pattern(mask, v)
        np.testing.assert_allclose(xhat[kp[mask]], v, atol=1e-9)
        # energy must match the restricted quadratic's seminorm
        pi = dense_projector(mesh.vertices)
        energy = np.linalg.norm(pi @ (stiff.matrix @ (pi @ xhat)))
        sub = proj.restricted(mask)
        vt = sub.eigvecs.T @ v
        sub_norm = np.sqrt(max((sub.eigvals[:, None] * vt * vt).sum(), 0.0))
        assert energy == pytest.approx(sub_norm, rel=1e-6, abs=1e-9)

    def test_restricted_matches_dense_schur(self, small_quads):
        _, _, _, proj, _ = small_quads
        mask = np.array([True, True, False, True, False])
        sub = proj.restricted(mask)
        qmm = proj.q[np.ix_(mask, mask)]
        qmu = proj.q[np.ix_(mask, ~mask)]
        quu = proj.q[np.ix_(~mask, ~mask)]
        oracle = qmm - qmu @ np.linalg.pinv(quu, rcond=1e-11) @ qmu.T
        np.testing.assert_allclose(sub.q, oracle, atol=1e-10 * max(abs(oracle).max(), 1))

    def test_restricted_cached(self, small_quads):
        _, _, _, proj, _ = small_quads
        mask = np.array([True, False, True, False, True])
        assert proj.restricted(mask) is proj.restricted(mask.copy())

    def test_cloud_variant_builds(self, rng):
        pts = rng.normal(size=(30, 3))
        from sigma.meshes import PointCloud
        stiff = graph_laplacian(PointCloud(pts, knn=6))
        quad = build_keypoint_quadratic(stiff.matrix, pts, [0, 7, 19], projected=True)
        assert quad.q.shape == (3, 3)

    def test_g_apply_pinv_roundtrip(self, small_quads, rng):
        _, _, _, proj, _ = small_quads
        m = rng.normal(size=(proj.n, 2))
        ranged = proj.range_project(m)
        np.testing.assert_allclose(proj.g_apply(proj.g_pinv_apply(ranged)), ranged,
                                    atol=1e-9)


class TestTwoBallSolver:
    def test_matches_cvxpy_random(self, rng):
        for trial in range(12):
            n = int(rng.integers(2, 9))
            quad = random_stub(rng, n, n_zero=int(rng.integers(0, 2)))
            b = rng.normal(size=(n, 3))
            a = 10.0 ** rng.uniform(-2, 2)
            c = 10.0 ** rng.uniform(-2, 2)
            mine = side_value(quad, b, a, c)
            oracle = cvxpy_two_ball(quad.g_diag, quad.eigvecs.T @ b, a, c)
            assert mine == pytest.approx(oracle, rel=1e-6, abs=1e-8)

    def test_dual_never_exceeds_primal_feasible(self, rng):
        # the dual value must lower bound the objective at ANY feasible point
        quad = random_stub(rng, 6)
        b = rng.normal(size=(6, 2))
        a, c = 0.7, 1.3
        value = side_value(quad, b, a, c)
        for _ in range(30):
            v = rng.normal(size=(6, 2))
            primal = a * np.linalg.norm(v - b) + c * np.linalg.norm(quad.g_diag[:, None] * (quad.eigvecs.T @ v))
            assert value <= primal + 1e-10

    def test_primal_recovery_attains_value(self, rng):
        for trial in range(8):
            quad = random_stub(rng, 5)
            b = rng.normal(size=(5, 3))
            a = 10.0 ** rng.uniform(-1.5, 1.5)
            c = 10.0 ** rng.uniform(-1.5, 1.5)
            sol = solve_side(quad, b, a, c)
            primal = a * np.linalg.norm(sol.v - b) + c * np.linalg.norm(
                quad.g_diag[:, None] * (quad.eigvecs.T @ sol.v))
            assert primal == pytest.approx(sol.value, rel=1e-6, abs=1e-9)

    def test_large_a_forces_pin(self, rng):
        # a >> c: solution stays at B, value = c ||G B||
        quad = random_stub(rng, 5, n_zero=0)
        b = rng.normal(size=(5, 3))
        value = side_value(quad, b, 1e8, 1.0)
        gb = np.linalg.norm(quad.g_diag[:, None] * (quad.eigvecs.T @ b))
        assert value == pytest.approx(gb, rel=1e-6)

    def test_large_c_projects_to_kernel(self, rng):
        # c >> a: G V -> 0, value = a ||range component of B||
        quad = random_stub(rng, 5, n_zero=2)
        b = rng.normal(size=(5, 3))
        value = side_value(quad, b, 1.0, 1e8)
        pos = quad.g_diag > 0
        ranged = quad.eigvecs[:, pos] @ (quad.eigvecs[:, pos].T @ b)
        assert value == pytest.approx(np.linalg.norm(ranged), rel=1e-6)

    def test_zero_b_zero_value(self, rng):
        quad = random_stub(rng, 4)
        sol = solve_side(quad, np.zeros((4, 3)), 1.0, 1.0)
        assert sol.value == 0.0
        np.testing.assert_allclose(sol.v, 0.0, atol=1e-12)

    def test_kernel_b_is_free(self, rng):
        # B in the kernel of G: pinning costs nothing, value 0, V = B
        quad = random_stub(rng, 5, n_zero=2)
        null = quad.eigvecs[:, quad.g_diag == 0]
        b = null @ rng.normal(size=(null.shape[1], 3))
        sol = solve_side(quad, b, 3.0, 2.0)
        assert sol.value == pytest.approx(0.0, abs=1e-10)
        np.testing.assert_allclose(sol.v, b, atol=1e-9)

    def test_vector_b_accepted(self, rng):
        quad = random_stub(rng, 4)
        b = rng.normal(size=4)
        assert side_value(quad, b, 1.0, 1.0) == pytest.approx(
            side_value(quad, b[:, None], 1.0, 1.0))

    def test_extreme_scale_ratios(self, rng):
        # exercise the bisection bracket across many decades
        quad = random_stub(rng, 6, n_zero=1)
        b = rng.normal(size=(6, 3)) * 100
        for a, c in [(1e-6, 1.0), (1.0, 1e-6), (1e6, 1e-6), (1e-6, 1e6), (37.0, 0.003)]:
            mine = side_value(quad, b, a, c)
            oracle = cvxpy_two_ball(quad.g_diag, quad.eigvecs.T @ b, a, c)
            assert mine == pytest.approx(oracle, rel=2e-5, abs=1e-7 * max(a, c))


class TestEndToEndSide:
    def test_mesh_side_matches_cvxpy(self, small_quads, rng):
        # full pipeline value on a real reduced quadratic
        _, _, _, proj, _ = small_quads
        b = rng.normal(size=(proj.n, 3))
        a, c = 0.9, 2.4
        mine = side_value(proj, b, a, c)
        oracle = cvxpy_two_ball(proj.g_diag, proj.eigvecs.T @ b, a, c)
        assert mine == pytest.approx(oracle, rel=1e-6, abs=1e-9)
