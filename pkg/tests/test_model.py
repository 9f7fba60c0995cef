"""Weights, assignments, problem assembly, and objective evaluation."""

import json

import numpy as np
import pytest

from conftest import make_cloud, make_identity_pair, make_warped_pair
from sigma.errors import (InfeasibleAssignment, KeypointCountMismatch,
                          ValidationError)
from sigma.meshes import Shape
from sigma.model import (Assignment, Reconstruction, Weights,
                         assemble_problem, eval_def, eval_objective, eval_ori,
                         eval_rec, save_problem)


class TestWeights:
    def test_defaults(self):
        w = Weights()
        assert w.lambda_def == 5.0
        assert w.lambda_ori == 0.025

    def test_nonnegative(self):
        with pytest.raises(ValidationError):
            Weights(lambda_def=-1.0)

    def test_reconstruction_form_round_trip(self):
        w = Weights()
        rec, ori = w.reconstruction_form()
        assert rec == pytest.approx(0.2)
        assert ori == pytest.approx(0.005)
        back = Weights.from_reconstruction_form(rec, ori)
        assert back.lambda_def == pytest.approx(w.lambda_def)
        assert back.lambda_ori == pytest.approx(w.lambda_ori)

    def test_frozen(self):
        with pytest.raises(AttributeError):
            Weights().lambda_def = 3.0


class TestAssignment:
    def test_identity(self):
        a = Assignment.identity(4)
        np.testing.assert_array_equal(a.target_of_source, [0, 1, 2, 3])
        assert a.matched_count == 4
        assert len(a) == 4

    def test_unmatched_entries(self):
        a = Assignment([2, -1, 0])
        assert a.matched_count == 2
        assert a.pairs() == [(0, 2), (2, 0)]
        np.testing.assert_array_equal(a.matched_mask, [True, False, True])

    def test_injective(self):
        with pytest.raises(ValidationError, match="two source"):
            Assignment([1, 1])

    def test_below_minus_one_rejected(self):
        with pytest.raises(ValidationError, match=">= -1"):
            Assignment([0, -2])

    def test_immutable(self):
        a = Assignment([0, 1])
        with pytest.raises(ValueError):
            a.target_of_source[0] = 5

    def test_matrix_and_inverse(self):
        a = Assignment([1, -1, 0])
        p = a.as_matrix(3)
        np.testing.assert_array_equal(p, [[0, 1, 0], [0, 0, 0], [1, 0, 0]])
        np.testing.assert_array_equal(a.inverse(3), [2, 0, -1])

    def test_equality(self):
        assert Assignment([0, 1]) == Assignment([0, 1])
        assert Assignment([0, 1]) != Assignment([1, 0])


class TestAssembleProblem:
    def test_basic_fields(self):
        sx, sy = make_warped_pair(seed=2, n_keypoints=5)
        prob = assemble_problem(sx, sy, k=3)
        assert prob.n_x == prob.n_y == 5
        assert prob.k == 3
        assert len(prob.candidates) == 5
        assert prob.d_x > 0 and prob.d_y > 0
        assert prob.quad_x.n == 5
        assert prob.orientation_enabled
        assert prob.h_x.shape == (5,)

    def test_count_mismatch_full_mode(self):
        sx, _ = make_warped_pair(seed=0, n_keypoints=5)
        sy2 = Shape(sx.geometry, sx.keypoints[:4])
        with pytest.raises(KeypointCountMismatch):
            assemble_problem(sx, sy2)

    def test_partial_allows_mismatch(self):
        sx, _ = make_warped_pair(seed=0, n_keypoints=5)
        sy2 = Shape(sx.geometry, sx.keypoints[:4])
        prob = assemble_problem(sx, sy2, partial=True)
        assert prob.partial
        assert prob.n_y == 4

    def test_identical_shapes_share_structures(self):
        sx, sy = make_identity_pair(n_keypoints=5)
        prob = assemble_problem(sx, sy)
        assert prob.op_x is prob.op_y
        assert prob.quad_x is prob.quad_y
        np.testing.assert_array_equal(prob.h_x, prob.h_y)

    def test_different_shapes_not_shared(self):
        sx, sy = make_warped_pair(seed=1, n_keypoints=5)
        prob = assemble_problem(sx, sy)
        assert prob.op_x is not prob.op_y

    def test_cloud_disables_orientation_with_warning(self):
        cloud = make_cloud(40, seed=3, knn=6)
        sa = Shape(cloud, [0, 5, 10, 15])
        sb = Shape(cloud, [0, 5, 10, 15])
        with pytest.warns(UserWarning, match="orientation"):
            prob = assemble_problem(sa, sb, k=3)
        assert not prob.orientation_enabled
        assert prob.weights.lambda_ori == 0.0

    def test_lambda_ori_zero_skips_orientation(self):
        sx, sy = make_identity_pair(n_keypoints=4)
        prob = assemble_problem(sx, sy, weights=Weights(lambda_ori=0.0))
        assert prob.h_x is None
        assert not prob.orientation_enabled

    def test_negative_rho_rejected(self):
        sx, sy = make_identity_pair(n_keypoints=4)
        with pytest.raises(ValidationError, match="rho"):
            assemble_problem(sx, sy, partial=True, rho=-0.1)


@pytest.fixture(scope="module")
def narrow_prob():
    sx, sy = make_identity_pair(n_keypoints=5)
    return assemble_problem(sx, sy, k=3)


@pytest.fixture(scope="module")
def full_prob():
    sx, sy = make_identity_pair(n_keypoints=5, subdivisions=1)
    return assemble_problem(sx, sy, k=5)


class TestValidateAssignment:
    @pytest.fixture
    def prob(self, narrow_prob):
        return narrow_prob

    def test_accepts_identity(self, prob):
        prob.validate_assignment(Assignment.identity(5))

    def test_wrong_length(self, prob):
        with pytest.raises(InfeasibleAssignment, match="covers"):
            prob.validate_assignment(Assignment.identity(4))

    def test_target_out_of_range(self, prob):
        with pytest.raises(InfeasibleAssignment, match="out of range"):
            prob.validate_assignment(Assignment([0, 1, 2, 3, 7]))

    def test_unmatched_needs_partial(self, prob):
        with pytest.raises(InfeasibleAssignment, match="partial"):
            prob.validate_assignment(Assignment([0, 1, 2, 3, -1]))

    def test_outside_candidates(self):
        # k=2 on 6 keypoints leaves most pairs outside the candidate sets
        sx, sy = make_warped_pair(seed=1, n_keypoints=6)
        prob = assemble_problem(sx, sy, k=2)
        rows = prob.candidates.lists
        i, j = next((i, j) for i in range(6) for j in range(6)
                    if j not in rows[i])
        arr = np.arange(6)
        arr[i], arr[j] = j, i  # swap keeps the map injective
        with pytest.raises(InfeasibleAssignment, match="candidate"):
            prob.validate_assignment(Assignment(arr))


class TestObjective:
    @pytest.fixture
    def prob(self, full_prob):
        return full_prob

    def test_identity_reconstruction_zero_objective(self, prob):
        # identical shapes, identity map, undeformed reconstructions
        recon = Reconstruction(prob.shape_x.vertices.copy(),
                               prob.shape_y.vertices.copy())
        val = eval_objective(prob, Assignment.identity(5), recon)
        assert val == pytest.approx(0.0, abs=1e-10)

    def test_rec_term_scales_with_displacement(self, prob):
        recon = Reconstruction(prob.shape_x.vertices.copy(),
                               prob.shape_y.vertices.copy())
        ident = Assignment.identity(5)
        base = eval_rec(prob, ident, recon)
        moved = Reconstruction(prob.shape_x.vertices + [0.5, 0, 0],
                               prob.shape_y.vertices.copy())
        d = eval_rec(prob, ident, moved)
        # forward term: ||0.5 offset over 5 keypoints|| / (5 d_Y)
        expected = base + 0.5 * np.sqrt(5) / (5 * prob.d_y)
        assert d == pytest.approx(expected, rel=1e-12)

    def test_def_term_zero_for_similarity_images(self, prob):
        # any scale/rotation/translation of the vertices has zero energy
        verts = prob.shape_x.vertices
        moved = 3.0 * verts @ _rot_z(0.7).T + np.array([1.0, -2.0, 0.3])
        recon = Reconstruction(moved, verts.copy())
        assert eval_def(prob, recon) == pytest.approx(0.0, abs=1e-12)

    def test_def_term_positive_for_bending(self, prob):
        verts = prob.shape_x.vertices.copy()
        verts[:, 2] += 0.3 * verts[:, 0] ** 2
        assert eval_def(prob, Reconstruction(verts, prob.shape_y.vertices.copy())) > 1e-6

    def test_ori_identity_zero(self, prob):
        assert eval_ori(prob, Assignment.identity(5)) == 0.0

    def test_ori_swap_nonnegative(self, prob):
        swapped = Assignment([1, 0, 2, 3, 4])
        if 1 not in prob.candidates.lists[0] or 0 not in prob.candidates.lists[1]:
            pytest.skip("swap outside candidates")
        assert eval_ori(prob, swapped) >= 0.0

    def test_partial_penalty(self):
        sx, sy = make_identity_pair(n_keypoints=5)
        prob = assemble_problem(sx, sy, partial=True, rho=0.05, k=5)
        recon = Reconstruction(prob.shape_x.vertices.copy(),
                               prob.shape_y.vertices.copy())
        none = Assignment(np.full(5, -1))
        # nothing matched: objective is exactly rho * (n_x + n_y)
        assert eval_objective(prob, none, recon) == pytest.approx(0.05 * 10)

        arr = np.full(5, -1)
        arr[0] = 0
        one = Assignment(arr)
        val = eval_objective(prob, one, recon)
        assert val == pytest.approx(0.05 * 8, abs=1e-9)

    def test_full_mode_normalizer_is_nx(self, prob):
        # displacement on one keypoint: E_rec denominator stays n_x
        recon = Reconstruction(prob.shape_x.vertices.copy(),
                               prob.shape_y.vertices.copy())
        ident = Assignment.identity(5)
        moved = recon.x_hat.copy()
        moved[prob.shape_x.keypoints[2]] += [0.0, 0.0, 0.25]
        val = eval_rec(prob, ident, Reconstruction(moved, recon.y_hat))
        assert val == pytest.approx(0.25 / (5 * prob.d_y), rel=1e-12)


def _rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class TestSaveProblem:
    def test_round_trip_metadata(self, tmp_path):
        sx, sy = make_warped_pair(seed=4, n_keypoints=4)
        prob = assemble_problem(sx, sy, k=3)
        save_problem(prob, tmp_path / "p.json")
        data = json.loads((tmp_path / "p.json").read_text())
        assert data["k"] == 3
        assert data["weights"]["lambda_def"] == 5.0
        assert len(data["candidates"]) == 4
        assert data["shape_x"]["hash"] == prob.hash_x
        assert data["orientation_enabled"] is True
