"""Matching problem assembly and objective evaluation.

A problem instance bundles two shapes with keypoints, pruned candidate
pairs, the reduced deformation quadratics for both sides, orientation values
at the keypoints, and the term weights. The objective for an assignment P
and reconstructions (Xhat, Yhat) is

    E = E_rec + lambda_def * E_def + lambda_ori * E_ori   (+ unmatched penalty)

with unsquared Frobenius norms throughout:

    E_rec = ||Xhat_I - P Y_J|| / (n d_Y) + ||Yhat_J - P^T X_I|| / (n d_X)
    E_def = ||Dx Xhat|| / (|X| d_Y) + ||Dy Yhat|| / (|Y| d_X)
    E_ori = ||h_I - P h_J|| / n

where d are geodesic diameters and D the projected operators. In partial
mode rows without a match are dropped from E_rec and E_ori, n is replaced by
the matched count, and each unmatched keypoint on either side pays rho.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .continuous import build_keypoint_quadratic
from .errors import InfeasibleAssignment, KeypointCountMismatch, ValidationError
from .geodesics import DEFAULT_CANDIDATES, CandidateSet, prune_candidates
from .meshes import Shape, TriMesh, content_hash
from .operators import build_plbo
from .spectral import orientation_field

log = logging.getLogger(__name__)

UNMATCHED = -1
DEFAULT_RHO = 0.05


@dataclass(frozen=True)
class Weights:
    """Objective term weights; defaults follow the reference setting."""

    lambda_def: float = 5.0
    lambda_ori: float = 0.025

    def __post_init__(self):
        if self.lambda_def < 0 or self.lambda_ori < 0:
            raise ValidationError("term weights must be nonnegative")

    @classmethod
    def from_reconstruction_form(cls, lambda_rec=0.2, lambda_ori=0.005):
        """Weights from the rescaled form where E_def has unit weight.

        That form's objective is lambda_rec * E_rec + E_def + lambda_ori' *
        E_ori, which equals lambda_rec times this module's objective with
        lambda_def = 1/lambda_rec and lambda_ori = lambda_ori'/lambda_rec.
        """
        if lambda_rec <= 0:
            raise ValidationError("lambda_rec must be positive")
        return cls(lambda_def=1.0 / lambda_rec, lambda_ori=lambda_ori / lambda_rec)

    def reconstruction_form(self):
        """(lambda_rec, lambda_ori') of the rescaled objective."""
        if self.lambda_def <= 0:
            raise ValidationError("reconstruction form requires lambda_def > 0")
        rec = 1.0 / self.lambda_def
        return rec, self.lambda_ori * rec


class Assignment:
    """Keypoint correspondence: target index per source keypoint, -1 unmatched."""

    def __init__(self, target_of_source):
        arr = np.asarray(target_of_source, dtype=np.int64)
        if arr.ndim != 1:
            raise ValidationError("assignment must be one-dimensional")
        matched = arr[arr != UNMATCHED]
        if (matched < 0).any():
            raise ValidationError("assignment entries must be >= -1")
        if len(np.unique(matched)) != len(matched):
            raise ValidationError("assignment maps two source keypoints to one target")
        self.target_of_source = arr
        self.target_of_source.setflags(write=False)

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    def __len__(self):
        return len(self.target_of_source)

    def __eq__(self, other):
        return isinstance(other, Assignment) and np.array_equal(
            self.target_of_source, other.target_of_source
        )

    def __repr__(self):
        return f"Assignment({self.target_of_source.tolist()})"

    @property
    def matched_mask(self):
        return self.target_of_source != UNMATCHED

    @property
    def matched_count(self):
        return int(self.matched_mask.sum())

    def pairs(self):
        return [(int(i), int(j)) for i, j in enumerate(self.target_of_source) if j != UNMATCHED]

    def as_matrix(self, n_targets):
        p = np.zeros((len(self), n_targets))
        for i, j in self.pairs():
            p[i, j] = 1.0
        return p

    def inverse(self, n_targets):
        """Source index per target keypoint, -1 where unmatched."""
        inv = np.full(n_targets, UNMATCHED, dtype=np.int64)
        for i, j in self.pairs():
            inv[j] = i
        return inv


@dataclass
class Reconstruction:
    """Deformed vertex positions for both shapes."""

    x_hat: np.ndarray
    y_hat: np.ndarray


class MatchProblem:
    """Assembled matching instance; treat as immutable after construction."""

    def __init__(self, shape_x, shape_y, weights, candidates, op_x, op_y,
                 quad_x, quad_y, h_x, h_y, partial, rho, k):
        self.shape_x = shape_x
        self.shape_y = shape_y
        self.weights = weights
        self.candidates = candidates
        self.op_x = op_x
        self.op_y = op_y
        self.quad_x = quad_x
        self.quad_y = quad_y
        self.partial = bool(partial)
        self.rho = float(rho)
        self.k = int(k)
        self.n_x = len(shape_x.keypoints)
        self.n_y = len(shape_y.keypoints)
        self.d_x = shape_x.diameter
        self.d_y = shape_y.diameter
        self.x_keypoints = shape_x.vertices[shape_x.keypoints]
        self.y_keypoints = shape_y.vertices[shape_y.keypoints]
        self.h_x = h_x  # orientation values at X keypoints, or None
        self.h_y = h_y
        self.hash_x = content_hash(shape_x)
        self.hash_y = content_hash(shape_y)

    @property
    def orientation_enabled(self):
        return self.h_x is not None and self.weights.lambda_ori > 0

    def validate_assignment(self, assignment):
        arr = assignment.target_of_source
        if len(arr) != self.n_x:
            raise InfeasibleAssignment(
                f"assignment covers {len(arr)} source keypoints, expected {self.n_x}"
            )
        if (arr >= self.n_y).any():
            raise InfeasibleAssignment("assignment references a target keypoint out of range")
        if not self.partial and (arr == UNMATCHED).any():
            raise InfeasibleAssignment("unmatched keypoints are only allowed in partial mode")
        for i, j in assignment.pairs():
            if j not in self.candidates.lists[i]:
                raise InfeasibleAssignment(
                    f"pair ({i}, {j}) is outside the pruned candidate set"
                )

    def to_dict(self):
        return {
            "shape_x": _shape_meta(self.shape_x, self.hash_x),
            "shape_y": _shape_meta(self.shape_y, self.hash_y),
            "weights": {"lambda_def": self.weights.lambda_def,
                        "lambda_ori": self.weights.lambda_ori},
            "partial": self.partial,
            "rho": self.rho,
            "k": self.k,
            "candidates": [lst.tolist() for lst in self.candidates.lists],
            "diameter_x": self.d_x,
            "diameter_y": self.d_y,
            "orientation_enabled": self.orientation_enabled,
        }


def _shape_meta(shape, digest):
    return {
        "path": shape.source_path,
        "hash": digest,
        "n_vertices": len(shape.vertices),
        "is_mesh": shape.is_mesh,
        "keypoints": shape.keypoints.tolist(),
    }


def _arrays_equal(a, b):
    return a.shape == b.shape and np.array_equal(a, b)


def _same_geometry(sx, sy):
    if sx.is_mesh != sy.is_mesh:
        return False
    if not _arrays_equal(sx.vertices, sy.vertices):
        return False
    if sx.is_mesh:
        return _arrays_equal(sx.geometry.faces, sy.geometry.faces)
    return sx.geometry.knn == sy.geometry.knn


def assemble_problem(shape_x, shape_y, weights=None, k=DEFAULT_CANDIDATES,
                     partial=False, rho=DEFAULT_RHO, wks_energies=100,
                     wks_variance_scale=7.0):
    """Assemble a matching instance (operators, candidates, reductions).

    All heavy precomputation happens here so solves start immediately. When
    the two shapes carry identical geometry and keypoints the per-side
    structures are built once and shared.
    """
    weights = weights or Weights()
    n_x, n_y = len(shape_x.keypoints), len(shape_y.keypoints)
    if not partial and n_x != n_y:
        raise KeypointCountMismatch(
            f"full matching needs equal keypoint counts, got {n_x} and {n_y}"
        )
    if rho < 0:
        raise ValidationError("rho must be nonnegative")

    same = _same_geometry(shape_x, shape_y) and _arrays_equal(
        shape_x.keypoints, shape_y.keypoints
    )

    candidates = prune_candidates(shape_x, shape_y, k=k)

    h_x = h_y = None
    if weights.lambda_ori > 0:
        if shape_x.is_mesh and shape_y.is_mesh:
            ori_x = orientation_field(shape_x, num_energies=wks_energies,
                                      variance_scale=wks_variance_scale)
            ori_y = ori_x if same else orientation_field(
                shape_y, num_energies=wks_energies,
                variance_scale=wks_variance_scale)
            h_x = ori_x.h[shape_x.keypoints]
            h_y = ori_y.h[shape_y.keypoints]
        else:
            warnings.warn(
                "orientation term disabled: point clouds have no oriented normals",
                stacklevel=2,
            )
            weights = Weights(lambda_def=weights.lambda_def, lambda_ori=0.0)

    op_x = build_plbo(shape_x)
    quad_x = build_keypoint_quadratic(op_x.stiffness.matrix, shape_x.vertices,
                                      shape_x.keypoints)
    if same:
        op_y, quad_y = op_x, quad_x
    else:
        op_y = build_plbo(shape_y)
        quad_y = build_keypoint_quadratic(op_y.stiffness.matrix, shape_y.vertices,
                                          shape_y.keypoints)

    return MatchProblem(shape_x, shape_y, weights, candidates, op_x, op_y,
                        quad_x, quad_y, h_x, h_y, partial, rho, k)


# ---------------------------------------------------------------------------
# objective evaluation


def _matched_rows(problem, assignment):
    arr = assignment.target_of_source
    mask = arr != UNMATCHED
    return arr, mask, int(mask.sum())


def eval_rec(problem, assignment, reconstruction):
    """Reconstruction misfit E_rec (both directions, unsquared norms)."""
    problem.validate_assignment(assignment)
    arr, mask, m = _matched_rows(problem, assignment)
    if m == 0:
        return 0.0
    n = m if problem.partial else problem.n_x
    x_hat_i = reconstruction.x_hat[problem.shape_x.keypoints]
    y_hat_j = reconstruction.y_hat[problem.shape_y.keypoints]
    fwd = np.linalg.norm(x_hat_i[mask] - problem.y_keypoints[arr[mask]])
    inv = assignment.inverse(problem.n_y)
    tmask = inv != UNMATCHED
    bwd = np.linalg.norm(y_hat_j[tmask] - problem.x_keypoints[inv[tmask]])
    return fwd / (n * problem.d_y) + bwd / (n * problem.d_x)


def eval_def(problem, reconstruction):
    """Deformation energy E_def (projected-operator seminorms, no weight)."""
    sx = np.linalg.norm(problem.op_x.apply(np.asarray(reconstruction.x_hat, float)))
    sy = np.linalg.norm(problem.op_y.apply(np.asarray(reconstruction.y_hat, float)))
    size_x = len(problem.shape_x.vertices)
    size_y = len(problem.shape_y.vertices)
    return float(sx) / (size_x * problem.d_y) + float(sy) / (size_y * problem.d_x)


def eval_ori(problem, assignment):
    """Orientation misfit E_ori; zero when the term is disabled."""
    problem.validate_assignment(assignment)
    if not problem.orientation_enabled:
        return 0.0
    arr, mask, m = _matched_rows(problem, assignment)
    if m == 0:
        return 0.0
    n = m if problem.partial else problem.n_x
    diff = problem.h_x[mask] - problem.h_y[arr[mask]]
    return float(np.linalg.norm(diff)) / n


def eval_objective(problem, assignment, reconstruction):
    """Full objective value for an assignment and explicit reconstructions."""
    value = (
        eval_rec(problem, assignment, reconstruction)
        + problem.weights.lambda_def * eval_def(problem, reconstruction)
        + problem.weights.lambda_ori * eval_ori(problem, assignment)
    )
    if problem.partial:
        _, mask, m = _matched_rows(problem, assignment)
        value += problem.rho * (problem.n_x + problem.n_y - 2 * m)
    return float(value)


def save_problem(problem, path):
    with open(path, "w") as fh:
        json.dump(problem.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
