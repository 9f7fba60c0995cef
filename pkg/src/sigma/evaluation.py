"""Evaluation: geodesic keypoint errors, PCK curves, sweeps, and the
reconstruction prior study.

Errors are geodesic distances on the target between predicted and true
target keypoints, normalized by the target diameter; unmatched predictions
score 1.0. The PCK curve reports the fraction of keypoints within each
threshold and its trapezoidal area over the threshold grid.
"""

import csv
import logging
import time
from dataclasses import dataclass

import numpy as np

from .continuous import build_keypoint_quadratic, solve_side
from .errors import MissingGroundTruth, ValidationError
from .geodesics import geodesic_distances
from .meshes import Shape, TriMesh, PointCloud, content_hash
from .model import UNMATCHED, Weights, assemble_problem
from .operators import cotan_stiffness, graph_laplacian
from .solver import SolverConfig, solve

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = 30
DEFAULT_FACTORS = (0.1, 0.5, 1.0, 5.0, 10.0)


def keypoint_errors(prediction, ground_truth, shape_y, diameter=None):
    """Normalized geodesic error per source keypoint.

    Rows whose ground truth is unmatched are skipped (returned as NaN);
    matched rows with an unmatched prediction score 1.0.
    """
    if ground_truth is None:
        raise MissingGroundTruth("keypoint errors need a ground-truth assignment")
    pred = prediction.target_of_source
    true = ground_truth.target_of_source
    if len(pred) != len(true):
        raise ValidationError("prediction and ground truth differ in length")
    d_y = diameter if diameter is not None else shape_y.diameter
    kp = shape_y.keypoints
    errors = np.full(len(pred), np.nan)
    scored = true != UNMATCHED
    gt_vertices = kp[true[scored]]
    table = geodesic_distances(shape_y, np.unique(gt_vertices))
    source_row = {v: r for r, v in enumerate(np.unique(gt_vertices))}
    for i in np.nonzero(scored)[0]:
        if pred[i] == UNMATCHED:
            errors[i] = 1.0
            continue
        row = source_row[kp[true[i]]]
        errors[i] = table.distances[row, kp[pred[i]]] / d_y
    return errors


@dataclass
class PckCurve:
    thresholds: np.ndarray
    fractions: np.ndarray
    auc: float


def pck_curve(errors, thresholds=None):
    """Fraction of scored keypoints within each threshold, plus curve area."""
    errors = np.asarray(errors, dtype=np.float64)
    errors = errors[~np.isnan(errors)]
    if thresholds is None:
        thresholds = np.linspace(0.0, 1.0, DEFAULT_THRESHOLDS)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if errors.size == 0:
        fractions = np.zeros_like(thresholds)
    else:
        fractions = (errors[None, :] <= thresholds[:, None]).mean(axis=1)
    auc = float(np.trapezoid(fractions, thresholds))
    return PckCurve(thresholds=thresholds, fractions=fractions, auc=auc)


@dataclass
class EvalReport:
    errors: np.ndarray
    mean_error: float
    pck: PckCurve
    objective: float
    lower_bound: float
    rel_gap: float
    status: str


def evaluate_solution(solution, ground_truth, shape_y, thresholds=None):
    errors = keypoint_errors(solution.assignment, ground_truth, shape_y)
    scored = errors[~np.isnan(errors)]
    mean_error = float(scored.mean()) if scored.size else np.nan
    return EvalReport(errors=errors, mean_error=mean_error,
                      pck=pck_curve(errors, thresholds),
                      objective=solution.objective,
                      lower_bound=solution.lower_bound,
                      rel_gap=solution.rel_gap, status=solution.status)


# ---------------------------------------------------------------------------
# scale sweep


def _rescaled(shape, factor):
    g = shape.geometry
    if shape.is_mesh:
        geom = TriMesh(g.vertices * factor, g.faces)
    else:
        geom = PointCloud(g.points * factor, knn=g.knn)
    out = Shape(geom, shape.keypoints, label=f"{shape.label}*{factor:g}")
    out.source_path = shape.source_path
    return out


def scale_sweep(shape_x, shape_y, factors=DEFAULT_FACTORS, *, ground_truth=None,
                weights=None, k=None, partial=False, rho=None, config=None):
    """Solve the same pair with the target rescaled by each factor.

    Returns one row per factor with the solve outcome; with ground truth the
    rows also carry the mean error and PCK area. Scale invariance of the
    pipeline shows up as identical assignments and near-identical objective
    values across rows.
    """
    rows = []
    assemble_kwargs = {}
    if weights is not None:
        assemble_kwargs["weights"] = weights
    if k is not None:
        assemble_kwargs["k"] = k
    if rho is not None:
        assemble_kwargs["rho"] = rho
    for factor in factors:
        scaled = _rescaled(shape_y, float(factor))
        problem = assemble_problem(shape_x, scaled, partial=partial,
                                   **assemble_kwargs)
        t0 = time.monotonic()
        solution = solve(problem, config or SolverConfig())
        row = {
            "factor": float(factor),
            "objective": solution.objective,
            "lower_bound": solution.lower_bound,
            "rel_gap": solution.rel_gap,
            "status": solution.status,
            "assignment": solution.assignment.target_of_source.tolist()
            if solution.assignment is not None else None,
            "wall_time_secs": time.monotonic() - t0,
        }
        if ground_truth is not None and solution.assignment is not None:
            report = evaluate_solution(solution, ground_truth, scaled)
            row["mean_error"] = report.mean_error
            row["auc"] = report.pck.auc
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# reconstruction prior study


@dataclass
class StudyResult:
    prior: str
    rms: float
    rms_normalized: float
    x_hat: np.ndarray


def reconstruction_study(shape_x, shape_y, assignment, prior="plbo",
                         weights=None):
    """Reconstruct X toward Y's keypoints under a fixed correspondence.

    prior selects the deformation seminorm: "plbo" (the projected operator,
    blind to pose and scale of the rest geometry) or "lbo" (the raw
    stiffness, which penalizes curvature of the rest pose itself). Requires
    equal vertex counts so the reconstruction can be compared to the target
    vertex for vertex; rms is also reported normalized by the source
    diameter.
    """
    prior = str(prior).lower()
    if prior not in ("plbo", "lbo"):
        raise ValidationError(f"unknown prior {prior!r}; expected plbo or lbo")
    if len(shape_x.vertices) != len(shape_y.vertices):
        raise ValidationError("the study compares vertices pairwise; counts differ")
    weights = weights or Weights()
    g = shape_x.geometry
    stiff = cotan_stiffness(g) if shape_x.is_mesh else graph_laplacian(g)
    quad = build_keypoint_quadratic(stiff.matrix, shape_x.vertices,
                                    shape_x.keypoints,
                                    projected=(prior == "plbo"))
    arr = assignment.target_of_source
    if (arr == UNMATCHED).any():
        raise ValidationError("the study needs a fully matched assignment")
    b = shape_y.vertices[shape_y.keypoints][arr]
    n = len(arr)
    d_y = shape_y.diameter
    a = 1.0 / (n * d_y)
    c = weights.lambda_def / (len(shape_x.vertices) * d_y)
    v = solve_side(quad, b, a, c).v
    x_hat = quad.lift(v)
    rms = float(np.sqrt(np.mean(np.sum((x_hat - shape_y.vertices) ** 2, axis=1))))
    return StudyResult(prior=prior, rms=rms,
                       rms_normalized=rms / shape_x.diameter, x_hat=x_hat)


# ---------------------------------------------------------------------------
# csv output


def _hash_comment(hashes):
    parts = " ".join(f"{k}={v}" for k, v in sorted(hashes.items()))
    return f"# input_hashes: {parts}"


def write_pck_csv(path, curve, hashes=None):
    with open(path, "w", newline="") as fh:
        if hashes:
            fh.write(_hash_comment(hashes) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fraction"])
        for t, f in zip(curve.thresholds, curve.fractions):
            writer.writerow([repr(float(t)), repr(float(f))])
        writer.writerow(["auc", repr(float(curve.auc))])


def write_sweep_csv(path, rows, hashes=None):
    fields = ["factor", "objective", "lower_bound", "rel_gap", "status",
              "wall_time_secs", "mean_error", "auc", "assignment"]
    with open(path, "w", newline="") as fh:
        if hashes:
            fh.write(_hash_comment(hashes) + "\n")
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            record = []
            for name in fields:
                val = row.get(name, "")
                if isinstance(val, float):
                    val = repr(float(val))
                elif isinstance(val, list):
                    val = " ".join(str(x) for x in val)
                record.append(val)
            writer.writerow(record)


def input_hashes(**shapes):
    """Content hashes of the shapes that went into an output file."""
    return {name: content_hash(shape) for name, shape in shapes.items()
            if shape is not None}
