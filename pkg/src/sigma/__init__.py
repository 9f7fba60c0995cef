"""Sparse non-rigid shape matching with certified optimality bounds.

Keypoint correspondences between two shapes are found by minimizing a
reconstruction objective that is invariant to scale and rigid motion of
either input. The deformation prior is a Laplace-Beltrami stiffness form
projected onto the complement of its intrinsic null space, reduced exactly
to the keypoints; the combinatorial search is a branch-and-bound over
injective candidate assignments with dual lower bounds certified at every
node, so any time budget yields a feasible solution and a true gap.
"""

from .continuous import (KeypointQuadratic, build_keypoint_quadratic,
                         side_value, solve_side)
from .errors import (ConvergenceError, InfeasibleAssignment,
                     KeypointCountMismatch, MissingGroundTruth,
                     NoFeasibleCompletion, ParseError, PointCloudUnsupported,
                     SigmaError, TooLarge, ValidationError)
from .evaluation import (EvalReport, PckCurve, evaluate_solution,
                         input_hashes, keypoint_errors, pck_curve,
                         reconstruction_study, scale_sweep)
from .geodesics import (CandidateSet, farthest_point_sample,
                        geodesic_distances, geodesic_histogram,
                        keypoint_histograms, prune_candidates, shape_diameter)
from .lap import certified_lap_bound, solve_lap, solve_lap_max
from .meshes import (PointCloud, Shape, TriMesh, content_hash, load_keypoints,
                     load_shape, save_shape)
from .model import (UNMATCHED, Assignment, MatchProblem, Reconstruction,
                    Weights, assemble_problem, eval_objective)
from .operators import (ProjectedOperator, build_plbo, build_projection,
                        cotan_stiffness, graph_laplacian, mass_matrix)
from .solver import (MatchSolution, SolverConfig, assignment_value,
                     exhaustive_oracle, reconstruct, relative_gap, solve,
                     solve_continuous)
from .spectral import (EigenBasis, default_eigencount, eigenpairs,
                       orientation_field, wks)

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "CandidateSet",
    "ConvergenceError",
    "EigenBasis",
    "EvalReport",
    "InfeasibleAssignment",
    "KeypointCountMismatch",
    "KeypointQuadratic",
    "MatchProblem",
    "MatchSolution",
    "MissingGroundTruth",
    "NoFeasibleCompletion",
    "ParseError",
    "PckCurve",
    "PointCloud",
    "PointCloudUnsupported",
    "ProjectedOperator",
    "Reconstruction",
    "Shape",
    "SigmaError",
    "SolverConfig",
    "TooLarge",
    "TriMesh",
    "UNMATCHED",
    "ValidationError",
    "Weights",
    "assemble_problem",
    "assignment_value",
    "build_keypoint_quadratic",
    "build_plbo",
    "build_projection",
    "certified_lap_bound",
    "content_hash",
    "cotan_stiffness",
    "default_eigencount",
    "eigenpairs",
    "eval_objective",
    "evaluate_solution",
    "exhaustive_oracle",
    "farthest_point_sample",
    "geodesic_distances",
    "geodesic_histogram",
    "graph_laplacian",
    "input_hashes",
    "keypoint_errors",
    "keypoint_histograms",
    "load_keypoints",
    "load_shape",
    "mass_matrix",
    "orientation_field",
    "pck_curve",
    "prune_candidates",
    "reconstruct",
    "reconstruction_study",
    "relative_gap",
    "save_shape",
    "scale_sweep",
    "shape_diameter",
    "side_value",
    "solve",
    "solve_continuous",
    "solve_lap",
    "solve_lap_max",
    "solve_side",
    "wks",
    "__version__",
]
