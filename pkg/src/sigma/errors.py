"""Exception types shared across the package."""


class SigmaError(Exception):
    """Base class for all package-specific errors."""


class ParseError(SigmaError):
    """A shape or keypoint file could not be parsed.

    Carries the offending path and, when known, the 1-based line number.
    """

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class ValidationError(SigmaError):
    """Loaded data violates a structural invariant (bad index, degenerate face, ...)."""


class DegenerateNormal(SigmaError):
    """A vertex normal could not be computed (incident face normals cancel)."""

    def __init__(self, vertex, message=None):
        self.vertex = int(vertex)
        super().__init__(message or f"degenerate normal at vertex {self.vertex}")


class RankDeficient(SigmaError):
    """Homogeneous coordinates do not span rank 4 (degenerate geometry)."""


class DisconnectedGraph(SigmaError):
    """A point-cloud neighborhood graph has more than one connected component."""


class DisconnectedComponent(SigmaError):
    """A mesh has unreachable vertices where a connected shape is required."""


class ConvergenceError(SigmaError):
    """An iterative numerical routine failed to reach its tolerance."""


class InsufficientSpectrum(SigmaError):
    """Too few eigenpairs requested or available for a spectral descriptor."""


class PointCloudUnsupported(SigmaError):
    """The requested feature needs triangle connectivity."""


class KeypointCountMismatch(SigmaError):
    """Full matching requires equally many keypoints on both shapes."""


class InfeasibleAssignment(SigmaError):
    """An assignment violates injectivity or the candidate sets."""


class NoFeasibleCompletion(SigmaError):
    """No feasible assignment exists under the candidate sets."""


class TooLarge(SigmaError):
    """The instance exceeds an enforced enumeration limit."""


class MissingGroundTruth(SigmaError):
    """An evaluation routine was called without the ground truth it needs."""
