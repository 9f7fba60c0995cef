"""Geodesic distances, shape diameters, distance histograms, and the
histogram-based candidate pruning that sparsifies the matching problem.

Meshes use Dijkstra on the edge graph with Euclidean edge lengths; point
clouds use plain Euclidean distances throughout.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

log = logging.getLogger(__name__)

EXACT_DIAMETER_MAX = 5000
APPROX_DIAMETER_SOURCES = 64
DEFAULT_BINS = 32
DEFAULT_CANDIDATES = 11
EDGE_SNAP_REL = 1e-9


@dataclass
class GeodesicTable:
    """Distances from a set of source vertices to every vertex.

    metric is "geodesic" (mesh edge graph) or "euclidean" (point clouds).
    Unreachable vertices hold +inf.
    """

    sources: np.ndarray
    distances: np.ndarray  # (len(sources), n_vertices)
    metric: str


@dataclass
class DiameterResult:
    value: float
    exact: bool


@dataclass
class CandidateSet:
    """Per-source-keypoint candidate target keypoint indices (positions into
    the target keypoint list), each stored in ascending index order."""

    lists: list

    def __iter__(self):
        return iter(self.lists)

    def __len__(self):
        return len(self.lists)

    def __getitem__(self, i):
        return self.lists[i]

    def allowed_pairs(self):
        return [(i, int(j)) for i, lst in enumerate(self.lists) for j in lst]

    def mask(self, n_targets):
        """Boolean (n_sources, n_targets) allowed-pair matrix."""
        m = np.zeros((len(self.lists), n_targets), dtype=bool)
        for i, lst in enumerate(self.lists):
            m[i, lst] = True
        return m


def _edge_graph(shape):
    if shape._adjacency is None:
        mesh = shape.geometry
        e = mesh.edges()
        lengths = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
        n = mesh.n_vertices
        adj = sp.coo_matrix((lengths, (e[:, 0], e[:, 1])), shape=(n, n))
        shape._adjacency = (adj + adj.T).tocsr()
    return shape._adjacency


def geodesic_distances(shape, sources):
    """Distances from the given vertex indices to all vertices of the shape."""
    sources = np.ascontiguousarray(sources, dtype=np.int64).ravel()
    n = shape.geometry.n_vertices
    if sources.size == 0:
        raise ValueError("no source vertices given")
    if sources.min() < 0 or sources.max() >= n:
        raise ValueError(f"source index out of range [0, {n})")
    if shape.is_mesh:
        dist = dijkstra(_edge_graph(shape), directed=False, indices=sources)
        if np.isinf(dist).any():
            warnings.warn("mesh has unreachable vertices; their distances are +inf",
                          stacklevel=2)
        metric = "geodesic"
    else:
        pts = shape.vertices
        dist = np.linalg.norm(pts[sources][:, None, :] - pts[None, :, :], axis=2)
        metric = "euclidean"
    return GeodesicTable(sources=sources, distances=dist, metric=metric)


def shape_diameter(shape):
    """Largest finite vertex-to-vertex distance.

    Exact all-pairs up to 5000 vertices; beyond that the maximum over 64
    farthest-point-sampled sources, flagged approximate.
    """
    n = shape.geometry.n_vertices
    exact = n <= EXACT_DIAMETER_MAX
    if exact:
        sources = np.arange(n)
    else:
        sources = farthest_point_sample(shape, APPROX_DIAMETER_SOURCES)
        log.info("diameter approximated from %d sources", len(sources))
    best = 0.0
    for chunk in np.array_split(sources, max(1, len(sources) // 256)):
        d = geodesic_distances(shape, chunk).distances
        finite = d[np.isfinite(d)]
        if finite.size:
            best = max(best, float(finite.max()))
    if best <= 0.0:
        raise ValueError("shape diameter is zero; degenerate geometry")
    return DiameterResult(value=best, exact=exact)


def _binned(finite, bins, diameter):
    # distances normalized by the diameter, with values within 1e-9 of a bin
    # edge snapped onto it so that round-off from rescaling or rigid motion
    # cannot flip a bin assignment
    x = finite / diameter
    edges = np.linspace(0.0, 1.0, bins + 1)
    nearest = np.clip(np.round(x * bins).astype(np.int64), 0, bins)
    snap = np.abs(x - edges[nearest]) <= EDGE_SNAP_REL
    x = np.where(snap, edges[nearest], x)
    counts, _ = np.histogram(x, bins=bins, range=(0.0, 1.0))
    return counts


def geodesic_histogram(shape, keypoint, bins=DEFAULT_BINS, diameter=None):
    """Normalized histogram of distances from one keypoint to all vertices.

    Equal-width bins over [0, diameter]; entries sum to 1. Unreachable
    vertices are excluded (with a warning from the distance pass).
    """
    if diameter is None:
        diameter = shape.diameter
    d = geodesic_distances(shape, [int(keypoint)]).distances[0]
    finite = d[np.isfinite(d)]
    counts = _binned(finite, bins, diameter)
    total = counts.sum()
    if total == 0:
        raise ValueError("no finite distances from keypoint")
    return counts / total


def keypoint_histograms(shape, bins=DEFAULT_BINS):
    diam = shape.diameter
    table = geodesic_distances(shape, shape.keypoints)
    out = np.empty((shape.n_keypoints, bins))
    for i, row in enumerate(table.distances):
        finite = row[np.isfinite(row)]
        counts = _binned(finite, bins, diam)
        out[i] = counts / counts.sum()
    return out


def prune_candidates(source_shape, target_shape, k=DEFAULT_CANDIDATES, bins=DEFAULT_BINS):
    """Candidate target keypoints per source keypoint.

    Ranks target keypoints by the L1 distance between normalized distance
    histograms and keeps the k smallest, ties broken by ascending index.
    Histograms are normalized by each shape's own diameter, so candidates are
    invariant to scaling and rigid motion of either shape.
    """
    hx = keypoint_histograms(source_shape, bins=bins)
    hy = keypoint_histograms(target_shape, bins=bins)
    k_eff = min(k, len(hy))
    lists = []
    for row in hx:
        l1 = np.abs(hy - row[None, :]).sum(axis=1)
        order = np.lexsort((np.arange(len(l1)), l1))
        lists.append(np.sort(order[:k_eff]))
    return CandidateSet(lists=lists)


def farthest_point_sample(shape, count, start=0):
    """Greedy farthest-point sampling; deterministic for a fixed start."""
    n = shape.geometry.n_vertices
    count = min(count, n)
    chosen = [int(start)]
    best = geodesic_distances(shape, [start]).distances[0]
    best[~np.isfinite(best)] = -1.0  # never pick unreachable vertices
    for _ in range(count - 1):
        nxt = int(np.argmax(best))
        chosen.append(nxt)
        d = geodesic_distances(shape, [nxt]).distances[0]
        d[~np.isfinite(d)] = -1.0
        best = np.minimum(best, d)
    return np.array(chosen, dtype=np.int64)
