"""Discrete differential operators: cotangent stiffness, graph Laplacians,
lumped mass, and the projected operator whose null space absorbs similarity
transforms of the shape.

The projection Pi = I - Xt (Xt^T Xt)^{-1} Xt^T (Xt the homogeneous vertex
coordinates) is never materialized; it is applied as identity minus a rank-4
correction, and the projected operator Pi^T S Pi is kept factored.
"""

import logging

import numpy as np
import scipy.sparse as sp

from .errors import DisconnectedGraph, RankDeficient, ValidationError
from .meshes import PointCloud, Shape, TriMesh

log = logging.getLogger(__name__)

COT_CLAMP = 1e6


class StiffnessMatrix:
    """Symmetric positive semidefinite stiffness operator.

    Off-diagonal entries are non-positive edge weights; each diagonal entry is
    minus its row's off-diagonal sum, so rows sum to zero and constants are in
    the kernel by construction.
    """

    def __init__(self, matrix, clamp_count=0):
        self.matrix = matrix.tocsr()
        self.clamp_count = int(clamp_count)
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValidationError("stiffness matrix must be square")

    @property
    def dim(self):
        return self.matrix.shape[0]

    def apply(self, arr):
        return self.matrix @ arr

    def dump_coo(self, path):
        """Write a plain-text COO listing: row col value, one entry per line."""
        coo = self.matrix.tocoo()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {self.dim} {self.dim} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {float(v)!r}\n")
        return path


def _assemble_from_edge_weights(n, rows, cols, weights):
    # symmetric off-diagonal part, negative weights; diagonal = -row sums
    w = np.asarray(weights, dtype=np.float64)
    off = sp.coo_matrix((-w, (rows, cols)), shape=(n, n))
    off = off + off.T
    off = off.tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def cotan_stiffness(mesh, clamp=COT_CLAMP):
    """Cotangent-weight stiffness matrix of a triangle mesh.

    Each interior edge (i, j) gets weight (cot a + cot b) / 2 over the one or
    two incident triangles; cotangents are clamped to +-1e6 and clamp events
    are counted on the result.
    """
    if not isinstance(mesh, TriMesh):
        raise ValidationError("cotan_stiffness needs a TriMesh")
    v, f = mesh.vertices, mesh.faces
    n = len(v)
    rows, cols, halves = [], [], []
    clamp_count = 0
    # angle at corner c is opposite edge (a, b)
    for c, a, b in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        e1 = v[f[:, a]] - v[f[:, c]]
        e2 = v[f[:, b]] - v[f[:, c]]
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        cot = np.einsum("ij,ij->i", e1, e2) / cross
        clamped = np.clip(cot, -clamp, clamp)
        clamp_count += int((clamped != cot).sum())
        rows.append(f[:, a])
        cols.append(f[:, b])
        halves.append(0.5 * clamped)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    halves = np.concatenate(halves)
    if clamp_count:
        log.warning("clamped %d cotangents to +-%g", clamp_count, clamp)
    return StiffnessMatrix(_assemble_from_edge_weights(n, rows, cols, halves), clamp_count)


def graph_laplacian(cloud, heat_weights=False, heat_scale=None):
    """Combinatorial Laplacian of the symmetrized kNN graph of a point cloud.

    Edge weights are 1 by default; heat-kernel weights exp(-d^2 / scale) are
    available behind a flag. Raises DisconnectedGraph when the symmetrized
    graph has more than one component.
    """
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree

    if not isinstance(cloud, PointCloud):
        raise ValidationError("graph_laplacian needs a PointCloud")
    pts = cloud.points
    n = len(pts)
    k = min(cloud.knn, n - 1)
    if k < 1:
        raise ValidationError("point cloud too small for a neighbor graph")
    tree = cKDTree(pts)
    dist, idx = tree.query(pts, k=k + 1)
    dist, idx = dist[:, 1:], idx[:, 1:]  # drop self matches
    rows = np.repeat(np.arange(n), k)
    cols = idx.ravel()
    if heat_weights:
        scale = heat_scale if heat_scale is not None else np.median(dist) ** 2
        w = np.exp(-(dist.ravel() ** 2) / scale)
    else:
        w = np.ones(n * k)
    adj = sp.coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    adj = adj.maximum(adj.T)  # symmetrize, keep single weight per edge
    ncomp, _ = connected_components(adj, directed=False)
    if ncomp != 1:
        raise DisconnectedGraph(f"kNN graph has {ncomp} components; increase knn")
    diag = np.asarray(adj.sum(axis=1)).ravel()
    return StiffnessMatrix((sp.diags(diag) - adj).tocsr())


def mass_matrix(shape_or_geometry):
    """Diagonal (lumped) mass weights as a 1-D array.

    Meshes: one third of incident face areas per vertex (entries sum to the
    surface area). Point clouds: uniform unit weights.
    """
    g = shape_or_geometry.geometry if isinstance(shape_or_geometry, Shape) else shape_or_geometry
    if isinstance(g, TriMesh):
        m = np.zeros(g.n_vertices)
        per_face = g.face_areas / 3.0
        for c in range(3):
            np.add.at(m, g.faces[:, c], per_face)
        return m
    return np.ones(g.n_vertices)


class Projection:
    """Orthogonal projector onto the complement of the homogeneous coordinates.

    Stored factored: apply(v) = v - Xt @ (Ginv @ (Xt^T v)). The projector is
    invariant under any invertible reparameterization of the homogeneous
    columns, which is what makes the projected operator blind to rigid
    motions and global scaling of the shape.
    """

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=np.float64)
        self.homog = np.column_stack([v, np.ones(len(v))])
        gram = self.homog.T @ self.homog
        # rank check on the 4x4 Gram matrix; collinear/coplanar inputs fail
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e14:
            raise RankDeficient(
                f"homogeneous coordinates are rank deficient (gram cond {cond:.2e})"
            )
        self.gram_inv = np.linalg.inv(gram)

    def apply(self, arr):
        return arr - self.homog @ (self.gram_inv @ (self.homog.T @ arr))


class ProjectedOperator:
    """Factored projected stiffness Pi^T S Pi.

    Application to an (n, m) block costs one sparse multiply plus two rank-4
    corrections; the dense operator is never formed.
    """

    def __init__(self, stiffness, projection):
        self.stiffness = stiffness
        self.projection = projection

    @property
    def dim(self):
        return self.stiffness.dim

    def apply(self, arr):
        squeeze = arr.ndim == 1
        a = arr[:, None] if squeeze else arr
        out = self.projection.apply(self.stiffness.apply(self.projection.apply(a)))
        return out[:, 0] if squeeze else out


def build_projection(vertices):
    return Projection(vertices)


def build_plbo(shape):
    """Projected operator for a Shape: cotangent stiffness for meshes, kNN
    graph Laplacian for point clouds, both wrapped by the vertex projector."""
    g = shape.geometry
    stiff = cotan_stiffness(g) if isinstance(g, TriMesh) else graph_laplacian(g)
    return ProjectedOperator(stiff, build_projection(g.vertices))
