"""Spectral features: eigenpairs of the stiffness/mass pencil, the wave
kernel signature built on them, per-vertex field gradients, and the signed
orientation feature that separates reflections from rotations.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, InsufficientSpectrum, PointCloudUnsupported, ValidationError
from .meshes import Shape, TriMesh
from .operators import cotan_stiffness, graph_laplacian, mass_matrix

log = logging.getLogger(__name__)

DENSE_FALLBACK_MAX = 3000
DEFAULT_MAX_EIGENPAIRS = 120


@dataclass
class EigenBasis:
    """Generalized eigenpairs S phi = lambda M phi with phi^T M phi = 1.

    values are ascending; each vector's largest-magnitude entry is positive
    (first index on ties), making recomputation bitwise reproducible.
    """

    values: np.ndarray
    vectors: np.ndarray
    mass: np.ndarray

    @property
    def total_mass(self):
        return float(self.mass.sum())

    @property
    def k(self):
        return len(self.values)


@dataclass
class WksDescriptor:
    values: np.ndarray  # (n_vertices, num_energies)
    energies: np.ndarray
    sigma: float


@dataclass
class OrientationField:
    h: np.ndarray
    f: np.ndarray = field(repr=False, default=None)
    g: np.ndarray = field(repr=False, default=None)


def _fix_signs(vectors):
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _stiffness_for(shape):
    g = shape.geometry
    return cotan_stiffness(g) if isinstance(g, TriMesh) else graph_laplacian(g)


def eigenpairs(shape, k):
    """Lowest k eigenpairs of the stiffness/mass pencil of a shape.

    Uses shift-invert Lanczos with a deterministic start vector, falling back
    to a dense solve for up to 3000 vertices when the iteration fails or the
    residual check (1e-7 times the stiffness norm) does not pass.
    """
    n = shape.geometry.n_vertices
    if not 1 <= k <= n - 1:
        raise InsufficientSpectrum(f"need 1 <= k <= {n - 1}, got {k}")
    stiff = _stiffness_for(shape)
    s = stiff.matrix
    m = mass_matrix(shape.geometry)
    s_norm = spla.norm(s, 1)

    def dense():
        if n > DENSE_FALLBACK_MAX:
            raise ConvergenceError(
                f"eigensolver failed and {n} vertices exceed the dense fallback limit"
            )
        vals, vecs = scipy.linalg.eigh(s.toarray(), np.diag(m))
        return vals[:k], vecs[:, :k]

    if n <= max(4 * k, 200):
        vals, vecs = dense()
    else:
        sigma = -1e-3 * (s.diagonal().sum() / m.sum())
        v0 = np.linspace(1.0, 2.0, n)
        try:
            vals, vecs = spla.eigsh(s, k=k, M=sp.diags(m).tocsc(), sigma=sigma, v0=v0)
        except Exception as exc:  # ARPACK failure modes vary
            log.warning("sparse eigensolver failed (%s); dense fallback", exc)
            vals, vecs = dense()
        else:
            resid = np.linalg.norm(s @ vecs - (m[:, None] * vecs) * vals, axis=0)
            if (resid > 1e-7 * s_norm).any():
                log.warning("eigen residual %.3e too large; dense fallback", resid.max())
                vals, vecs = dense()
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    # M-normalize then pin signs
    scale = np.sqrt(np.einsum("ij,i,ij->j", vecs, m, vecs))
    vecs = _fix_signs(vecs / scale)
    resid = np.linalg.norm(s @ vecs - (m[:, None] * vecs) * vals, axis=0)
    if (resid > 1e-7 * max(s_norm, 1e-30)).any():
        raise ConvergenceError(f"eigen residual {resid.max():.3e} exceeds 1e-7 * |S|")
    return EigenBasis(values=vals, vectors=vecs, mass=m)


def default_eigencount(n_vertices):
    return int(min(n_vertices - 2, DEFAULT_MAX_EIGENPAIRS))


def wks(basis, num_energies=100, variance_scale=7.0):
    """Wave kernel signature on an eigenbasis.

    Eigenvalues are normalized by the first positive one, energies sample
    [log 1, log lambda_max] uniformly, and the Gaussian bandwidth is
    variance_scale times the energy step. Squared amplitudes are multiplied
    by the total mass, which makes the descriptor invariant to global
    scaling of the shape.
    """
    if num_energies < 2:
        raise ValidationError(f"need at least 2 energies, got {num_energies}")
    lam = basis.values
    tol = 1e-10 * max(lam.max(), 0.0)
    pos = lam > tol
    if basis.k < 3 or pos.sum() < 2:
        raise InsufficientSpectrum("wave kernel signature needs at least 3 eigenpairs "
                                   "with 2 positive eigenvalues")
    lam_pos = lam[pos]
    log_lam = np.log(lam_pos / lam_pos[0])
    energies = np.linspace(log_lam[0], log_lam[-1], num_energies)
    sigma = variance_scale * (energies[1] - energies[0])
    if sigma <= 0:
        raise ValidationError("degenerate energy grid (all eigenvalues equal?)")
    weights = np.exp(-((energies[None, :] - log_lam[:, None]) ** 2) / (2.0 * sigma**2))
    amplitudes = basis.total_mass * basis.vectors[:, pos] ** 2
    desc = (amplitudes @ weights) / weights.sum(axis=0)
    return WksDescriptor(values=desc, energies=energies, sigma=float(sigma))


def vertex_gradient(mesh, fld):
    """Unit per-vertex gradient of a piecewise-linear scalar field.

    Face gradients are averaged into vertices with area weights and then
    normalized; vertices whose averaged gradient is below 1e-10 get zero.
    """
    if not isinstance(mesh, TriMesh):
        raise PointCloudUnsupported("gradients need triangle connectivity")
    fld = np.asarray(fld, dtype=np.float64).ravel()
    if len(fld) != mesh.n_vertices:
        raise ValidationError("field length does not match vertex count")
    v, f = mesh.vertices, mesh.faces
    normals = mesh.face_normals
    areas = mesh.face_areas
    acc = (
        fld[f[:, 0], None] * (v[f[:, 2]] - v[f[:, 1]])
        + fld[f[:, 1], None] * (v[f[:, 0]] - v[f[:, 2]])
        + fld[f[:, 2], None] * (v[f[:, 1]] - v[f[:, 0]])
    )
    face_grad = np.cross(normals, acc) / (2.0 * areas[:, None])
    out = np.zeros_like(v)
    w = areas[:, None] * face_grad
    for c in range(3):
        np.add.at(out, f[:, c], w)
    norms = np.linalg.norm(out, axis=1)
    small = norms < 1e-10
    norms[small] = 1.0
    out /= norms[:, None]
    out[small] = 0.0
    return out


def orientation_field(shape, f=None, g=None, *, num_energies=100, variance_scale=7.0,
                      f_column=None, g_column=None, k=None):
    """Signed triple product h_i = <grad f x grad g, n_i> per vertex.

    With unit gradients and unit normals every entry lies in [-1, 1]; the
    field is invariant to rotations and negated by reflections. Defaults take
    f and g as wave-kernel-signature energy columns 0 and 69 on the reference
    100-energy grid, scaled proportionally for other grid sizes.
    """
    if not shape.is_mesh:
        raise PointCloudUnsupported("orientation features need triangle connectivity")
    mesh = shape.geometry
    if f is None or g is None:
        if k is None:
            k = default_eigencount(mesh.n_vertices)
        basis = eigenpairs(shape, k)
        desc = wks(basis, num_energies=num_energies, variance_scale=variance_scale)
        ncols = desc.values.shape[1]
        if f_column is None:
            f_column = 0
        if g_column is None:
            g_column = int(round(69 / 99 * (ncols - 1)))
        if max(f_column, g_column) >= ncols:
            raise ValidationError("descriptor columns out of range")
        f = desc.values[:, f_column] if f is None else f
        g = desc.values[:, g_column] if g is None else g
    gf = vertex_gradient(mesh, f)
    gg = vertex_gradient(mesh, g)
    h = np.einsum("ij,ij->i", np.cross(gf, gg), mesh.vertex_normals)
    return OrientationField(h=np.clip(h, -1.0, 1.0), f=np.asarray(f), g=np.asarray(g))
