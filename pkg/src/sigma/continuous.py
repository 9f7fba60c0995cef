"""Keypoint reduction of the continuous reconstruction subproblems.

For a fixed correspondence each side of the matching objective is

    a * ||V - B||_F + c * ||A Xhat||_F,    V = Xhat restricted to keypoints,

minimized over full reconstructions Xhat. Partially minimizing
||A Xhat||_F^2 over the non-keypoint rows leaves a PSD quadratic form
v^T Q v in the keypoint values (a generalized Schur complement), so the
side collapses to an n-keypoint problem with seminorm ||G V||_F, G = Q^{1/2}.
Q is built from one sparse bordered KKT factorization per shape (the rank-4
projector pieces enter as borders; the projected operator is never
densified), and the reduced problem is solved exactly through its two-ball
dual by bisection, with closed-form primal recovery.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError

log = logging.getLogger(__name__)

EIG_CLAMP_REL = 1e-12
BISECT_ITERS = 128


def _bordered_kkt(stiff_csr, homog, keypoints, dim):
    """Sparse KKT system for min ||A x||^2 s.t. x[keypoints] = v.

    With the projector Pi = I - Xt Ginv Xt^T and A = Pi S Pi, the normal
    matrix is Pi (S^2 - U Ginv U^T) Pi with U = S Xt; auxiliary 4-vectors
    a1, a2, a3 carry the rank-4 corrections so the system stays sparse.
    Unknown order: [x (dim), a1, a2, a3 (4 each, projected case), lam (n)].
    """
    n = len(keypoints)
    sel = sp.coo_matrix((np.ones(n), (np.arange(n), keypoints)), shape=(n, dim)).tocsr()
    s2 = (stiff_csr @ stiff_csr).tocsr()
    if homog is None:
        blocks = [
            [s2, sel.T],
            [sel, None],
        ]
        return sp.bmat(blocks, format="csc")
    xt = homog  # (dim, 4)
    gram = xt.T @ xt
    u = stiff_csr @ xt
    s2xt = s2 @ xt
    blocks = [
        [s2, sp.csr_matrix(-s2xt), sp.csr_matrix(-u), sp.csr_matrix(-xt), sel.T],
        [sp.csr_matrix(-xt.T), sp.csr_matrix(gram), None, None, None],
        [sp.csr_matrix(-u.T), sp.csr_matrix(u.T @ xt), sp.csr_matrix(gram), None, None],
        [sp.csr_matrix(-s2xt.T), sp.csr_matrix(xt.T @ s2xt), sp.csr_matrix(xt.T @ u),
         sp.csr_matrix(gram), None],
        [sel, None, None, None, None],
    ]
    return sp.bmat(blocks, format="csc")


class _KktSolver:
    """Factorized bordered KKT with an lsqr fallback for singular systems."""

    def __init__(self, matrix, dim, n_constraints, n_aux):
        self.matrix = matrix
        self.dim = dim
        self.n_aux = n_aux
        self.n_constraints = n_constraints
        self._lu = None
        try:
            lu = spla.splu(matrix)
            probe = lu.solve(np.ones(matrix.shape[0]))
            if np.isfinite(probe).all():
                self._lu = lu
        except RuntimeError:
            pass
        if self._lu is None:
            log.warning("bordered KKT is singular; falling back to least-squares solves")

    def solve(self, v):
        """v: (n_constraints, m) keypoint values; returns (x, lam)."""
        m = v.shape[1]
        rhs = np.zeros((self.matrix.shape[0], m))
        rhs[self.dim + self.n_aux :] = v
        if self._lu is not None:
            sol = self._lu.solve(rhs)
        else:
            sol = np.empty((self.matrix.shape[0], m))
            for c in range(m):
                out = spla.lsqr(self.matrix, rhs[:, c], atol=1e-14, btol=1e-14,
                                iter_lim=20 * self.matrix.shape[0])
                sol[:, c] = out[0]
        return sol[: self.dim], sol[self.dim + self.n_aux :]


@dataclass
class TwoBallSolution:
    value: float       # certified optimal value (dual = primal by strong duality)
    v: np.ndarray      # primal minimizer in the original keypoint coordinates


class KeypointQuadratic:
    """Seminorm D(V) = min{ ||A Xhat||_F : Xhat[keypoints] = V } = ||G V||_F.

    Holds the eigendecomposition of Q = G^2 (clamped at 1e-12 of the largest
    eigenvalue, which can only under-estimate the seminorm: safe for lower
    bounds) and the KKT solver that lifts keypoint values to reconstructions.
    """

    def __init__(self, stiff_csr, homog, keypoints, vertices):
        self.keypoints = np.ascontiguousarray(keypoints, dtype=np.int64)
        self.dim = stiff_csr.shape[0]
        self.n = len(self.keypoints)
        self._stiff = stiff_csr
        self._homog = homog
        self._vertices = vertices
        n_aux = 0 if homog is None else 12
        kkt = _bordered_kkt(stiff_csr, homog, self.keypoints, self.dim)
        self._solver = _KktSolver(kkt, self.dim, self.n, n_aux)
        kernel = homog if homog is not None else np.ones((self.dim, 1))
        basis = kernel[self.keypoints]
        if self.n <= basis.shape[1] and np.linalg.matrix_rank(basis) == self.n:
            # every keypoint pattern is exactly interpolable by a kernel
            # field, so the true quadratic is identically zero; the KKT
            # reduction would return nothing but cancellation noise here
            self.q = np.zeros((self.n, self.n))
            vals = np.zeros(self.n)
            vecs = np.eye(self.n)
        else:
            _, lam = self._solver.solve(np.eye(self.n))
            q = -lam
            self.q = 0.5 * (q + q.T)
            vals, vecs = np.linalg.eigh(self.q)
            cutoff = EIG_CLAMP_REL * max(vals.max(), 0.0)
            vals = np.where(vals > cutoff, vals, 0.0)
        self.eigvals = vals
        self.eigvecs = vecs
        self.g_diag = np.sqrt(vals)
        self._restricted = {}

    # -- seminorm / factor applications ------------------------------------

    def seminorm(self, v):
        vt = self.eigvecs.T @ v
        return float(np.sqrt(max((self.eigvals[:, None] * vt * vt).sum(), 0.0)))

    def g_apply(self, m):
        return self.eigvecs @ (self.g_diag[:, None] * (self.eigvecs.T @ m))

    def g_pinv_apply(self, m):
        inv = np.where(self.g_diag > 0, 1.0 / np.where(self.g_diag > 0, self.g_diag, 1.0), 0.0)
        return self.eigvecs @ (inv[:, None] * (self.eigvecs.T @ m))

    def range_project(self, m):
        pos = self.g_diag > 0
        basis = self.eigvecs[:, pos]
        return basis @ (basis.T @ m)

    # -- lifting -----------------------------------------------------------

    def lift(self, v):
        """Full reconstruction attaining the seminorm for keypoint values v."""
        x, _ = self._solver.solve(np.asarray(v, dtype=np.float64))
        return x

    def lift_pattern(self, mask, v):
        """Lift with constraints only on keypoints[mask] = v (partial mode).

        An all-false mask returns the canonical kernel representative: the
        shape's own vertices (zero deformation energy).
        """
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return self._vertices.copy()
        kp = self.keypoints[mask]
        kkt = _bordered_kkt(self._stiff, self._homog, kp, self.dim)
        solver = _KktSolver(kkt, self.dim, len(kp), 0 if self._homog is None else 12)
        x, _ = solver.solve(np.asarray(v, dtype=np.float64))
        return x

    def restricted(self, mask):
        """Quadratic on a keypoint subset: Schur complement of Q (partial mode)."""
        mask = np.asarray(mask, dtype=bool)
        key = int(np.packbits(mask, bitorder="little").tobytes().hex(), 16) if self.n else 0
        if key in self._restricted:
            return self._restricted[key]
        qmm = self.q[np.ix_(mask, mask)]
        qmu = self.q[np.ix_(mask, ~mask)]
        quu = self.q[np.ix_(~mask, ~mask)]
        if quu.size:
            vals, vecs = np.linalg.eigh(quu)
            cut = EIG_CLAMP_REL * max(vals.max(), 0.0)
            inv = np.where(vals > cut, 1.0 / np.where(vals > cut, vals, 1.0), 0.0)
            schur = qmm - qmu @ (vecs @ (inv[:, None] * (vecs.T @ qmu.T)))
        else:
            schur = qmm
        # clamp relative to the parent quadratic: the exact Schur complement
        # is dominated by Q, so anything below that scale is cancellation
        # noise, and an exactly-interpolable pattern must come out as zero
        sub = _SubsetQuadratic(schur, scale=float(self.eigvals.max(initial=0.0)))
        self._restricted[key] = sub
        return sub


class _SubsetQuadratic:
    def __init__(self, q, scale=None):
        self.q = 0.5 * (q + q.T)
        vals, vecs = np.linalg.eigh(self.q)
        top = max(vals.max(), 0.0) if vals.size else 0.0
        cutoff = EIG_CLAMP_REL * (top if scale is None else max(scale, top))
        self.eigvals = np.where(vals > cutoff, vals, 0.0)
        self.eigvecs = vecs
        self.g_diag = np.sqrt(self.eigvals)


def build_keypoint_quadratic(stiffness_matrix, vertices, keypoints, projected=True):
    """Build the reduced deformation quadratic for one shape side.

    projected=False uses the raw stiffness (the plain-operator study variant).
    """
    homog = None
    if projected:
        v = np.asarray(vertices, dtype=np.float64)
        homog = np.column_stack([v, np.ones(len(v))])
    return KeypointQuadratic(stiffness_matrix.tocsr(), homog, keypoints,
                             np.asarray(vertices, dtype=np.float64))


# ---------------------------------------------------------------------------
# the reduced side problem: min_V  a ||V - B||_F + c ||G V||_F


def _two_ball_dual(a, c, g_diag, b_tilde):
    """Maximize <zeta, Lam b_tilde> s.t. ||zeta|| <= c, ||Lam zeta|| <= a.

    Returns (value, zeta, nu, mu) with b = nu zeta + mu Lam^2 zeta at the
    optimum (KKT multipliers drive the closed-form primal recovery).
    """
    lam = g_diag
    b = lam[:, None] * b_tilde
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0 or c == 0.0 or a == 0.0:
        return 0.0, np.zeros_like(b), 0.0, 0.0
    # case: only ||zeta|| <= c active
    zeta = (c / bnorm) * b
    if np.linalg.norm(lam[:, None] * zeta) <= a * (1.0 + 1e-12):
        scale = min(1.0, a / max(np.linalg.norm(lam[:, None] * zeta), 1e-300))
        if scale < 1.0:
            zeta = zeta * scale
        return float((zeta * b).sum()), zeta, bnorm / c, 0.0
    # case: only ||Lam zeta|| <= a active (zeta = Lam^{-2} b / mu on positive rows)
    pos = lam > 0
    binv = np.zeros_like(b)
    binv[pos] = b[pos] / (lam[pos] ** 2)[:, None]
    lam_binv = np.linalg.norm(lam[:, None] * binv)
    zeta_a, mu_a = None, 0.0
    if lam_binv > 0:
        mu_a = lam_binv / a
        zeta_a = binv / mu_a
        if np.linalg.norm(zeta_a) <= c * (1.0 + 1e-12):
            scale = min(1.0, c / max(np.linalg.norm(zeta_a), 1e-300))
            if scale < 1.0:
                zeta_a = zeta_a * scale
            return float((zeta_a * b).sum()), zeta_a, 0.0, mu_a
    # case: both active; bisect on kappa with zeta ~ b / (1 + kappa lam^2)
    b_row = np.linalg.norm(b, axis=1) ** 2
    lam2 = lam**2

    def ratio(kappa):
        gw = b_row / (1.0 + kappa * lam2) ** 2
        total = gw.sum()
        return (lam2 * gw).sum() / total  # ||Lam zeta||^2 / ||zeta||^2

    target = (a / c) ** 2
    lo, hi = 0.0, 1.0
    while np.isfinite(ratio(hi)) and ratio(hi) > target:
        lo = hi
        hi *= 4.0
        if hi > 1e280:
            break
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        r = ratio(mid)
        if np.isfinite(r) and r > target:
            lo = mid
        else:
            hi = mid
    kappa = hi  # feasible side: ratio <= target, so ||Lam zeta|| <= a after scaling
    g = b / (1.0 + kappa * lam2)[:, None]
    gnorm = np.linalg.norm(g)
    if not np.isfinite(gnorm) or gnorm == 0.0:
        if zeta_a is None:
            zeta_a, mu_a = (c / bnorm) * b, 0.0
            lz = np.linalg.norm(lam[:, None] * zeta_a)
            if lz > a:
                zeta_a = zeta_a * (a / lz)
        scale = min(1.0, c / max(np.linalg.norm(zeta_a), 1e-300))
        zeta_a = zeta_a * scale
        return float((zeta_a * b).sum()), zeta_a, 0.0, mu_a
    t = c / gnorm
    zeta = t * g
    lz = np.linalg.norm(lam[:, None] * zeta)
    if lz > a:
        zeta *= a / lz
    nu = 1.0 / t
    mu = kappa / t
    return float((zeta * b).sum()), zeta, nu, mu


def solve_side(quad, b, a, c):
    """Exact minimum of a ||V - B||_F + c ||G V||_F with primal recovery.

    The optimal value comes from the dual (certified); the primal V is
    recovered in closed form from the KKT multipliers and re-checked, with a
    defensive error if the primal-dual match degrades.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        b = b[:, None]
    u = quad.eigvecs
    lam = quad.g_diag
    b_tilde = u.T @ b
    value, zeta, nu, mu = _two_ball_dual(a, c, lam, b_tilde)
    # primal: V~ = B~ - mu * Lam zeta  (mu = r/a; kernel rows stay at B~)
    v_tilde = b_tilde - mu * lam[:, None] * zeta
    v = u @ v_tilde
    primal = a * np.linalg.norm(v - b) + c * np.linalg.norm(lam[:, None] * v_tilde)
    # round-off floor: both sides are noise when the optimum is ~0, so the
    # tolerance is anchored to the data magnitude, not just the value
    data_scale = a * np.linalg.norm(b) + c * np.linalg.norm(lam[:, None] * b_tilde)
    slack = 1e-7 * max(abs(primal), abs(value)) + 1e-9 * data_scale + 1e-30
    if primal - value > slack:
        raise ConvergenceError(
            f"two-ball primal-dual mismatch: primal {primal!r} vs dual {value!r}"
        )
    return TwoBallSolution(value=float(value), v=v)


def side_value(quad, b, a, c):
    """Value-only variant of solve_side (skips primal recovery)."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        b = b[:, None]
    value, _, _, _ = _two_ball_dual(a, c, quad.g_diag, quad.eigvecs.T @ b)
    return float(value)
