"""Convex node relaxations and certified lower bounds.

A search node fixes part of the correspondence. Relaxing the remaining
binary variables to the (sub)stochastic polytope leaves a convex program:
a sum of weighted norms of affine maps of (p, V, W), where V and W are the
keypoint values of the two reconstructions. The relaxation is solved with a
primal-dual hybrid gradient scheme, but correctness never depends on its
convergence: any dual iterate is repaired into a feasible point of the
Fenchel dual, whose value

    g(z) = sum_k <z_k, e_k> + min over assignments of sum d_ij(z)

is a true lower bound on every completion of the node. The inner minimum is
a linear assignment problem solved exactly, so bounds are certified, and a
single repaired root state yields valid bounds at all nodes (fixing pairs
only moves terms between the constant and the assignment matrix).
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from .errors import NoFeasibleCompletion
from .lap import certified_lap_bound
from .model import UNMATCHED

log = logging.getLogger(__name__)

UNMATCHED_FIXED = -2  # node committed a source keypoint to stay unmatched
_FREE = -1


def _norm_weights(problem):
    """Ball radii (w1, w2, w3, w4, w5) of the five norm blocks."""
    n = min(problem.n_x, problem.n_y)
    w = problem.weights
    w1 = 1.0 / (n * problem.d_y)
    w2 = 1.0 / (n * problem.d_x)
    w3 = w.lambda_def / (len(problem.shape_x.vertices) * problem.d_y)
    w4 = w.lambda_def / (len(problem.shape_y.vertices) * problem.d_x)
    w5 = w.lambda_ori / n if problem.orientation_enabled else 0.0
    return w1, w2, w3, w4, w5


def free_structure(problem, fixed_to):
    """(free_rows, free_cols, used_cols) of a node."""
    fixed_to = np.asarray(fixed_to)
    free_rows = np.nonzero(fixed_to == _FREE)[0]
    used = fixed_to[fixed_to >= 0]
    col_free = np.ones(problem.n_y, dtype=bool)
    col_free[used] = False
    return free_rows, np.nonzero(col_free)[0], used


@dataclass
class CertificateState:
    """Repaired dual state reusable for bounds at every node."""

    d_matrix: np.ndarray   # (n_x, n_y) assignment costs d_ij(z)
    h_dot: float           # sum_i z5_i h_I[i] (full mode) or 0
    partial: bool
    rho: float
    n_x: int
    n_y: int

    def node_constant(self, fixed_to):
        fixed_to = np.asarray(fixed_to)
        matched = np.nonzero(fixed_to >= 0)[0]
        const = float(self.d_matrix[matched, fixed_to[matched]].sum())
        if self.partial:
            return const + self.rho * (self.n_x + self.n_y)
        return const + self.h_dot


def node_bound(problem, state, fixed_to):
    """Certified lower bound on all completions of a node.

    Returns +inf when the node admits no feasible completion (full mode).
    The bound is clamped at the trivial floor 0 (every objective term is
    nonnegative).
    """
    free_rows, free_cols, _ = free_structure(problem, fixed_to)
    const = state.node_constant(fixed_to)
    if free_rows.size == 0:
        return max(const, 0.0)
    allowed = problem.candidates.mask(problem.n_y)
    sub = np.where(allowed[np.ix_(free_rows, free_cols)],
                   state.d_matrix[np.ix_(free_rows, free_cols)], np.inf)
    if not problem.partial:
        if sub.shape[0] != sub.shape[1]:
            raise NoFeasibleCompletion("free rows and columns are unbalanced")
        try:
            lap = certified_lap_bound(sub)
        except NoFeasibleCompletion:
            return np.inf
        return max(const + lap, 0.0)
    return max(const + _substochastic_min(sub), 0.0)


def _substochastic_min(d):
    """Exact min of sum d_ij p_ij over partial matchings (skips cost 0)."""
    r, c = d.shape
    if r == 0 or c == 0:
        return 0.0
    size = r + c
    pad = np.full((size, size), np.inf)
    pad[:r, :c] = d
    pad[np.arange(r), c + np.arange(r)] = 0.0
    pad[r + np.arange(c), np.arange(c)] = 0.0
    pad[r:, c:] = 0.0
    return certified_lap_bound(pad)


# ---------------------------------------------------------------------------
# the primal-dual solver for one node's relaxation


@dataclass
class RelaxResult:
    bound: float                  # best certified bound seen
    state: CertificateState       # state achieving that bound
    p_matrix: np.ndarray          # relaxed assignment (n_x, n_y) for rounding
    primal_estimate: float        # objective at the (possibly infeasible) iterate
    iterations: int


class NodeRelaxation:
    """PDHG on one node's convex relaxation; the root is the all-free node."""

    def __init__(self, problem, fixed_to=None):
        self.problem = problem
        n_x, n_y = problem.n_x, problem.n_y
        if fixed_to is None:
            fixed_to = np.full(n_x, _FREE, dtype=np.int64)
        self.fixed_to = np.asarray(fixed_to, dtype=np.int64)
        self.free_rows, self.free_cols, _ = free_structure(problem, self.fixed_to)
        col_ok = np.zeros(n_y, dtype=bool)
        col_ok[self.free_cols] = True
        self.pairs = [(int(i), int(j)) for i in self.free_rows
                      for j in problem.candidates.lists[i] if col_ok[j]]
        self.w = _norm_weights(problem)
        self._build()

    def _build(self):
        pr = self.problem
        n_x, n_y, E = pr.n_x, pr.n_y, len(self.pairs)
        X, Y = pr.x_keypoints, pr.y_keypoints
        P = E + 3 * n_x + 3 * n_y
        sV, sW = E, E + 3 * n_x
        k1 = np.zeros((3 * n_x, P))
        k2 = np.zeros((3 * n_y, P))
        k1[:, sV:sV + 3 * n_x] = np.eye(3 * n_x)
        k2[:, sW:] = np.eye(3 * n_y)
        for e, (i, j) in enumerate(self.pairs):
            k1[3 * i:3 * i + 3, e] = -Y[j]
            k2[3 * j:3 * j + 3, e] = -X[i]
        k3 = np.zeros((3 * n_x, P))
        gx = pr.quad_x.eigvecs @ (pr.quad_x.g_diag[:, None] * pr.quad_x.eigvecs.T)
        gy = pr.quad_y.eigvecs @ (pr.quad_y.g_diag[:, None] * pr.quad_y.eigvecs.T)
        k3[:, sV:sV + 3 * n_x] = np.kron(gx, np.eye(3))
        k4 = np.zeros((3 * n_y, P))
        k4[:, sW:] = np.kron(gy, np.eye(3))
        k5 = np.zeros((n_x, P))
        e5 = np.zeros(n_x)
        if pr.orientation_enabled:
            h_i, h_j = pr.h_x, pr.h_y
            for e, (i, j) in enumerate(self.pairs):
                k5[i, e] = (h_i[i] - h_j[j]) if pr.partial else -h_j[j]
            for i, j in enumerate(self.fixed_to):
                if j >= 0:
                    e5[i] = h_i[i] - h_j[j]
                elif j == _FREE and not pr.partial:
                    e5[i] = h_i[i]
        e1 = np.zeros(3 * n_x)
        e2 = np.zeros(3 * n_y)
        inv_fixed = {}
        for i, j in enumerate(self.fixed_to):
            if j >= 0:
                e1[3 * i:3 * i + 3] = -Y[j]
                inv_fixed[j] = i
        for j, i in inv_fixed.items():
            e2[3 * j:3 * j + 3] = -X[i]
        rr = len(self.free_rows)
        cc = len(self.free_cols)
        kr = np.zeros((rr, P))
        kc = np.zeros((cc, P))
        row_pos = {int(i): r for r, i in enumerate(self.free_rows)}
        col_pos = {int(j): c for c, j in enumerate(self.free_cols)}
        for e, (i, j) in enumerate(self.pairs):
            kr[row_pos[i], e] = 1.0
            kc[col_pos[j], e] = 1.0
        self.blocks = [k1, k2, k3, k4, k5, kr, kc]
        self.offsets = np.cumsum([0] + [b.shape[0] for b in self.blocks])
        self.k = np.vstack(self.blocks)
        self.e = [e1, e2, np.zeros(3 * n_x), np.zeros(3 * n_y), e5,
                  -np.ones(rr), -np.ones(cc)]
        norms = [max(np.linalg.norm(b, 2), 1e-12) if b.size else 1.0
                 for b in self.blocks]
        theta = 1.0
        self.sigma = [theta / nm for nm in norms]
        self.tau = 1.0 / (theta * sum(norms))
        self.E = E
        self.linear = np.zeros(P)
        if pr.partial:
            self.linear[:E] = -2.0 * pr.rho

    def _unpack(self, z):
        return [z[self.offsets[b]:self.offsets[b + 1]] for b in range(7)]

    def certificate(self, z):
        """Repair a dual iterate into a feasible point; return its state.

        Balls are enforced by clipping; the free-variable stationarity
        z1 = -Gx z3, z2 = -Gy z4 is restored by recomputing z1, z2 from the
        clipped z3, z4 (scaling the pair down jointly if the image leaves
        its ball), so the state is dual feasible regardless of how little
        the solver has converged.
        """
        pr = self.problem
        n_x, n_y = pr.n_x, pr.n_y
        w1, w2, w3, w4, w5 = self.w
        parts = self._unpack(z)
        z5 = _ball(parts[4], w5)
        if pr.partial:
            h_i = pr.h_x if pr.orientation_enabled else np.zeros(n_x)
            h_j = pr.h_y if pr.orientation_enabled else np.zeros(n_y)
            d = z5[:, None] * (h_i[:, None] - h_j[None, :]) - 2.0 * pr.rho
            return CertificateState(d_matrix=d, h_dot=0.0, partial=True,
                                    rho=pr.rho, n_x=n_x, n_y=n_y)
        z1 = _pair_repair(parts[2].reshape(n_x, 3), pr.quad_x, w3, w1)
        z2 = _pair_repair(parts[3].reshape(n_y, 3), pr.quad_y, w4, w2)
        h_j = pr.h_y if pr.orientation_enabled else np.zeros(n_y)
        h_i = pr.h_x if pr.orientation_enabled else np.zeros(n_x)
        d = (-(z1 @ pr.y_keypoints.T) - (z2 @ pr.x_keypoints.T).T
             - z5[:, None] * h_j[None, :])
        return CertificateState(d_matrix=d, h_dot=float(z5 @ h_i), partial=False,
                                rho=pr.rho, n_x=n_x, n_y=n_y)

    def run(self, max_iters, eps, deadline=None, check_every=25):
        """Iterate PDHG, tracking the best certified bound.

        Stops on the iteration cap, the deadline, or when the certified
        bound improves by less than eps (relative) across a check window.
        """
        pr = self.problem
        n_x, n_y, E = pr.n_x, pr.n_y, self.E
        P = E + 3 * n_x + 3 * n_y
        u = np.zeros(P)
        if E:
            counts = np.bincount([i for i, _ in self.pairs], minlength=n_x)
            for e, (i, _) in enumerate(self.pairs):
                u[e] = 1.0 / max(counts[i], 1)
        u[E:E + 3 * n_x] = pr.x_keypoints.ravel()
        u[E + 3 * n_x:] = pr.y_keypoints.ravel()
        z = np.zeros(self.k.shape[0])
        u_bar = u.copy()
        best_bound = -np.inf
        best_state = self.certificate(z)
        b0 = node_bound(pr, best_state, self.fixed_to)
        if np.isfinite(b0):
            best_bound = b0
        last_check = best_bound
        it = 0
        w_all = list(self.w)
        while it < max_iters:
            it += 1
            ku = self.k @ u_bar
            for b in range(7):
                lo, hi = self.offsets[b], self.offsets[b + 1]
                zb = z[lo:hi] + self.sigma[b] * (ku[lo:hi] + self.e[b])
                if b < 5:
                    z[lo:hi] = _ball(zb, w_all[b])
                elif pr.partial:
                    z[lo:hi] = np.maximum(zb, 0.0)
                else:
                    z[lo:hi] = zb
            u_new = u - self.tau * (self.k.T @ z + self.linear)
            u_new[:E] = np.clip(u_new[:E], 0.0, 1.0)
            u_bar = 2.0 * u_new - u
            u = u_new
            if it % check_every == 0 or it == max_iters:
                state = self.certificate(z)
                bound = node_bound(pr, state, self.fixed_to)
                if np.isfinite(bound) and bound > best_bound:
                    best_bound, best_state = bound, state
                if deadline is not None and time.monotonic() > deadline:
                    break
                if it >= 4 * check_every:
                    scale = max(abs(best_bound), 1e-12)
                    if best_bound - last_check < eps * scale:
                        break
                    last_check = best_bound
        p = np.zeros((n_x, n_y))
        for e, (i, j) in enumerate(self.pairs):
            p[i, j] = u[e]
        for i, j in enumerate(self.fixed_to):
            if j >= 0:
                p[i, j] = 1.0
        primal = self._primal_value(u)
        return RelaxResult(bound=float(best_bound), state=best_state, p_matrix=p,
                           primal_estimate=primal, iterations=it)

    def _primal_value(self, u):
        total = float(self.linear @ u)
        if self.problem.partial:
            total += self.problem.rho * (self.problem.n_x + self.problem.n_y)
        for b in range(5):
            lo, hi = self.offsets[b], self.offsets[b + 1]
            total += self.w[b] * np.linalg.norm(self.blocks[b] @ u + self.e[b])
        return total


def _ball(vec, radius):
    nrm = np.linalg.norm(vec)
    if nrm <= radius or nrm == 0.0:
        return vec.copy()
    return vec * (radius / nrm)


def _pair_repair(z_hi, quad, w_hi, w_lo):
    """Feasible z_lo = -G z_hi from a clipped z_hi (joint rescale if needed)."""
    z_hi = _ball(z_hi, w_hi)
    z_lo = -quad.g_apply(z_hi)
    nrm = np.linalg.norm(z_lo)
    if nrm > w_lo and nrm > 0:
        z_lo = z_lo * (w_lo / nrm)
    return z_lo
