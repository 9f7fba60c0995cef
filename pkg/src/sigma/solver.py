"""Branch and bound over keypoint assignments with certified bounds.

Nodes fix a growing subset of the correspondence; the remaining freedom is
bounded below by the certified dual bounds of relaxation.py and above by
exact evaluations of completed assignments (each evaluation solves its
continuous reconstruction subproblem to optimality through the two-ball
dual, so incumbents are exact). Best-first search with deterministic
tie-breaking: nodes pop by (bound, insertion order), branching picks the
unfixed source keypoint with the fewest remaining candidates, children are
visited in ascending target order, and subtrees with few enough completions
are enumerated outright. Optimality claims therefore never rest on the
iterative relaxation: pruning compares exact incumbents against certified
bounds only.
"""

import heapq
import itertools
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .continuous import solve_side, side_value
from .errors import NoFeasibleCompletion, TooLarge, ValidationError
from .lap import solve_lap, solve_lap_max
from .model import UNMATCHED, Assignment, Reconstruction, eval_objective
from .relaxation import (UNMATCHED_FIXED, NodeRelaxation, free_structure,
                         node_bound)

log = logging.getLogger(__name__)

_FREE = -1
GAP_ZERO_TOL = 1e-12

STATUS_OPTIMAL = "Optimal"
STATUS_TIME = "TimeBudgetExceeded"
STATUS_INFEASIBLE = "Infeasible"


@dataclass
class SolverConfig:
    """Search controls; defaults match the reference setting."""

    time_budget_secs: float = 3600.0
    gap_threshold: float = 1e-2
    eps_continuous: float = 1e-6
    workers: int = 1
    seed: int = 0
    enumerate_limit: int = 256
    root_iterations: int = 3000
    node_iterations: int = 0
    checkpoint_every: int = 500
    checkpoint_path: str = None

    def __post_init__(self):
        if self.time_budget_secs < 0:
            raise ValidationError("time budget must be nonnegative")
        if not 0 <= self.gap_threshold < 1:
            raise ValidationError("gap threshold must lie in [0, 1)")
        if self.eps_continuous <= 0:
            raise ValidationError("eps_continuous must be positive")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.workers > 1:
            log.warning("workers > 1 requested; the search runs serially "
                        "(deterministic single-worker implementation)")


@dataclass
class MatchSolution:
    assignment: Assignment
    reconstruction: Reconstruction
    objective: float
    lower_bound: float
    rel_gap: float
    status: str
    stats: dict = field(default_factory=dict)


def relative_gap(upper, lower):
    """|upper - lower| / |upper|, with the all-but-converged case pinned to 0.

    When both |upper| and |upper - lower| are below 1e-12 the instance is
    solved to machine precision and the gap reports exactly 0.
    """
    diff = abs(upper - lower)
    if abs(upper) <= GAP_ZERO_TOL and diff <= GAP_ZERO_TOL:
        return 0.0
    if upper == 0.0:
        return np.inf
    return diff / abs(upper)


# ---------------------------------------------------------------------------
# exact evaluation of a completed assignment


def _side_terms(problem, assignment):
    """((quad, B, a, c) per side, mask data) for the reduced side solves."""
    arr = assignment.target_of_source
    mask = arr != UNMATCHED
    m = int(mask.sum())
    w = problem.weights
    size_x = len(problem.shape_x.vertices)
    size_y = len(problem.shape_y.vertices)
    c1 = w.lambda_def / (size_x * problem.d_y)
    c2 = w.lambda_def / (size_y * problem.d_x)
    if not problem.partial:
        n = problem.n_x
        bx = problem.y_keypoints[arr]
        by = problem.x_keypoints[assignment.inverse(problem.n_y)]
        return ((problem.quad_x, bx, 1.0 / (n * problem.d_y), c1),
                (problem.quad_y, by, 1.0 / (n * problem.d_x), c2)), (arr, mask, m)
    if m == 0:
        return None, (arr, mask, 0)
    inv = assignment.inverse(problem.n_y)
    tmask = inv != UNMATCHED
    qx = problem.quad_x.restricted(mask)
    qy = problem.quad_y.restricted(tmask)
    bx = problem.y_keypoints[arr[mask]]
    by = problem.x_keypoints[inv[tmask]]
    return ((qx, bx, 1.0 / (m * problem.d_y), c1),
            (qy, by, 1.0 / (m * problem.d_x), c2)), (arr, mask, m)


def assignment_value(problem, assignment):
    """Exact objective of an assignment, minimized over reconstructions."""
    problem.validate_assignment(assignment)
    sides, (arr, mask, m) = _side_terms(problem, assignment)
    total = 0.0
    if problem.partial:
        total += problem.rho * (problem.n_x + problem.n_y - 2 * m)
    if sides is None:
        return total
    for quad, b, a, c in sides:
        total += side_value(quad, b, a, c)
    if problem.orientation_enabled and m:
        n = m if problem.partial else problem.n_x
        diff = problem.h_x[mask] - problem.h_y[arr[mask]]
        total += problem.weights.lambda_ori * np.linalg.norm(diff) / n
    return float(total)


def reconstruct(problem, assignment):
    """Optimal reconstructions for a fixed assignment, lifted to all vertices."""
    problem.validate_assignment(assignment)
    sides, (arr, mask, m) = _side_terms(problem, assignment)
    if sides is None:  # nothing matched: zero deformation representatives
        return Reconstruction(x_hat=problem.shape_x.vertices.copy(),
                              y_hat=problem.shape_y.vertices.copy())
    (qx, bx, ax, cx), (qy, by, ay, cy) = sides
    vx = solve_side(qx, bx, ax, cx).v
    vy = solve_side(qy, by, ay, cy).v
    if not problem.partial:
        return Reconstruction(x_hat=problem.quad_x.lift(vx),
                              y_hat=problem.quad_y.lift(vy))
    inv = assignment.inverse(problem.n_y)
    tmask = inv != UNMATCHED
    return Reconstruction(x_hat=problem.quad_x.lift_pattern(mask, vx),
                          y_hat=problem.quad_y.lift_pattern(tmask, vy))


@dataclass
class ContinuousResult:
    value: float
    lower_bound: float
    reconstruction: Reconstruction
    p_matrix: np.ndarray
    iterations: int


def solve_continuous(problem, assignment=None, *, max_iters=3000, eps=1e-6,
                     time_budget_secs=None):
    """Continuous subproblem solve.

    With an assignment: the exact reconstruction optimum for that fixed
    correspondence (value == lower_bound up to the duality tolerance).
    Without: the root convex relaxation with a certified lower bound and the
    relaxed assignment matrix for rounding.
    """
    if assignment is not None:
        problem.validate_assignment(assignment)
        value = assignment_value(problem, assignment)
        recon = reconstruct(problem, assignment)
        p = assignment.as_matrix(problem.n_y)
        return ContinuousResult(value=value, lower_bound=value,
                                reconstruction=recon, p_matrix=p, iterations=0)
    deadline = None if time_budget_secs is None else time.monotonic() + time_budget_secs
    relax = NodeRelaxation(problem)
    res = relax.run(max_iters, eps, deadline=deadline)
    rounded = round_to_assignment(res.p_matrix, problem)
    recon = reconstruct(problem, rounded)
    return ContinuousResult(value=res.primal_estimate, lower_bound=res.bound,
                            reconstruction=recon, p_matrix=res.p_matrix,
                            iterations=res.iterations)


def round_to_assignment(p_matrix, problem):
    """Round a relaxed assignment matrix to a feasible assignment.

    Full mode: maximum-weight perfect matching over allowed pairs. Partial
    mode: maximum-weight partial matching (skipping has weight 0). Ties
    break deterministically toward ascending indices, so a constant matrix
    rounds to the identity.
    """
    p = np.asarray(p_matrix, dtype=np.float64)
    allowed = problem.candidates.mask(problem.n_y)
    if not problem.partial:
        weight = np.where(allowed, p, -np.inf)
        cols, _ = solve_lap_max(weight)
        return Assignment(cols)
    r, c = p.shape
    pad = np.full((r + c, r + c), np.inf)
    pad[:r, :c] = np.where(allowed, -p, np.inf)
    pad[np.arange(r), c + np.arange(r)] = 0.0
    pad[r + np.arange(c), np.arange(c)] = 0.0
    pad[r:, c:] = 0.0
    cols, _, _, _ = solve_lap(pad)
    out = np.full(r, UNMATCHED, dtype=np.int64)
    real = cols[:r] < c
    out[real] = cols[:r][real]
    return Assignment(out)


# ---------------------------------------------------------------------------
# search


def _initial_incumbent(problem):
    """A feasible assignment before any search runs (or None in partial mode
    fallback where the empty assignment is used). Raises NoFeasibleCompletion
    when a full-mode instance has no feasible assignment at all."""
    allowed = problem.candidates.mask(problem.n_y)
    if not problem.partial:
        weight = np.where(allowed, 1.0, -np.inf)
        cols, _ = solve_lap_max(weight)
        return Assignment(cols)
    try:
        return round_to_assignment(allowed.astype(float), problem)
    except NoFeasibleCompletion:
        return Assignment(np.full(problem.n_x, UNMATCHED, dtype=np.int64))


def _remaining_counts(problem, fixed_to):
    free_rows, free_cols, _ = free_structure(problem, fixed_to)
    col_ok = np.zeros(problem.n_y, dtype=bool)
    col_ok[free_cols] = True
    return free_rows, [problem.candidates.lists[i][col_ok[problem.candidates.lists[i]]]
                       for i in free_rows]


def _completion_estimate(problem, counts):
    total = 1.0
    for lst in counts:
        total *= len(lst) + (1 if problem.partial else 0)
        if total > 1e18:
            return total
    return total


def _enumerate_completions(problem, fixed_to, counts_rows, counts, visit, deadline,
                           by_index=False):
    """DFS over all completions of a node; calls visit(assignment_array).

    Rows are visited fewest-candidates-first (or in ascending index order
    for the oracle), targets in ascending order: fully deterministic.
    """
    if by_index:
        order = np.arange(len(counts))
    else:
        order = np.argsort([len(c) for c in counts], kind="stable")
    rows = [counts_rows[k] for k in order]
    lists = [counts[k] for k in order]
    base = fixed_to.copy()
    used = np.zeros(problem.n_y, dtype=bool)
    used[base[base >= 0]] = True
    ticker = itertools.count()

    def rec(depth):
        if deadline is not None and next(ticker) % 64 == 0:
            if time.monotonic() > deadline:
                raise TimeoutError
        if depth == len(rows):
            visit(base.copy())
            return
        i = rows[depth]
        for j in lists[depth]:
            if not used[j]:
                base[i], used[j] = j, True
                rec(depth + 1)
                base[i], used[j] = _FREE, False
        if problem.partial:
            base[i] = UNMATCHED_FIXED
            rec(depth + 1)
            base[i] = _FREE

    rec(0)


def _to_assignment(fixed_to):
    arr = np.where(np.asarray(fixed_to) == UNMATCHED_FIXED, UNMATCHED, fixed_to)
    return Assignment(arr)


class _Trace:
    def __init__(self, path):
        self.records = []
        self._fh = open(path, "w") if path else None
        self.t0 = time.monotonic()

    def emit(self, upper, lower, nodes):
        rec = {"t_secs": time.monotonic() - self.t0,
               "upper": float(upper),
               "lower": float(lower),
               "gap": relative_gap(upper, lower),
               "nodes": int(nodes)}
        self.records.append(rec)
        if self._fh:
            self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()


def solve(problem, config=None):
    """Branch-and-bound solve of a matching instance.

    Returns the best assignment found with a certified lower bound; the
    status reports Optimal (gap closed below the threshold), Infeasible
    (full mode with no assignment satisfying the candidate sets), or
    TimeBudgetExceeded (best incumbent plus the bound reached in time).
    """
    config = config or SolverConfig()
    t0 = time.monotonic()
    deadline = t0 + config.time_budget_secs
    trace = _Trace(config.checkpoint_path)
    stats = {"nodes_expanded": 0, "leaves_evaluated": 0, "nodes_pruned": 0,
             "root_iterations": 0}

    def finish(assignment, upper, lower, status):
        recon = reconstruct(problem, assignment)
        lower = min(max(lower, 0.0), upper)
        trace.emit(upper, lower, stats["nodes_expanded"])
        trace.close()
        stats["wall_time_secs"] = time.monotonic() - t0
        stats["trace"] = trace.records
        return MatchSolution(assignment=assignment, reconstruction=recon,
                             objective=float(upper), lower_bound=float(lower),
                             rel_gap=relative_gap(upper, lower), status=status,
                             stats=stats)

    # cheap incumbent before any budget check, so even a zero budget
    # returns a feasible answer
    try:
        incumbent = _initial_incumbent(problem)
    except NoFeasibleCompletion:
        trace.close()
        stats["wall_time_secs"] = time.monotonic() - t0
        stats["trace"] = trace.records
        return MatchSolution(
            assignment=Assignment(np.full(problem.n_x, UNMATCHED, dtype=np.int64))
            if problem.partial else None,
            reconstruction=None, objective=np.inf, lower_bound=np.inf,
            rel_gap=0.0, status=STATUS_INFEASIBLE, stats=stats)
    upper = assignment_value(problem, incumbent)
    lower_floor = 0.0
    trace.emit(upper, lower_floor, 0)
    if relative_gap(upper, lower_floor) <= config.gap_threshold:
        return finish(incumbent, upper, lower_floor, STATUS_OPTIMAL)
    if time.monotonic() > deadline:
        return finish(incumbent, upper, lower_floor, STATUS_TIME)

    # root relaxation: certified bound + rounded incumbent
    relax = NodeRelaxation(problem)
    root = relax.run(config.root_iterations, config.eps_continuous,
                     deadline=deadline)
    stats["root_iterations"] = root.iterations
    state = root.state
    root_fixed = np.full(problem.n_x, _FREE, dtype=np.int64)
    root_bound = node_bound(problem, state, root_fixed)
    try:
        rounded = round_to_assignment(root.p_matrix, problem)
        value = assignment_value(problem, rounded)
        if value < upper:
            incumbent, upper = rounded, value
    except NoFeasibleCompletion:
        pass
    trace.emit(upper, min(root_bound, upper), 0)

    heap = [(root_bound, 0, root_fixed)]
    push_count = itertools.count(1)
    pruned_min = np.inf
    expired = False

    while heap:
        if time.monotonic() > deadline:
            expired = True
            break
        bound, _, fixed_to = heapq.heappop(heap)
        tie = GAP_ZERO_TOL * (1.0 + abs(upper))
        prune_level = upper - config.gap_threshold * abs(upper) - tie
        if bound >= prune_level:
            pruned_min = min(pruned_min, bound)
            stats["nodes_pruned"] += len(heap) + 1
            heap.clear()
            break
        stats["nodes_expanded"] += 1
        free_rows, counts = _remaining_counts(problem, fixed_to)
        if free_rows.size == 0:
            asg = _to_assignment(fixed_to)
            val = assignment_value(problem, asg)
            stats["leaves_evaluated"] += 1
            if val < upper:
                incumbent, upper = asg, val
                trace.emit(upper, _global_lower(upper, heap, pruned_min),
                           stats["nodes_expanded"])
            continue
        if _completion_estimate(problem, counts) <= config.enumerate_limit:
            best = {"val": upper, "asg": None}

            def visit(arr):
                asg = _to_assignment(arr)
                val = assignment_value(problem, asg)
                stats["leaves_evaluated"] += 1
                if val < best["val"]:
                    best["val"], best["asg"] = val, asg

            try:
                _enumerate_completions(problem, fixed_to, free_rows, counts,
                                       visit, deadline)
            except TimeoutError:
                # partially enumerated: the node stays open, so its bound
                # must keep holding down the reported global lower bound
                expired = True
                pruned_min = min(pruned_min, bound)
            if best["asg"] is not None:
                incumbent, upper = best["asg"], best["val"]
                trace.emit(upper, _global_lower(upper, heap, pruned_min),
                           stats["nodes_expanded"])
            if expired:
                break
            continue
        # branch on the free keypoint with the fewest remaining candidates
        sizes = [len(c) for c in counts]
        pick = int(np.argmin(sizes))
        i_star = int(free_rows[pick])
        options = [int(j) for j in counts[pick]]
        children = [(i_star, j) for j in options]
        if problem.partial:
            children.append((i_star, UNMATCHED_FIXED))
        for i, j in children:
            child = fixed_to.copy()
            child[i] = j
            child_bound = node_bound(problem, state, child)
            if not np.isfinite(child_bound):
                continue
            child_bound = max(child_bound, bound)
            if config.node_iterations > 0 and child_bound < prune_level:
                refine = NodeRelaxation(problem, child).run(
                    config.node_iterations, config.eps_continuous,
                    deadline=deadline)
                child_bound = max(child_bound, refine.bound)
            if child_bound >= prune_level:
                pruned_min = min(pruned_min, child_bound)
                stats["nodes_pruned"] += 1
                continue
            heapq.heappush(heap, (child_bound, next(push_count), child))
        if stats["nodes_expanded"] % config.checkpoint_every == 0:
            trace.emit(upper, _global_lower(upper, heap, pruned_min),
                       stats["nodes_expanded"])

    lower = _global_lower(upper, heap, pruned_min)
    status = STATUS_TIME if expired else STATUS_OPTIMAL
    return finish(incumbent, upper, lower, status)


def _global_lower(upper, heap, pruned_min):
    heap_min = heap[0][0] if heap else np.inf
    return max(0.0, min(upper, heap_min, pruned_min))


# ---------------------------------------------------------------------------
# oracle


def exhaustive_oracle(problem, limit=1_000_000):
    """Exact minimum by enumerating every feasible assignment.

    Each assignment's continuous subproblem is solved exactly, so the result
    is a ground-truth optimum for small instances. Raises TooLarge when the
    candidate structure admits more than `limit` completions.
    """
    root = np.full(problem.n_x, _FREE, dtype=np.int64)
    free_rows, counts = _remaining_counts(problem, root)
    if _completion_estimate(problem, counts) > limit:
        raise TooLarge(
            f"oracle enumeration exceeds {limit} assignments; tighten candidates"
        )
    best = {"val": np.inf, "asg": None, "count": 0}

    def visit(arr):
        asg = _to_assignment(arr)
        val = assignment_value(problem, asg)
        best["count"] += 1
        if val < best["val"]:
            best["val"], best["asg"] = val, asg

    _enumerate_completions(problem, root, free_rows, counts, visit, None,
                           by_index=True)
    if best["asg"] is None:
        return MatchSolution(assignment=None, reconstruction=None,
                             objective=np.inf, lower_bound=np.inf, rel_gap=0.0,
                             status=STATUS_INFEASIBLE,
                             stats={"leaves_evaluated": best["count"]})
    recon = reconstruct(problem, best["asg"])
    return MatchSolution(assignment=best["asg"], reconstruction=recon,
                         objective=float(best["val"]),
                         lower_bound=float(best["val"]), rel_gap=0.0,
                         status=STATUS_OPTIMAL,
                         stats={"leaves_evaluated": best["count"]})
