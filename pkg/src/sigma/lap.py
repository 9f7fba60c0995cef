"""Linear assignment with dual potentials and forbidden entries.

A shortest-augmenting-path Hungarian solver on square cost matrices.
Forbidden pairs are passed as +inf costs; if no perfect matching exists over
the allowed entries the solve raises NoFeasibleCompletion. The returned dual
potentials (u, v) satisfy u_i + v_j <= c_ij on allowed pairs up to rounding,
which certified_lap_bound repairs into a valid lower bound on the optimal
assignment cost. scipy's solver is not used because the search needs exactly
this: deterministic smallest-index tie-breaking plus the potentials.
"""

import numpy as np

from .errors import NoFeasibleCompletion


def solve_lap(cost):
    """Min-cost perfect matching on a square matrix.

    Returns (col_of_row, u, v, value). Ties between equal-reduced-cost
    columns break toward the smallest column index, and rows are inserted in
    ascending order, so a constant matrix yields the identity assignment.
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square cost matrix, got shape {a.shape}")
    if np.isnan(a).any():
        raise ValueError("cost matrix contains NaN")
    n = a.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64), np.empty(0), np.empty(0), 0.0
    # 1-indexed with a sentinel column 0 (standard JV formulation)
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            # reduced costs of row i0 against unused columns
            cols = np.nonzero(free)[0]
            red = a[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = red < minv[cols]
            minv[cols[better]] = red[better]
            way[cols[better]] = j0
            if cols.size == 0:
                raise NoFeasibleCompletion("assignment has no feasible completion")
            sub = minv[cols]
            k = int(np.argmin(sub))  # first minimum: smallest column index
            delta = sub[k]
            j1 = int(cols[k])
            if not np.isfinite(delta):
                raise NoFeasibleCompletion("assignment has no feasible completion")
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    value = float(a[np.arange(n), col_of_row].sum())
    return col_of_row, u[1:].copy(), v[1:].copy(), value


def solve_lap_max(weight):
    """Max-weight perfect matching (negated min solve)."""
    w = np.asarray(weight, dtype=np.float64)
    col_of_row, u, v, value = solve_lap(np.where(np.isfinite(w), -w, np.inf))
    return col_of_row, -value


def certified_lap_bound(cost):
    """A valid lower bound on the optimal assignment cost of a square matrix.

    Runs the exact solver and repairs any floating-point violation of the
    dual feasibility u_i + v_j <= c_ij over allowed (finite) entries, so the
    returned bound is safe even with accumulated rounding. Raises
    NoFeasibleCompletion when no perfect matching exists.
    """
    a = np.asarray(cost, dtype=np.float64)
    _, u, v, value = solve_lap(a)
    allowed = np.isfinite(a)
    slack = u[:, None] + v[None, :] - a
    violation = float(slack[allowed].max(initial=0.0))
    bound = float(u.sum() + v.sum()) - a.shape[0] * max(violation, 0.0)
    return min(bound, value)


def max_matching_size(allowed):
    """Maximum bipartite matching size over a boolean allowed-pairs matrix.

    Used for feasibility checks and the padded partial-mode bound. Plain
    Kuhn's algorithm; matrices here are tiny (tens of rows).
    """
    allowed = np.asarray(allowed, dtype=bool)
    n_rows, n_cols = allowed.shape
    match_col = np.full(n_cols, -1, dtype=np.int64)

    def try_row(i, seen):
        for j in range(n_cols):
            if allowed[i, j] and not seen[j]:
                seen[j] = True
                if match_col[j] < 0 or try_row(match_col[j], seen):
                    match_col[j] = i
                    return True
        return False

    size = 0
    for i in range(n_rows):
        if try_row(i, np.zeros(n_cols, dtype=bool)):
            size += 1
    return size
