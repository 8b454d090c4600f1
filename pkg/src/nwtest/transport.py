"""Discrete 1-Wasserstein distances between uniform empirical measures.

Three solver routes, all exact:

- ``wasserstein1_1d``: closed-form quantile coupling for scalar samples,
  computed with integer segment arithmetic so the only floating-point work
  is the final weighted sum.
- ``solve_discrete_ot``: a transportation simplex (the network simplex
  specialised to dense bipartite instances).  Flows are kept as exact
  integers on the scaled problem (supply ``n2`` per row atom, demand ``n1``
  per column atom) so the returned plan is a true vertex of the coupling
  polytope with zero feasibility error.  Entering arcs are priced by the
  most negative reduced cost with lexicographic tie-breaking; a run of
  degenerate pivots switches the pricing to Bland's rule, which guarantees
  termination.
- ``empirical_projected_w1``: the projected distance used throughout the
  pipeline, dispatching to the 1-d fast path when the projection is a
  single direction.

``projected_w1_bruteforce`` is a deterministic angular grid search over
unit directions (d <= 4 only), kept as an optimisation-free oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "DiscreteMeasure",
    "TransportPlan",
    "wasserstein1_1d",
    "quantile_coupling",
    "solve_discrete_ot",
    "empirical_projected_w1",
    "projected_w1_bruteforce",
]


@dataclass(frozen=True)
class DiscreteMeasure:
    """Uniform empirical measure: mass 1/n on each atom (row of ``points``)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if pts.size == 0:
            raise ValueError("empirical measure needs at least one atom")
        if not np.all(np.isfinite(pts)):
            raise ValueError("atoms must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def weight(self) -> float:
        return 1.0 / self.n


@dataclass
class TransportPlan:
    """Optimal coupling with prescribed uniform marginals.

    ``matrix`` has row sums 1/n1 and column sums 1/n2 exactly; ``value`` is
    the transport cost of the plan against the cost it was solved for.
    ``basis`` is an opaque spanning-tree state usable to warm-start the
    next solve on a perturbed cost matrix.
    """

    matrix: np.ndarray
    value: float
    basis: tuple = field(default=None, repr=False)

    @property
    def nonzeros(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rows, cols, weights) of the support of the plan."""
        rows, cols = np.nonzero(self.matrix)
        return rows, cols, self.matrix[rows, cols]


# ---------------------------------------------------------------------------
# transportation simplex kernel
# ---------------------------------------------------------------------------

_STATUS_OPTIMAL = 0
_STATUS_ITER_LIMIT = 1


@njit(cache=True)
def _nw_corner_tree(n1, n2, parent, tree_flow):
    """Northwest-corner starting basis on the integer-scaled problem.

    Builds the spanning tree in place: ``parent[node]`` and
    ``tree_flow[node]`` (flow on the arc joining ``node`` to its parent).
    Node ids: rows 0..n1-1, columns n1..n1+n2-1; row 0 is the root.
    """
    supply = np.full(n1, n2, dtype=np.int64)
    demand = np.full(n2, n1, dtype=np.int64)
    parent[0] = -1
    i = 0
    j = 0
    while True:
        t = min(supply[i], demand[j])
        supply[i] -= t
        demand[j] -= t
        # each NW step introduces exactly one new node into the tree
        if i + j == 0:
            parent[n1 + 0] = 0
            tree_flow[n1 + 0] = t
        if i == n1 - 1 and j == n2 - 1:
            break
        if supply[i] == 0 and i < n1 - 1:
            i += 1
            parent[i] = n1 + j
            tree_flow[i] = min(supply[i], demand[j])
        else:
            j += 1
            parent[n1 + j] = i
            tree_flow[n1 + j] = min(supply[i], demand[j])


@njit(cache=True)
def _rebuild(n1, n2, cost, parent, order, depth, pot, head, nxt):
    """Recompute traversal order, depths and dual potentials from the tree.

    Potentials satisfy pot[row] + pot[col] = cost[row, col - n1] on every
    basic arc, rooted at pot[0] = 0.
    """
    n = n1 + n2
    for v in range(n):
        head[v] = -1
    for v in range(n):
        p = parent[v]
        if p >= 0:
            nxt[v] = head[p]
            head[p] = v
    order[0] = 0
    depth[0] = 0
    pot[0] = 0.0
    m = 1
    q = 0
    while q < m:
        u = order[q]
        q += 1
        c = head[u]
        while c >= 0:
            depth[c] = depth[u] + 1
            if c >= n1:
                pot[c] = cost[u, c - n1] - pot[u]
            else:
                pot[c] = cost[c, u - n1] - pot[u]
            order[m] = c
            m += 1
            c = nxt[c]


@njit(cache=True)
def _transportation_simplex(cost, parent, tree_flow, max_pivots):
    """Pivot to optimality from the feasible tree held in parent/tree_flow.

    Returns (status, pivots). Flows are exact int64 on the scaled problem.
    """
    n1, n2 = cost.shape
    n = n1 + n2
    order = np.empty(n, dtype=np.int64)
    depth = np.empty(n, dtype=np.int64)
    pot = np.empty(n, dtype=np.float64)
    head = np.empty(n, dtype=np.int64)
    nxt = np.empty(n, dtype=np.int64)
    path_a = np.empty(n, dtype=np.int64)
    path_b = np.empty(n, dtype=np.int64)

    cmax = 0.0
    for i in range(n1):
        for j in range(n2):
            a = abs(cost[i, j])
            if a > cmax:
                cmax = a
    tol = 1e-12 * (1.0 + cmax)

    bland = False
    degen_streak = 0
    switch_at = 4 * n
    pivots = 0

    while pivots < max_pivots:
        _rebuild(n1, n2, cost, parent, order, depth, pot, head, nxt)

        # --- pricing -----------------------------------------------------
        ei = -1
        ej = -1
        if bland:
            for i in range(n1):
                if ei >= 0:
                    break
                for j in range(n2):
                    if cost[i, j] - pot[i] - pot[n1 + j] < -tol:
                        ei = i
                        ej = j
                        break
        else:
            best = -tol
            for i in range(n1):
                for j in range(n2):
                    r = cost[i, j] - pot[i] - pot[n1 + j]
                    if r < best:
                        best = r
                        ei = i
                        ej = j
        if ei < 0:
            return _STATUS_OPTIMAL, pivots

        # --- cycle between the two endpoints ------------------------------
        a = ei
        b = n1 + ej
        la = 0
        lb = 0
        while depth[a] > depth[b]:
            path_a[la] = a
            la += 1
            a = parent[a]
        while depth[b] > depth[a]:
            path_b[lb] = b
            lb += 1
            b = parent[b]
        while a != b:
            path_a[la] = a
            la += 1
            a = parent[a]
            path_b[lb] = b
            lb += 1
            b = parent[b]

        # signs: pushing theta around the cycle in the direction that sends
        # +theta through the entering arc (row ei -> col ej).  Arcs on the
        # b-side are traversed child->parent, on the a-side parent->child.
        theta = np.int64(2) ** 62
        leave = -1
        leave_arc = np.int64(2) ** 62
        for t in range(lb):
            x = path_b[t]
            if x >= n1:  # child is a column: col->row traversal, loses flow
                pass
            else:
                continue
            f = tree_flow[x]
            p = parent[x]
            arc_id = np.int64(p) * n2 + (x - n1)
            if f < theta or (f == theta and arc_id < leave_arc):
                theta = f
                leave = x
                leave_arc = arc_id
        for t in range(la):
            x = path_a[t]
            if x >= n1:  # parent is a row: traversal row->col gains flow
                continue
            f = tree_flow[x]
            p = parent[x]
            arc_id = np.int64(x) * n2 + (p - n1)
            if f < theta or (f == theta and arc_id < leave_arc):
                theta = f
                leave = x
                leave_arc = arc_id
        # a degenerate basis always offers a losing arc; leave >= 0 here

        for t in range(lb):
            x = path_b[t]
            if x >= n1:
                tree_flow[x] -= theta
            else:
                tree_flow[x] += theta
        for t in range(la):
            x = path_a[t]
            if x >= n1:
                tree_flow[x] += theta
            else:
                tree_flow[x] -= theta

        # --- basis exchange: re-root the cut subtree at the entering arc --
        s = -1
        x = ei
        while x >= 0:
            if x == leave:
                s = ei
                other = n1 + ej
                break
            x = parent[x]
        if s < 0:
            s = n1 + ej
            other = ei
        # reverse parent pointers from s up to the leaving node
        prev = other
        carry = theta
        x = s
        while True:
            nxt_node = parent[x]
            f = tree_flow[x]
            parent[x] = prev
            tree_flow[x] = carry
            if x == leave:
                break
            prev = x
            carry = f
            x = nxt_node

        if theta == 0:
            degen_streak += 1
            if degen_streak >= switch_at:
                bland = True
        else:
            degen_streak = 0
        pivots += 1

    return _STATUS_ITER_LIMIT, pivots


def _plan_from_tree(cost, parent, tree_flow):
    n1, n2 = cost.shape
    total = n1 * n2
    matrix = np.zeros((n1, n2), dtype=np.float64)
    value = 0.0
    for node in range(1, n1 + n2):
        p = parent[node]
        if node < n1:
            i, j = node, p - n1
        else:
            i, j = p, node - n1
        w = tree_flow[node] / total
        matrix[i, j] = w
        value += w * cost[i, j]
    return matrix, value


def solve_discrete_ot(cost: np.ndarray, warm_basis: tuple = None) -> TransportPlan:
    """Exact optimal coupling of uniform marginals for a dense cost matrix.

    ``warm_basis`` may carry the ``basis`` of a plan solved on a nearby cost
    matrix; the stored spanning tree stays primal feasible for any cost, so
    re-optimisation usually takes a handful of pivots.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] < 1 or cost.shape[1] < 1:
        raise ValueError("cost must be a nonempty 2-d matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    n1, n2 = cost.shape

    if n1 == 1 or n2 == 1:
        # forced coupling: the product measure is the only feasible plan
        matrix = np.full((n1, n2), 1.0 / (n1 * n2))
        value = float(np.sum(matrix * cost))
        parent = np.empty(n1 + n2, dtype=np.int64)
        tree_flow = np.zeros(n1 + n2, dtype=np.int64)
        parent[0] = -1
        if n1 == 1:
            parent[1:] = 0
            tree_flow[1:] = 1
        else:
            parent[n1] = 0
            tree_flow[n1] = n2
            parent[1:n1] = n1
            tree_flow[1:n1] = n2
        return TransportPlan(matrix=matrix, value=value, basis=(parent, tree_flow))

    if warm_basis is not None:
        parent = warm_basis[0].copy()
        tree_flow = warm_basis[1].copy()
        if parent.shape[0] != n1 + n2:
            raise ValueError("warm basis does not match the cost shape")
    else:
        parent = np.empty(n1 + n2, dtype=np.int64)
        tree_flow = np.zeros(n1 + n2, dtype=np.int64)
        _nw_corner_tree(n1, n2, parent, tree_flow)

    max_pivots = 1000 + 50 * n1 * n2
    status, _ = _transportation_simplex(cost, parent, tree_flow, max_pivots)
    if status != _STATUS_OPTIMAL:
        raise RuntimeError("transportation simplex exceeded its pivot budget")
    matrix, value = _plan_from_tree(cost, parent, tree_flow)
    return TransportPlan(matrix=matrix, value=value, basis=(parent, tree_flow))


# ---------------------------------------------------------------------------
# 1-d fast path
# ---------------------------------------------------------------------------


def wasserstein1_1d(xs, ys) -> float:
    """W1 between two scalar uniform empirical measures via quantile coupling.

    Segment boundaries are expressed as integers over the common denominator
    n*m, so quantile bucketing involves no floating-point comparisons.
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.size == 0 or ys.size == 0:
        raise ValueError("both samples must be nonempty")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("samples must be finite")
    n, m = xs.size, ys.size
    xs = np.sort(xs)
    ys = np.sort(ys)
    cuts = np.union1d(np.arange(n + 1, dtype=np.int64) * m,
                      np.arange(m + 1, dtype=np.int64) * n)
    widths = np.diff(cuts)
    xi = cuts[:-1] // m
    yi = cuts[:-1] // n
    return float(np.sum(widths * np.abs(xs[xi] - ys[yi])) / (n * m))


def quantile_coupling(xs, ys) -> TransportPlan:
    """Optimal 1-d coupling as an explicit plan (same value as the LP route).

    The support is the sorted-order staircase; entries are indexed by the
    original sample order.
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.size == 0 or ys.size == 0:
        raise ValueError("both samples must be nonempty")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("samples must be finite")
    n, m = xs.size, ys.size
    ox = np.argsort(xs, kind="stable")
    oy = np.argsort(ys, kind="stable")
    cuts = np.union1d(np.arange(n + 1, dtype=np.int64) * m,
                      np.arange(m + 1, dtype=np.int64) * n)
    widths = np.diff(cuts)
    xi = ox[cuts[:-1] // m]
    yi = oy[cuts[:-1] // n]
    matrix = np.zeros((n, m), dtype=np.float64)
    np.add.at(matrix, (xi, yi), widths / (n * m))
    value = float(np.sum(widths * np.abs(xs[xi] - ys[yi])) / (n * m))
    return TransportPlan(matrix=matrix, value=value, basis=None)


# ---------------------------------------------------------------------------
# projected distances
# ---------------------------------------------------------------------------


def _check_projection(U: np.ndarray, d: int, tol: float = 1e-8) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    if U.shape[0] != d:
        raise ValueError(f"projection has {U.shape[0]} rows, data has dimension {d}")
    gram = U.T @ U
    if np.linalg.norm(gram - np.eye(U.shape[1])) > tol:
        raise ValueError("projection columns are not orthonormal")
    return U


def empirical_projected_w1(X: np.ndarray, Y: np.ndarray, U: np.ndarray) -> float:
    """W1 between the pushforwards of the two samples through ``U``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise ValueError("samples live in different dimensions")
    U = _check_projection(U, X.shape[1])
    px = X @ U
    py = Y @ U
    if U.shape[1] == 1:
        return wasserstein1_1d(px.ravel(), py.ravel())
    diff = px[:, None, :] - py[None, :, :]
    cost = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return solve_discrete_ot(cost).value


def _direction_grid(d: int, resolution: int) -> np.ndarray:
    """Deterministic unit-vector grid, nested under doubling of resolution.

    Spherical-coordinate product grid: polar angles on [0, pi] with
    resolution+1 closed points, azimuth on [0, 2*pi) with resolution points.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    azimuth = 2.0 * np.pi * np.arange(resolution) / resolution
    if d == 2:
        return np.stack([np.cos(azimuth), np.sin(azimuth)], axis=1)
    polar = np.pi * np.arange(resolution + 1) / resolution
    if d == 3:
        th, ph = np.meshgrid(polar, azimuth, indexing="ij")
        th, ph = th.ravel(), ph.ravel()
        return np.stack(
            [np.cos(th), np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph)], axis=1
        )
    t1, t2, ph = np.meshgrid(polar, polar, azimuth, indexing="ij")
    t1, t2, ph = t1.ravel(), t2.ravel(), ph.ravel()
    return np.stack(
        [
            np.cos(t1),
            np.sin(t1) * np.cos(t2),
            np.sin(t1) * np.sin(t2) * np.cos(ph),
            np.sin(t1) * np.sin(t2) * np.sin(ph),
        ],
        axis=1,
    )


def projected_w1_bruteforce(
    X: np.ndarray, Y: np.ndarray, k: int = 1, resolution: int = 360
) -> tuple[float, np.ndarray]:
    """Grid-search maximum of the projected W1 over unit directions.

    Supports k=1 and ambient dimension d <= 4 only; intended as a slow,
    optimisation-free reference for the manifold solver.
    Returns (best value, best direction as a (d, 1) matrix).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    d = X.shape[1]
    if k != 1 or d > 4 or d < 2:
        raise ValueError("grid search supports k=1 and 2 <= d <= 4 only")
    if Y.shape[1] != d:
        raise ValueError("samples live in different dimensions")
    dirs = _direction_grid(d, resolution)
    px = X @ dirs.T
    py = Y @ dirs.T
    best_val = -1.0
    best_idx = 0
    for g in range(dirs.shape[0]):
        v = wasserstein1_1d(px[:, g], py[:, g])
        if v > best_val:
            best_val = v
            best_idx = g
    return best_val, dirs[best_idx][:, None]
