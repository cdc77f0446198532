"""Dense transportation simplex for small discrete optimal transport.

Solves  min <C, X>  over couplings X >= 0 with fixed row sums (supplies)
and column sums (demands).  Support sizes stay tiny here (the callers cap
them at 64 points), so a dense tableau with explicit tree bookkeeping is
exact, fast, and has no dependencies.

Anti-cycling: entering and leaving variables follow Bland's rule
(lexicographically first eligible cell), which terminates even on the
degenerate bases that uniform weights produce all the time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["TransportPlan", "solve_transport", "TransportError"]

_OPT_TOL = 1e-11


class TransportError(RuntimeError):
    """The instance is malformed or the pivot loop failed to terminate."""


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray       # (m, n) optimal coupling
    objective: float       # <cost, plan>
    iterations: int


def _northwest_corner(supply, demand):
    """Initial basic feasible solution with exactly m + n - 1 basic cells."""
    m, n = supply.size, demand.size
    x = np.zeros((m, n))
    s = supply.copy()
    d = demand.copy()
    basis = []
    i = j = 0
    while True:
        q = min(s[i], d[j])
        x[i, j] = q
        basis.append((i, j))
        s[i] -= q
        d[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif s[i] == 0.0:
            i += 1          # ties exhaust the row first; the next cell is a
        else:               # zero-flow basic, which keeps the tree spanning
            j += 1
    return x, basis


def _duals(cost, basis, m, n):
    """Solve u_i + v_j = c_ij on the spanning tree of basic cells."""
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append((m + j, (i, j)))
        adj[m + j].append((i, (i, j)))
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    stack = [0]
    while stack:
        node = stack.pop()
        for nbr, (i, j) in adj[node]:
            if nbr < m:
                if np.isnan(u[nbr]):
                    u[nbr] = cost[i, j] - v[j]
                    stack.append(nbr)
            else:
                if np.isnan(v[nbr - m]):
                    v[nbr - m] = cost[i, j] - u[i]
                    stack.append(nbr)
    return u, v


def _cycle_path(basis, m, n, enter):
    """Unique path of basic cells from column node of ``enter`` back to its
    row node; together with ``enter`` it closes the pivot cycle."""
    i0, j0 = enter
    adj = {}
    for i, j in basis:
        adj.setdefault(i, []).append((m + j, (i, j)))
        adj.setdefault(m + j, []).append((i, (i, j)))
    start, goal = m + j0, i0
    parent = {start: (None, None)}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for nbr, cell in adj.get(node, ()):
            if nbr not in parent:
                parent[nbr] = (node, cell)
                stack.append(nbr)
    if goal not in parent:
        raise TransportError("basis lost its spanning tree")
    path = []
    node = goal
    while parent[node][0] is not None:
        node, cell = parent[node][0], parent[node][1]
        path.append(cell)
    # The path has odd length and alternating signs starting and ending
    # with '-', so either traversal direction yields the same assignment.
    return path


def solve_transport(cost, supply, demand, max_iter: int = 20000) -> TransportPlan:
    """Exact minimum-cost transportation plan between two weight vectors.

    ``supply`` and ``demand`` must be nonnegative and balanced (equal
    totals within 1e-9; they are renormalized to balance exactly).
    """
    cost = np.asarray(cost, dtype=np.float64)
    supply = np.asarray(supply, dtype=np.float64).copy()
    demand = np.asarray(demand, dtype=np.float64).copy()
    if cost.ndim != 2 or cost.shape != (supply.size, demand.size):
        raise TransportError(
            f"cost shape {cost.shape} does not match supply {supply.size} "
            f"x demand {demand.size}"
        )
    if np.any(supply < 0) or np.any(demand < 0):
        raise TransportError("negative supply or demand")
    ts, td = supply.sum(), demand.sum()
    if abs(ts - td) > 1e-9 * max(1.0, ts, td):
        raise TransportError(f"unbalanced instance: {ts} vs {td}")
    if td > 0:
        demand *= ts / td

    m, n = cost.shape
    x, basis = _northwest_corner(supply, demand)
    basis_set = set(basis)
    tol = _OPT_TOL * max(1.0, float(np.max(np.abs(cost))))

    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise TransportError("pivot limit exceeded")
        u, v = _duals(cost, basis, m, n)
        reduced = cost - u[:, None] - v[None, :]

        enter = None
        for i in range(m):
            row = reduced[i]
            for j in range(n):
                if (i, j) not in basis_set and row[j] < -tol:
                    enter = (i, j)
                    break
            if enter is not None:
                break
        if enter is None:
            break

        path = _cycle_path(basis, m, n, enter)
        minus = path[0::2]  # alternating signs along the cycle, entering is +
        theta = min(x[c] for c in minus)
        leave = min(c for c in minus if x[c] == theta)

        x[enter] += theta
        sign = -1.0
        for cell in path:
            x[cell] += sign * theta
            sign = -sign
        basis[basis.index(leave)] = enter
        basis_set.discard(leave)
        basis_set.add(enter)

    objective = float(np.sum(cost * x))
    return TransportPlan(plan=x, objective=objective, iterations=it)
