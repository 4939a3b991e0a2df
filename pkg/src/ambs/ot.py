"""Exact optimal-transport distances.

``w1_discrete`` solves the discrete transportation LP exactly with a
transportation simplex — no entropic smoothing, because the result feeds a
fixed-point iteration where bias would compound.  Support sizes stay small
(tabular MDPs, n <= 64), so exactness is cheap.

``w2_diag_gaussian`` is the closed form for diagonal Gaussians:
W2^2 = ||mu_a - mu_b||_2^2 + ||sigma_a - sigma_b||_2^2.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .diffcore import ContractViolation

_MASS_TOL = 1e-9


def _validate_dist(name, p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ContractViolation(f"{name}: expected 1-D probability vector, got shape {p.shape}")
    if not np.isfinite(p).all():
        raise ContractViolation(f"{name}: non-finite mass")
    if (p < -1e-12).any():
        raise ContractViolation(f"{name}: negative mass {p.min()}")
    s = p.sum()
    if abs(s - 1.0) > _MASS_TOL:
        raise ContractViolation(f"{name}: mass sums to {s}, not 1")
    return np.clip(p, 0.0, None)


def w1_discrete(p, q, cost):
    """Exact 1-Wasserstein distance between distributions on a shared support.

    cost must be a pseudometric matrix on the support: symmetric,
    zero-diagonal, nonnegative.  Zero-mass support points are pruned before
    solving.
    """
    p = _validate_dist("p", p)
    q = _validate_dist("q", q)
    n = p.shape[0]
    if q.shape[0] != n:
        raise ContractViolation(f"supports differ: {n} vs {q.shape[0]}")
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != (n, n):
        raise ContractViolation(f"cost shape {cost.shape} != ({n}, {n})")
    if not np.isfinite(cost).all() or (cost < -1e-12).any():
        raise ContractViolation("cost must be finite and nonnegative")
    if np.abs(np.diag(cost)).max(initial=0.0) > 1e-9:
        raise ContractViolation("cost diagonal must be zero")
    if np.abs(cost - cost.T).max(initial=0.0) > 1e-9:
        raise ContractViolation("cost must be symmetric")

    rows = np.flatnonzero(p > 0.0)
    cols = np.flatnonzero(q > 0.0)
    a = p[rows] / p[rows].sum()
    b = q[cols] / q[cols].sum()
    return _transport_simplex(a, b, np.clip(cost[np.ix_(rows, cols)], 0.0, None))


def _transport_simplex(a, b, C):
    """Minimize sum(gamma * C) over couplings with marginals a, b. Exact."""
    m, n = C.shape
    if m == 1:
        return float(b @ C[0])
    if n == 1:
        return float(a @ C[:, 0])

    # Northwest-corner initial basis: m+n-1 cells forming a staircase tree.
    alloc = {}
    arem = a.copy()
    brem = b.copy()
    i = j = 0
    for _ in range(m + n - 1):
        t = min(arem[i], brem[j])
        alloc[(i, j)] = t
        arem[i] -= t
        brem[j] -= t
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif arem[i] <= brem[j]:
            i += 1
        else:
            j += 1

    tol = 1e-11 * max(1.0, float(C.max()))
    bland_after = 10 * (m + n)
    max_iter = 200 + 20 * (m + n) * (m + n)
    for it in range(max_iter):
        u, v = _tree_duals(alloc, C, m, n)
        red = C - u[:, None] - v[None, :]
        for cell in alloc:
            red[cell] = 0.0
        if it < bland_after:
            ei, ej = np.unravel_index(np.argmin(red), red.shape)
            if red[ei, ej] >= -tol:
                break
        else:
            # Bland's rule: first negative cell in row-major order
            neg = np.argwhere(red < -tol)
            if neg.size == 0:
                break
            ei, ej = neg[0]
        ei, ej = int(ei), int(ej)

        cycle = _stepping_stone_cycle(alloc, ei, ej)
        minus = cycle[1::2]
        theta = min(alloc[c] for c in minus)
        leaving = min(c for c in minus if alloc[c] <= theta)
        alloc[(ei, ej)] = 0.0
        for k, cell in enumerate(cycle):
            if k % 2 == 0:
                alloc[cell] += theta
            else:
                alloc[cell] = max(alloc[cell] - theta, 0.0)
        del alloc[leaving]
    else:
        raise ContractViolation("transportation simplex failed to converge")

    return float(sum(t * C[cell] for cell, t in alloc.items()))


def _tree_duals(alloc, C, m, n):
    """Solve u_i + v_j = C_ij over the basis spanning tree, anchored u_0 = 0."""
    rows = defaultdict(list)
    cols = defaultdict(list)
    for i, j in alloc:
        rows[i].append(j)
        cols[j].append(i)
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    stack = [(True, 0)]
    while stack:
        is_row, k = stack.pop()
        if is_row:
            for j in rows[k]:
                if np.isnan(v[j]):
                    v[j] = C[k, j] - u[k]
                    stack.append((False, j))
        else:
            for i in cols[k]:
                if np.isnan(u[i]):
                    u[i] = C[i, k] - v[k]
                    stack.append((True, i))
    if np.isnan(u).any() or np.isnan(v).any():
        raise ContractViolation("transport basis is not a spanning tree")
    return u, v


def _stepping_stone_cycle(alloc, ei, ej):
    """Cycle created by adding cell (ei, ej) to the basis tree.

    Returns cells in cycle order starting at the entering cell; signs
    alternate +, -, +, - along the list.
    """
    rows = defaultdict(list)
    cols = defaultdict(list)
    for i, j in alloc:
        rows[i].append(j)
        cols[j].append(i)
    # BFS from row node ei to col node ej; nodes are (is_row, index)
    start = (True, ei)
    goal = (False, ej)
    parent = {start: None}
    queue = [start]
    while queue:
        node = queue.pop(0)
        if node == goal:
            break
        is_row, k = node
        nbrs = ((False, j) for j in rows[k]) if is_row else ((True, i) for i in cols[k])
        for nb in nbrs:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    if goal not in parent:
        raise ContractViolation("transport basis lost connectivity")

    nodes = [goal]
    while parent[nodes[-1]] is not None:
        nodes.append(parent[nodes[-1]])
    nodes.reverse()  # row ei ... col ej, alternating
    path_edges = []
    for t in range(len(nodes) - 1):
        (ra, ka), (rb, kb) = nodes[t], nodes[t + 1]
        path_edges.append((ka, kb) if ra else (kb, ka))
    return [(ei, ej)] + path_edges[::-1]


def w2_diag_gaussian(mu_a, sigma_a, mu_b, sigma_b):
    """2-Wasserstein distance between diagonal Gaussians (closed form)."""
    mu_a = np.asarray(mu_a, dtype=np.float64)
    mu_b = np.asarray(mu_b, dtype=np.float64)
    sigma_a = np.asarray(sigma_a, dtype=np.float64)
    sigma_b = np.asarray(sigma_b, dtype=np.float64)
    if not (mu_a.shape == mu_b.shape == sigma_a.shape == sigma_b.shape):
        raise ContractViolation(
            f"w2_diag_gaussian: shapes {mu_a.shape}, {sigma_a.shape}, "
            f"{mu_b.shape}, {sigma_b.shape} differ"
        )
    if (sigma_a <= 0).any() or (sigma_b <= 0).any():
        raise ContractViolation("w2_diag_gaussian: sigma must be positive")
    sq = ((mu_a - mu_b) ** 2).sum() + ((sigma_a - sigma_b) ** 2).sum()
    return float(np.sqrt(sq))
