"""Pure-Python network simplex for the dense transportation problem.

Mirrors ``_simplex.pyx`` line for line so either backend can stand in for
the other.  Nodes ``0..n-1`` are sources, ``n..n+m-1`` sinks and ``n+m``
the artificial root.  Real arc ``e = i*m + j`` runs from source ``i`` to
sink ``n + j``; the artificial arc of node ``u`` is ``n*m + u``.  Every
tree arc is stored on its child node (parent, arc id, orientation, flow),
so memory stays O(n + m) while the n*m arc costs are read on demand.
Children are kept in intrusive sibling lists so a pivot only revisits the
subtree that was re-hung.
"""
import math

import numpy as np

BACKEND = "python"


def _unlink(w, parent, first_child, next_sib, prev_sib):
    p = parent[w]
    if prev_sib[w] >= 0:
        next_sib[prev_sib[w]] = next_sib[w]
    else:
        first_child[p] = next_sib[w]
    if next_sib[w] >= 0:
        prev_sib[next_sib[w]] = prev_sib[w]


def _link(w, p, parent, first_child, next_sib, prev_sib):
    parent[w] = p
    prev_sib[w] = -1
    next_sib[w] = first_child[p]
    if first_child[p] >= 0:
        prev_sib[first_child[p]] = w
    first_child[p] = w


def _refresh_subtree(top, parent, up, arc_cost, pi, depth, first_child, next_sib):
    """Recompute depth and potential for every node in the subtree under ``top``."""
    stack = [top]
    while stack:
        w = stack.pop()
        p = parent[w]
        depth[w] = depth[p] + 1
        pi[w] = pi[p] - arc_cost[w] if up[w] else pi[p] + arc_cost[w]
        c = first_child[w]
        while c >= 0:
            stack.append(c)
            c = next_sib[c]


def solve(cost, supply, demand, max_iter=0):
    """Min-cost transport plan for integer ``cost`` (n, m), ``supply`` (n), ``demand`` (m).

    Supplies and demands must be positive and balance exactly.  Returns
    ``(src, dst, flow, iterations)`` listing the positive-flow arcs.
    """
    cost = np.ascontiguousarray(cost, dtype=np.int64)
    n, m = cost.shape
    flat = cost.reshape(-1)
    n_arcs = n * m
    root = n + m
    big = (int(flat.max()) + 1) * (root + 1)

    parent = [root] * root + [-1]
    arc = [n_arcs + u for u in range(root)] + [-1]
    up = [True] * n + [False] * m + [False]
    flow = [int(s) for s in supply] + [int(d) for d in demand] + [0]
    arc_cost = [big] * root + [0]
    pi = [0] * (root + 1)
    depth = [0] * (root + 1)
    first_child = [-1] * (root + 1)
    next_sib = [-1] * (root + 1)
    prev_sib = [-1] * (root + 1)
    for u in range(root):
        _link(u, root, parent, first_child, next_sib, prev_sib)
        _refresh_subtree(u, parent, up, arc_cost, pi, depth, first_child, next_sib)

    block = max(10, int(math.sqrt(n_arcs)))
    next_arc = 0
    iterations = 0
    pi_arr = np.zeros(root + 1, dtype=np.int64)
    while True:
        pi_arr[:] = pi
        # block search pricing: most negative reduced cost within the first
        # block (in cyclic order) that holds any negative candidate
        entering = -1
        scanned = 0
        while scanned < n_arcs:
            lo = next_arc
            hi = min(lo + block, n_arcs)
            idx = np.arange(lo, hi)
            rc = flat[lo:hi] + pi_arr[idx // m] - pi_arr[n + idx % m]
            k = int(np.argmin(rc))
            scanned += hi - lo
            next_arc = hi % n_arcs
            if rc[k] < 0:
                entering = lo + k
                break
        if entering < 0:
            break
        iterations += 1
        if max_iter and iterations > max_iter:
            raise RuntimeError("network simplex exceeded its iteration limit")

        first, second = entering // m, n + entering % m
        u, v = first, second
        while u != v:
            if depth[u] > depth[v]:
                u = parent[u]
            elif depth[v] > depth[u]:
                v = parent[v]
            else:
                u, v = parent[u], parent[v]
        join = u

        # leaving arc: last blocking arc in cycle orientation keeps the tree strongly feasible
        delta = -1
        u_out = -1
        side = 0
        w = first
        while w != join:
            if up[w] and (delta < 0 or flow[w] < delta):
                delta, u_out, side = flow[w], w, 1
            w = parent[w]
        w = second
        while w != join:
            if not up[w] and (delta < 0 or flow[w] <= delta):
                delta, u_out, side = flow[w], w, 2
            w = parent[w]
        if delta < 0:
            raise RuntimeError("unbounded pivot; costs must be nonnegative")

        if delta > 0:
            w = first
            while w != join:
                flow[w] += -delta if up[w] else delta
                w = parent[w]
            w = second
            while w != join:
                flow[w] += delta if up[w] else -delta
                w = parent[w]

        if side == 1:
            u_in, v_in = first, second
        else:
            u_in, v_in = second, first
        cur = u_in
        new_par, new_arc, new_up, new_flow = v_in, entering, u_in == first, delta
        new_cost = int(flat[entering])
        while True:
            old = (parent[cur], arc[cur], up[cur], flow[cur], arc_cost[cur])
            _unlink(cur, parent, first_child, next_sib, prev_sib)
            _link(cur, new_par, parent, first_child, next_sib, prev_sib)
            arc[cur], up[cur], flow[cur], arc_cost[cur] = new_arc, new_up, new_flow, new_cost
            if cur == u_out:
                break
            new_par, new_arc, new_up, new_flow, new_cost = cur, old[1], not old[2], old[3], old[4]
            cur = old[0]
        _refresh_subtree(u_in, parent, up, arc_cost, pi, depth, first_child, next_sib)

    src, dst, amount = [], [], []
    for w in range(root):
        e = arc[w]
        if e >= n_arcs:
            if flow[w] != 0:
                raise RuntimeError("infeasible transport problem: artificial flow remains")
            continue
        if flow[w] > 0:
            src.append(e // m)
            dst.append(e % m)
            amount.append(flow[w])
    return (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
            np.array(amount, dtype=np.int64), iterations)
