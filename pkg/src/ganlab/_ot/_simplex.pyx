# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled network simplex for the dense transportation problem.

Same algorithm and node/arc layout as ``_simplex_py``; see that module for
the data-structure description.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdint cimport int64_t

cnp.import_array()

BACKEND = "cython"


cdef inline void _unlink(int64_t w, int64_t[::1] parent, int64_t[::1] first_child,
                         int64_t[::1] next_sib, int64_t[::1] prev_sib) noexcept nogil:
    cdef int64_t p = parent[w]
    if prev_sib[w] >= 0:
        next_sib[prev_sib[w]] = next_sib[w]
    else:
        first_child[p] = next_sib[w]
    if next_sib[w] >= 0:
        prev_sib[next_sib[w]] = prev_sib[w]


cdef inline void _link(int64_t w, int64_t p, int64_t[::1] parent, int64_t[::1] first_child,
                       int64_t[::1] next_sib, int64_t[::1] prev_sib) noexcept nogil:
    parent[w] = p
    prev_sib[w] = -1
    next_sib[w] = first_child[p]
    if first_child[p] >= 0:
        prev_sib[first_child[p]] = w
    first_child[p] = w


cdef void _refresh_subtree(int64_t top, int64_t[::1] parent, char[::1] up,
                           int64_t[::1] arc_cost, int64_t[::1] pi, int64_t[::1] depth,
                           int64_t[::1] first_child, int64_t[::1] next_sib,
                           int64_t[::1] stack) noexcept nogil:
    cdef int64_t w, p, c, sp = 0
    stack[sp] = top
    sp += 1
    while sp > 0:
        sp -= 1
        w = stack[sp]
        p = parent[w]
        depth[w] = depth[p] + 1
        if up[w]:
            pi[w] = pi[p] - arc_cost[w]
        else:
            pi[w] = pi[p] + arc_cost[w]
        c = first_child[w]
        while c >= 0:
            stack[sp] = c
            sp += 1
            c = next_sib[c]


def solve(cost, supply, demand, int64_t max_iter=0):
    """Min-cost transport plan for integer ``cost`` (n, m), ``supply`` (n), ``demand`` (m).

    Supplies and demands must be positive and balance exactly.  Returns
    ``(src, dst, flow, iterations)`` listing the positive-flow arcs.
    """
    cdef int64_t[:, ::1] c = np.ascontiguousarray(cost, dtype=np.int64)
    cdef int64_t n = c.shape[0], m = c.shape[1]
    cdef int64_t n_arcs = n * m
    cdef int64_t root = n + m
    cdef int64_t big = (int(np.asarray(c).max()) + 1) * (root + 1)

    cdef int64_t[::1] parent = np.full(root + 1, root, dtype=np.int64)
    cdef int64_t[::1] arc = np.empty(root + 1, dtype=np.int64)
    cdef char[::1] up = np.zeros(root + 1, dtype=np.int8)
    cdef int64_t[::1] flow = np.zeros(root + 1, dtype=np.int64)
    cdef int64_t[::1] arc_cost = np.full(root + 1, big, dtype=np.int64)
    cdef int64_t[::1] pi = np.zeros(root + 1, dtype=np.int64)
    cdef int64_t[::1] depth = np.zeros(root + 1, dtype=np.int64)
    cdef int64_t[::1] first_child = np.full(root + 1, -1, dtype=np.int64)
    cdef int64_t[::1] next_sib = np.full(root + 1, -1, dtype=np.int64)
    cdef int64_t[::1] prev_sib = np.full(root + 1, -1, dtype=np.int64)
    cdef int64_t[::1] stack = np.zeros(root + 1, dtype=np.int64)
    cdef int64_t[::1] sup = np.ascontiguousarray(supply, dtype=np.int64)
    cdef int64_t[::1] dem = np.ascontiguousarray(demand, dtype=np.int64)

    cdef int64_t u, v, w, e, k, join, entering, first, second, u_out, u_in, v_in
    cdef int64_t delta, rc, best_rc, scanned, cnt, next_arc, iterations, side
    cdef int64_t cur, new_par, new_arc, new_flow, new_cost
    cdef int64_t o_par, o_arc, o_flow, o_cost
    cdef char new_up, o_up
    cdef int64_t block = <int64_t>sqrt(<double>n_arcs)
    if block < 10:
        block = 10

    for u in range(root):
        arc[u] = n_arcs + u
        if u < n:
            up[u] = 1
            flow[u] = sup[u]
        else:
            flow[u] = dem[u - n]
    parent[root] = -1
    arc[root] = -1
    arc_cost[root] = 0
    for u in range(root):
        _link(u, root, parent, first_child, next_sib, prev_sib)
        _refresh_subtree(u, parent, up, arc_cost, pi, depth, first_child, next_sib, stack)

    next_arc = 0
    iterations = 0
    delta = 0
    entering = -1
    with nogil:
        while True:
            # block search pricing
            entering = -1
            best_rc = 0
            scanned = 0
            cnt = block
            e = next_arc
            while scanned < n_arcs:
                rc = c[e // m, e % m] + pi[e // m] - pi[n + e % m]
                if rc < best_rc:
                    best_rc = rc
                    entering = e
                scanned += 1
                cnt -= 1
                e += 1
                if e == n_arcs:
                    e = 0
                    if entering >= 0:
                        break
                    cnt = block
                elif cnt == 0:
                    if entering >= 0:
                        break
                    cnt = block
            next_arc = e
            if entering < 0:
                break
            iterations += 1
            if max_iter > 0 and iterations > max_iter:
                break

            first = entering // m
            second = n + entering % m
            u = first
            v = second
            while u != v:
                if depth[u] > depth[v]:
                    u = parent[u]
                elif depth[v] > depth[u]:
                    v = parent[v]
                else:
                    u = parent[u]
                    v = parent[v]
            join = u

            delta = -1
            u_out = -1
            side = 0
            w = first
            while w != join:
                if up[w] and (delta < 0 or flow[w] < delta):
                    delta = flow[w]
                    u_out = w
                    side = 1
                w = parent[w]
            w = second
            while w != join:
                if not up[w] and (delta < 0 or flow[w] <= delta):
                    delta = flow[w]
                    u_out = w
                    side = 2
                w = parent[w]
            if delta < 0:
                break

            if delta > 0:
                w = first
                while w != join:
                    if up[w]:
                        flow[w] -= delta
                    else:
                        flow[w] += delta
                    w = parent[w]
                w = second
                while w != join:
                    if up[w]:
                        flow[w] += delta
                    else:
                        flow[w] -= delta
                    w = parent[w]

            if side == 1:
                u_in = first
                v_in = second
            else:
                u_in = second
                v_in = first
            cur = u_in
            new_par = v_in
            new_arc = entering
            new_up = 1 if u_in == first else 0
            new_flow = delta
            new_cost = c[entering // m, entering % m]
            while True:
                o_par = parent[cur]
                o_arc = arc[cur]
                o_up = up[cur]
                o_flow = flow[cur]
                o_cost = arc_cost[cur]
                _unlink(cur, parent, first_child, next_sib, prev_sib)
                _link(cur, new_par, parent, first_child, next_sib, prev_sib)
                arc[cur] = new_arc
                up[cur] = new_up
                flow[cur] = new_flow
                arc_cost[cur] = new_cost
                if cur == u_out:
                    break
                new_par = cur
                new_arc = o_arc
                new_up = 0 if o_up else 1
                new_flow = o_flow
                new_cost = o_cost
                cur = o_par
            _refresh_subtree(u_in, parent, up, arc_cost, pi, depth, first_child, next_sib, stack)

    if max_iter > 0 and iterations > max_iter:
        raise RuntimeError("network simplex exceeded its iteration limit")
    if entering >= 0 and delta < 0:
        raise RuntimeError("unbounded pivot; costs must be nonnegative")

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
