"""Primal network simplex for the balanced transportation problem.

Sources ``a`` at points ``xa`` ship to sinks ``b`` at ``xb`` with Euclidean
arc costs.  Nodes are rows ``0..n-1`` then columns ``n..n+m-1``; the basis is
a spanning tree rooted at node 0 kept as parent pointers, depths and
doubly linked child lists.  A pivot only touches the subtree cut off by the
leaving arc: it is re-hung from the entering arc and its potentials shift by
the entering reduced cost.  Pricing is block search over the dense arc set.
"""
import numpy as np

from ._accel import jit

OPTIMAL = 0
ITERATION_LIMIT = 1
MAX_DENSE_COST = 8_000_000


@jit
def _initial_basis(a, b):
    """North-west corner rule: exactly n + m - 1 basic cells forming a tree."""
    n = a.size
    m = b.size
    nb = n + m - 1
    bi = np.empty(nb, dtype=np.int64)
    bj = np.empty(nb, dtype=np.int64)
    bf = np.empty(nb, dtype=np.float64)
    i = 0
    j = 0
    ra = a[0]
    rb = b[0]
    for k in range(nb):
        f = min(ra, rb)
        bi[k] = i
        bj[k] = j
        bf[k] = f
        ra -= f
        rb -= f
        if j == m - 1 or (i < n - 1 and ra <= rb):
            i += 1
            if i < n:
                ra = a[i]
        else:
            j += 1
            if j < m:
                rb = b[j]
    return bi, bj, bf


@jit
def _arc_cost(C, dense, xa, xb, i, j, m):
    if dense:
        return C[i * m + j]
    dx = xa[i, 0] - xb[j, 0]
    dy = xa[i, 1] - xb[j, 1]
    return np.sqrt(dx * dx + dy * dy)


@jit
def _detach(v, parent, child, nxt, prv):
    p = parent[v]
    if prv[v] >= 0:
        nxt[prv[v]] = nxt[v]
    else:
        child[p] = nxt[v]
    if nxt[v] >= 0:
        prv[nxt[v]] = prv[v]
    nxt[v] = -1
    prv[v] = -1


@jit
def _attach(v, p, parent, child, nxt, prv):
    parent[v] = p
    prv[v] = -1
    nxt[v] = child[p]
    if child[p] >= 0:
        prv[child[p]] = v
    child[p] = v


@jit
def transport_simplex(a, b, xa, xb, max_iter, tol):
    """Returns ``(cost, rows, cols, flows, pivots, status)``.

    ``a`` and ``b`` must be positive with equal sums.
    """
    n = a.size
    m = b.size
    N = n + m
    dense = n * m <= MAX_DENSE_COST
    C = np.empty(n * m if dense else 0)
    if dense:
        for i in range(n):
            for j in range(m):
                dx = xa[i, 0] - xb[j, 0]
                dy = xa[i, 1] - xb[j, 1]
                C[i * m + j] = np.sqrt(dx * dx + dy * dy)
    bi, bj, bf = _initial_basis(a, b)
    nb = bi.size

    # initial rooted tree by DFS over the basis adjacency
    deg = np.zeros(N + 1, dtype=np.int64)
    for e in range(nb):
        deg[bi[e] + 1] += 1
        deg[n + bj[e] + 1] += 1
    for k in range(N):
        deg[k + 1] += deg[k]
    fill = deg.copy()
    adj = np.empty(2 * nb, dtype=np.int64)
    for e in range(nb):
        adj[fill[bi[e]]] = e
        fill[bi[e]] += 1
        adj[fill[n + bj[e]]] = e
        fill[n + bj[e]] += 1
    parent = np.full(N, -2, dtype=np.int64)
    parc = np.full(N, -1, dtype=np.int64)
    depth = np.zeros(N, dtype=np.int64)
    child = np.full(N, -1, dtype=np.int64)
    nxt = np.full(N, -1, dtype=np.int64)
    prv = np.full(N, -1, dtype=np.int64)
    pot = np.zeros(N)
    stack = np.empty(N, dtype=np.int64)
    parent[0] = -1
    top = 0
    stack[0] = 0
    while top >= 0:
        node = stack[top]
        top -= 1
        for q in range(deg[node], deg[node + 1]):
            e = adj[q]
            other = n + bj[e] if node < n else bi[e]
            if parent[other] != -2:
                continue
            _attach(other, node, parent, child, nxt, prv)
            parc[other] = e
            depth[other] = depth[node] + 1
            c = _arc_cost(C, dense, xa, xb, bi[e], bj[e], m)
            pot[other] = c - pot[node]
            top += 1
            stack[top] = other

    path = np.empty(N, dtype=np.int64)
    tail = np.empty(N, dtype=np.int64)
    chain = np.empty(N, dtype=np.int64)
    n_arcs = n * m
    block = max(int(np.sqrt(n_arcs)), 16)
    pos = 0
    status = ITERATION_LIMIT
    it = 0
    while it < max_iter:
        best = -tol
        ei = -1
        ej = -1
        scanned = 0
        while scanned < n_arcs:
            cnt = min(block, n_arcs - scanned)
            for t in range(cnt):
                e = pos + t
                if e >= n_arcs:
                    e -= n_arcs
                i = e // m
                j = e - i * m
                rc = _arc_cost(C, dense, xa, xb, i, j, m) - pot[i] - pot[n + j]
                if rc < best:
                    best = rc
                    ei = i
                    ej = j
            pos += cnt
            if pos >= n_arcs:
                pos -= n_arcs
            scanned += cnt
            if ei >= 0:
                break
        if ei < 0:
            status = OPTIMAL
            break
        rc_in = best
        # cycle through the tree: column side first, then the row side reversed
        p = ei
        q = n + ej
        lp = 0
        lt = 0
        while depth[q] > depth[p]:
            path[lp] = q
            lp += 1
            q = parent[q]
        while depth[p] > depth[q]:
            tail[lt] = p
            lt += 1
            p = parent[p]
        while p != q:
            path[lp] = q
            lp += 1
            q = parent[q]
            tail[lt] = p
            lt += 1
            p = parent[p]
        for k in range(lt):
            path[lp + k] = tail[lt - 1 - k]
        L = lp + lt
        # path[k] names the child node of the k-th tree arc; even positions lose flow
        theta = np.inf
        leave = -1
        for k in range(0, L, 2):
            f = bf[parc[path[k]]]
            if f < theta:
                theta = f
                leave = k
        for k in range(L):
            e = parc[path[k]]
            if k % 2 == 0:
                bf[e] -= theta
            else:
                bf[e] += theta
        cut = path[leave]              # root of the subtree that detaches
        slot = parc[cut]
        if leave < lp:
            s = n + ej                 # entering endpoint inside the subtree
            t_out = ei
        else:
            s = ei
            t_out = n + ej
        # reverse the parent chain s -> ... -> cut
        nc = 0
        w = s
        while True:
            chain[nc] = w
            nc += 1
            if w == cut:
                break
            w = parent[w]
        old_parc = np.empty(nc, dtype=np.int64)
        for k in range(nc):
            old_parc[k] = parc[chain[k]]
            _detach(chain[k], parent, child, nxt, prv)
        _attach(s, t_out, parent, child, nxt, prv)
        parc[s] = slot
        for k in range(nc - 1):
            _attach(chain[k + 1], chain[k], parent, child, nxt, prv)
            parc[chain[k + 1]] = old_parc[k]
        bi[slot] = ei
        bj[slot] = ej
        bf[slot] = theta
        # depths and potentials of the re-hung subtree
        s_row = s < n
        depth[s] = depth[t_out] + 1
        top = 0
        stack[0] = s
        while top >= 0:
            node = stack[top]
            top -= 1
            if (node < n) == s_row:
                pot[node] += rc_in
            else:
                pot[node] -= rc_in
            c = child[node]
            while c >= 0:
                depth[c] = depth[node] + 1
                top += 1
                stack[top] = c
                c = nxt[c]
        it += 1
    total = 0.0
    for e in range(nb):
        if bf[e] > 0:
            total += bf[e] * _arc_cost(C, dense, xa, xb, bi[e], bj[e], m)
    return total, bi, bj, bf, it, status
