"""numba kernels for the tight loops (k-means assignment, graph construction)."""

import numpy as np
from numba import njit


@njit(cache=True)
def nearest_center(X, C):
    """Index of and squared distance to the nearest row of C, for every row of X.

    Ties resolve to the smaller centroid index.
    """
    n, d = X.shape
    k = C.shape[0]
    Ct = np.ascontiguousarray(C.T)
    assign = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    acc = np.empty(k, dtype=np.float64)
    for i in range(n):
        acc[:] = 0.0
        for t in range(d):
            xt = X[i, t]
            for j in range(k):
                diff = xt - Ct[t, j]
                acc[j] += diff * diff
        bi = 0
        bd = acc[0]
        for j in range(1, k):
            if acc[j] < bd:
                bd = acc[j]
                bi = j
        assign[i] = bi
        best[i] = bd
    return assign, best


@njit(cache=True)
def min_update(X, c, closest):
    n, d = X.shape
    for i in range(n):
        s = 0.0
        for t in range(d):
            diff = X[i, t] - c[t]
            s += diff * diff
        if s < closest[i]:
            closest[i] = s


@njit(cache=True)
def sq_dist(a, b):
    s = np.float32(0.0)
    for t in range(a.shape[0]):
        diff = a[t] - b[t]
        s += diff * diff
    return s


@njit(cache=True)
def greedy_search(data, nbrs, deg, entry, q, L, mark, stamp):
    """Best-first search used during construction.

    Returns the final list (ids, distances) and the evaluated vertices in
    evaluation order (ids, distances). ``mark``/``stamp`` give an O(1)-reset
    visited set.
    """
    cap = L
    cid = np.empty(cap + 1, dtype=np.int64)
    cd = np.empty(cap + 1, dtype=np.float32)
    cexp = np.zeros(cap + 1, dtype=np.bool_)
    vis_cap = 64
    vid = np.empty(vis_cap, dtype=np.int64)
    vd = np.empty(vis_cap, dtype=np.float32)
    nv = 0
    cid[0] = entry
    cd[0] = sq_dist(q, data[entry])
    cexp[0] = False
    size = 1
    mark[entry] = stamp
    while True:
        pos = -1
        for i in range(size):
            if not cexp[i]:
                pos = i
                break
        if pos < 0:
            break
        cexp[pos] = True
        v = cid[pos]
        if nv == vis_cap:
            vis_cap *= 2
            nvid = np.empty(vis_cap, dtype=np.int64)
            nvd = np.empty(vis_cap, dtype=np.float32)
            nvid[:nv] = vid[:nv]
            nvd[:nv] = vd[:nv]
            vid = nvid
            vd = nvd
        vid[nv] = v
        vd[nv] = cd[pos]
        nv += 1
        for j in range(deg[v]):
            u = nbrs[v, j]
            if mark[u] == stamp:
                continue
            mark[u] = stamp
            du = sq_dist(q, data[u])
            if size == cap and du >= cd[size - 1]:
                continue
            # insertion into the sorted list
            k = size if size < cap else cap - 1
            while k > 0 and (cd[k - 1] > du or (cd[k - 1] == du and cid[k - 1] > u)):
                cd[k] = cd[k - 1]
                cid[k] = cid[k - 1]
                cexp[k] = cexp[k - 1]
                k -= 1
            cd[k] = du
            cid[k] = u
            cexp[k] = False
            if size < cap:
                size += 1
    return cid[:size].copy(), cd[:size].copy(), vid[:nv].copy(), vd[:nv].copy()


@njit(cache=True)
def robust_prune(data, p, cand, cand_d, alpha2, R, out):
    """Alpha-pruned neighbor selection for vertex ``p``; writes into ``out``.

    Works on squared distances, so ``alpha2`` is alpha squared. Returns the
    number of selected neighbors.
    """
    n = cand.shape[0]
    order = np.argsort(cand_d, kind="mergesort")
    alive = np.ones(n, dtype=np.bool_)
    # drop p itself and duplicate ids
    for a in range(n):
        ia = order[a]
        if cand[ia] == p:
            alive[ia] = False
            continue
        for b in range(a):
            ib = order[b]
            if alive[ib] and cand[ib] == cand[ia]:
                alive[ia] = False
                break
    m = 0
    for a in range(n):
        ia = order[a]
        if not alive[ia]:
            continue
        alive[ia] = False
        star = cand[ia]
        out[m] = star
        m += 1
        if m == R:
            break
        for b in range(a + 1, n):
            ib = order[b]
            if alive[ib]:
                if alpha2 * sq_dist(data[star], data[cand[ib]]) <= cand_d[ib]:
                    alive[ib] = False
    return m


@njit(cache=True)
def _prune_row(data, u, nbrs, deg, alpha2, R, out):
    d = deg[u]
    cand = nbrs[u, :d].copy()
    cand_d = np.empty(d, dtype=np.float32)
    for t in range(d):
        cand_d[t] = sq_dist(data[u], data[cand[t]])
    m = robust_prune(data, u, cand, cand_d, alpha2, R, out)
    deg[u] = m
    for t in range(m):
        nbrs[u, t] = out[t]
    for t in range(m, nbrs.shape[1]):
        nbrs[u, t] = -1


@njit(cache=True)
def vamana_pass(data, nbrs, deg, entry, order, L, alpha, R, max_pool):
    """One insertion pass. ``nbrs`` may be wider than R: rows grow into the
    slack from back edges and are pruned back to R only when it fills up."""
    n = data.shape[0]
    width = nbrs.shape[1]
    mark = np.zeros(n, dtype=np.int64)
    alpha2 = alpha * alpha
    out = np.empty(R, dtype=np.int64)
    stamp = 0
    for idx in range(order.shape[0]):
        p = order[idx]
        stamp += 1
        _, _, vid, vd = greedy_search(data, nbrs, deg, entry, data[p], L, mark, stamp)
        # pool = visited set plus current neighbors, trimmed to the closest max_pool
        dp = deg[p]
        pool = np.empty(vid.shape[0] + dp, dtype=np.int64)
        pool_d = np.empty(vid.shape[0] + dp, dtype=np.float32)
        pool[:vid.shape[0]] = vid
        pool_d[:vid.shape[0]] = vd
        for j in range(dp):
            u = nbrs[p, j]
            pool[vid.shape[0] + j] = u
            pool_d[vid.shape[0] + j] = sq_dist(data[p], data[u])
        if pool.shape[0] > max_pool:
            keep = np.argsort(pool_d, kind="mergesort")[:max_pool]
            pool = pool[keep]
            pool_d = pool_d[keep]
        m = robust_prune(data, p, pool, pool_d, alpha2, R, out)
        deg[p] = m
        for j in range(m):
            nbrs[p, j] = out[j]
        for j in range(m, width):
            nbrs[p, j] = -1
        # back edges
        sel = out[:m].copy()
        for j in range(m):
            u = sel[j]
            present = False
            for t in range(deg[u]):
                if nbrs[u, t] == p:
                    present = True
                    break
            if present:
                continue
            if deg[u] == width:
                _prune_row(data, u, nbrs, deg, alpha2, R, out)
            nbrs[u, deg[u]] = p
            deg[u] += 1


@njit(cache=True)
def finalize_degrees(data, nbrs, deg, alpha, R):
    alpha2 = alpha * alpha
    out = np.empty(R, dtype=np.int64)
    for u in range(nbrs.shape[0]):
        if deg[u] > R:
            _prune_row(data, u, nbrs, deg, alpha2, R, out)


@njit(cache=True)
def reachable(nbrs, deg, start):
    n = nbrs.shape[0]
    seen = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    top = 0
    stack[0] = start
    top = 1
    seen[start] = True
    while top > 0:
        top -= 1
        v = stack[top]
        for j in range(deg[v]):
            u = nbrs[v, j]
            if not seen[u]:
                seen[u] = True
                stack[top] = u
                top += 1
    return seen
