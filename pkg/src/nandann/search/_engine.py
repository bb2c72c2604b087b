"""numba kernels for query-time traversal.

Both traversals emit an optional event log, one row per step, consumed by the
mapping and simulator modules. Event kinds are the EV_* constants below.
"""

import numpy as np
from numba import njit

EV_INDEX = 0  # neighbor-list fetch of the evaluated vertex (aux = degree)
EV_PQ = 1     # PQ code fetch + table-lookup distance of a newly touched vertex
EV_SORT = 2   # candidate-list sort (aux = number of sorter inputs)
EV_RAW = 3    # raw-vector fetch + exact distance

METRIC_L2 = 0
METRIC_IP = 1
METRIC_COS = 2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@njit(cache=True, inline="always")
def splitmix64(x):
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@njit(cache=True, inline="always")
def bloom_test_and_set(bits, m, h, key, seed):
    """Set the ``h`` bits of ``key``; return True if all were already set."""
    k = np.uint64(key)
    s = np.uint64(seed)
    h1 = splitmix64(k ^ s)
    h2 = splitmix64(k ^ (s * _GOLDEN + np.uint64(1))) | np.uint64(1)
    mm = np.uint64(m)
    present = True
    for i in range(h):
        pos = (h1 + np.uint64(i) * h2) % mm
        byte = np.int64(pos >> np.uint64(3))
        mask = np.uint8(1 << np.int64(pos & np.uint64(7)))
        if bits[byte] & mask == 0:
            present = False
            bits[byte] |= mask
    return present


@njit(cache=True, inline="always")
def bloom_test(bits, m, h, key, seed):
    k = np.uint64(key)
    s = np.uint64(seed)
    h1 = splitmix64(k ^ s)
    h2 = splitmix64(k ^ (s * _GOLDEN + np.uint64(1))) | np.uint64(1)
    mm = np.uint64(m)
    for i in range(h):
        pos = (h1 + np.uint64(i) * h2) % mm
        byte = np.int64(pos >> np.uint64(3))
        mask = np.uint8(1 << np.int64(pos & np.uint64(7)))
        if bits[byte] & mask == 0:
            return False
    return True


@njit(cache=True)
def bloom_insert_many(bits, m, h, keys, seed):
    for i in range(keys.shape[0]):
        bloom_test_and_set(bits, m, h, keys[i], seed)


@njit(cache=True)
def bloom_query_many(bits, m, h, keys, seed):
    out = np.empty(keys.shape[0], dtype=np.bool_)
    for i in range(keys.shape[0]):
        out[i] = bloom_test(bits, m, h, keys[i], seed)
    return out


@njit(cache=True, inline="always")
def pq_dist(adt, code):
    s = 0.0
    for i in range(code.shape[0]):
        s += np.float64(adt[i, code[i]])
    return np.float32(s)


@njit(cache=True, inline="always")
def exact_dist(q, x, metric):
    s = 0.0
    if metric == METRIC_L2:
        for t in range(q.shape[0]):
            d = np.float64(q[t]) - np.float64(x[t])
            s += d * d
    else:
        for t in range(q.shape[0]):
            s += np.float64(q[t]) * np.float64(x[t])
        s = -s if metric == METRIC_IP else 1.0 - s
    if s != s:
        return np.float32(np.inf)
    return np.float32(s)


@njit(cache=True, inline="always")
def _push(ev, n, kind, v, aux):
    if n == ev.shape[0]:
        grown = np.empty((2 * ev.shape[0], 3), dtype=np.int64)
        grown[:n] = ev[:n]
        ev = grown
    ev[n, 0] = kind
    ev[n, 1] = v
    ev[n, 2] = aux
    return ev


@njit(cache=True, inline="always")
def _insert(cid, cd, cexp, size, cap, u, du):
    """Insert into the (distance, id)-sorted list; returns the new size."""
    if size == cap:
        last_d = cd[size - 1]
        if du > last_d or (du == last_d and u > cid[size - 1]):
            return size
    k = size if size < cap else cap - 1
    while k > 0 and (cd[k - 1] > du or (cd[k - 1] == du and cid[k - 1] > u)):
        cd[k] = cd[k - 1]
        cid[k] = cid[k - 1]
        cexp[k] = cexp[k - 1]
        k -= 1
    cd[k] = du
    cid[k] = u
    cexp[k] = False
    return size + 1 if size < cap else size


@njit(cache=True)
def _top_k(ids, dists, k):
    """Indices of the k smallest (distance, id) pairs, ordered."""
    n = ids.shape[0]
    order = np.argsort(ids, kind="mergesort")
    order = order[np.argsort(dists[order], kind="mergesort")]
    return order[:min(k, n)]


@njit(cache=True, nogil=True)
def guided_search(nbrs, deg, entry, adt, codes, data, q, metric, k, L, T_init, T_step, r,
                  beta, et_enabled, rerank_enabled, use_bloom, bloom_m, bloom_h, bloom_seed,
                  mark, stamp, ex_mark, ex_val, record):
    """PQ-guided best-first search with dynamic list, early termination and
    threshold reranking.

    ``mark``/``ex_mark`` are caller-owned scratch arrays of length N tagged
    with ``stamp`` (exact visited set and exact-distance cache).
    Returns (ids, dists, counters, events); counters are
    [pq_count, exact_count, hops, visited, terminated_early, final_T].
    """
    n = nbrs.shape[0]
    cid = np.empty(L, dtype=np.int64)
    cd = np.empty(L, dtype=np.float32)
    cexp = np.zeros(L, dtype=np.bool_)
    bits = np.zeros((bloom_m + 7) // 8, dtype=np.uint8)
    ev = np.empty((1024 if record else 1, 3), dtype=np.int64)
    ne = 0

    pq_count = 0
    exact_count = 0
    hops = 0
    # entry point
    if use_bloom:
        bloom_test_and_set(bits, bloom_m, bloom_h, entry, bloom_seed)
    else:
        mark[entry] = stamp
    cid[0] = entry
    cd[0] = pq_dist(adt, codes[entry])
    size = 1
    pq_count += 1
    if record:
        ev = _push(ev, ne, EV_PQ, entry, 0)
        ne += 1

    prev = np.full(k, -1, dtype=np.int64)
    have_prev = False
    same = 0
    terminated = False
    T = T_init
    while T <= L:
        pos = -1
        for i in range(size):
            if not cexp[i]:
                pos = i
                break
        if pos >= 0:
            cexp[pos] = True
            v = cid[pos]
            hops += 1
            if record:
                ev = _push(ev, ne, EV_INDEX, v, deg[v])
                ne += 1
            before = size
            fresh = 0
            for j in range(deg[v]):
                u = nbrs[v, j]
                if u < 0 or u >= n:
                    continue  # corrupted id
                if use_bloom:
                    if bloom_test_and_set(bits, bloom_m, bloom_h, u, bloom_seed):
                        continue
                else:
                    if mark[u] == stamp:
                        continue
                    mark[u] = stamp
                du = pq_dist(adt, codes[u])
                pq_count += 1
                fresh += 1
                if record:
                    ev = _push(ev, ne, EV_PQ, u, 0)
                    ne += 1
                size = _insert(cid, cd, cexp, size, L, u, du)
            if record:
                ev = _push(ev, ne, EV_SORT, v, before + fresh)
                ne += 1
        top = min(T, size)
        done = True
        for i in range(top):
            if not cexp[i]:
                done = False
                break
        if done:
            if et_enabled:
                rd = np.empty(top, dtype=np.float32)
                for i in range(top):
                    u = cid[i]
                    if ex_mark[u] != stamp:
                        ex_mark[u] = stamp
                        ex_val[u] = exact_dist(q, data[u], metric)
                        exact_count += 1
                        if record:
                            ev = _push(ev, ne, EV_RAW, u, 0)
                            ne += 1
                    rd[i] = ex_val[u]
                sel = cid[:top][_top_k(cid[:top], rd, k)]
                cur = np.full(k, -1, dtype=np.int64)
                cur[:sel.shape[0]] = np.sort(sel)
                if have_prev and np.all(cur == prev):
                    same += 1
                else:
                    same = 0
                prev = cur
                have_prev = True
                if same >= r:
                    terminated = True
                    break
            T += T_step

    # final rerank: top T plus everything under the beta-scaled threshold
    top = min(T, size)
    thr = np.float64(cd[top - 1]) * beta
    m = size if rerank_enabled else top
    rid = np.empty(m, dtype=np.int64)
    rd = np.empty(m, dtype=np.float32)
    nr = 0
    for i in range(m):
        if i >= top and not np.float64(cd[i]) < thr:
            continue
        u = cid[i]
        if ex_mark[u] != stamp:
            ex_mark[u] = stamp
            ex_val[u] = exact_dist(q, data[u], metric)
            exact_count += 1
            if record:
                ev = _push(ev, ne, EV_RAW, u, 0)
                ne += 1
        rid[nr] = u
        rd[nr] = ex_val[u]
        nr += 1
    sel = _top_k(rid[:nr], rd[:nr], k)
    out_ids = np.full(k, -1, dtype=np.int64)
    out_d = np.full(k, np.inf, dtype=np.float32)
    for i in range(sel.shape[0]):
        out_ids[i] = rid[sel[i]]
        out_d[i] = rd[sel[i]]
    counters = np.array([pq_count, exact_count, hops, pq_count, 1 if terminated else 0, T],
                        dtype=np.int64)
    return out_ids, out_d, counters, ev[:ne].copy()


@njit(cache=True, nogil=True)
def exact_search(nbrs, deg, entry, data, q, metric, k, L, mark, stamp, record):
    """Classic best-first search on exact distances (no compression)."""
    n = nbrs.shape[0]
    cid = np.empty(L, dtype=np.int64)
    cd = np.empty(L, dtype=np.float32)
    cexp = np.zeros(L, dtype=np.bool_)
    ev = np.empty((1024 if record else 1, 3), dtype=np.int64)
    ne = 0
    mark[entry] = stamp
    cid[0] = entry
    cd[0] = exact_dist(q, data[entry], metric)
    size = 1
    count = 1
    hops = 0
    if record:
        ev = _push(ev, ne, EV_RAW, entry, 0)
        ne += 1
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
        hops += 1
        if record:
            ev = _push(ev, ne, EV_INDEX, v, deg[v])
            ne += 1
        before = size
        fresh = 0
        for j in range(deg[v]):
            u = nbrs[v, j]
            if u < 0 or u >= n or mark[u] == stamp:
                continue
            mark[u] = stamp
            du = exact_dist(q, data[u], metric)
            count += 1
            fresh += 1
            if record:
                ev = _push(ev, ne, EV_RAW, u, 0)
                ne += 1
            size = _insert(cid, cd, cexp, size, L, u, du)
        if record:
            ev = _push(ev, ne, EV_SORT, v, before + fresh)
            ne += 1
    out_ids = np.full(k, -1, dtype=np.int64)
    out_d = np.full(k, np.inf, dtype=np.float32)
    m = min(k, size)
    out_ids[:m] = cid[:m]
    out_d[:m] = cd[:m]
    counters = np.array([0, count, hops, count, 0, L], dtype=np.int64)
    return out_ids, out_d, counters, ev[:ne].copy()
