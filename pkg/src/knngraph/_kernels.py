"""Compiled inner loops.

Everything that touches individual pairs lives here so that the brute-force
oracle and the approximate builder share one distance kernel and one
neighbor-list insertion routine.  Distances from both paths are therefore
bit-identical, which the tie rule and exact-equivalence tests rely on.

Graph storage is three arrays: ``ids`` (n, k) int32 padded with -1,
``dists`` (n, k) float64 padded with +inf, and ``counts`` (n,) int32.
"""

import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

EUCLIDEAN = 0
COSINE = 1

# slots of the int64 counter array carried by a PairCache
HITS = 0
MISSES = 1
KERNEL_CALLS = 2
HASH_COUNT = 3
COUNTER_SLOTS = 4

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)

# Options for the pair-level loops.  Numba's IR inliner rebinds array
# arguments of every inlined helper, and the resulting reference-count
# updates (atomic operations) inside the innermost loops cost several times
# the real work.  These entry points allocate nothing -- callers pass all
# output and scratch arrays -- so they are compiled without the runtime.
_HOT = dict(cache=True, _nrt=False)


# ---------------------------------------------------------------------------
# software prefetch
#
# Propagation hops between random points, and every hop chains dependent
# cache misses (neighbor row -> cache labels -> stored value).  Issuing
# prefetches for a batch of candidates before touching them lets those
# misses overlap.  Pure hints: no effect on results.
# ---------------------------------------------------------------------------


def _emit_prefetch(context, builder, aty, ary_val, indices):
    ary = context.make_array(aty)(context, builder, ary_val)
    ptr = cgutils.get_item_pointer(context, builder, aty, ary, indices,
                                   wraparound=False, boundscheck=False)
    i8p = ir.IntType(8).as_pointer()
    i32 = ir.IntType(32)
    fnty = ir.FunctionType(ir.VoidType(), [i8p, i32, i32, i32])
    fn = cgutils.get_or_insert_function(builder.module, fnty, "llvm.prefetch.p0i8")
    # read access, high temporal locality, data cache
    builder.call(fn, [builder.bitcast(ptr, i8p), ir.Constant(i32, 0),
                      ir.Constant(i32, 3), ir.Constant(i32, 1)])


@intrinsic
def prefetch(typingctx, arr, i):
    """Prefetch ``arr[i]`` of a 1-D array."""
    if not (isinstance(arr, types.Array) and arr.ndim == 1 and isinstance(i, types.Integer)):
        return None

    def codegen(context, builder, sig, args):
        idx = context.cast(builder, args[1], sig.args[1], types.intp)
        _emit_prefetch(context, builder, sig.args[0], args[0], [idx])
        return context.get_dummy_value()

    return types.none(arr, i), codegen


@intrinsic
def prefetch_row(typingctx, arr, i):
    """Prefetch the start of row ``i`` of a 2-D C-contiguous array."""
    if not (isinstance(arr, types.Array) and arr.ndim == 2 and isinstance(i, types.Integer)):
        return None

    def codegen(context, builder, sig, args):
        idx = context.cast(builder, args[1], sig.args[1], types.intp)
        zero = context.get_constant(types.intp, 0)
        _emit_prefetch(context, builder, sig.args[0], args[0], [idx, zero])
        return context.get_dummy_value()

    return types.none(arr, i), codegen


@njit(cache=True, inline="always")
def raw_distance(X, norms, metric, i, j, counters, slot, trace):
    """The one distance kernel.

    Every call increments ``counters[slot]``.  ``trace`` is None in normal
    runs (the branch compiles away); when it is an (m, 2) array the first m
    evaluated pairs are recorded in call order.
    """
    if metric == EUCLIDEAN:
        s = 0.0
        for t in range(X.shape[1]):
            v = X[i, t] - X[j, t]
            s += v * v
        d = np.sqrt(s)
    else:
        s = 0.0
        for t in range(X.shape[1]):
            s += X[i, t] * X[j, t]
        d = 1.0 - s / (norms[i] * norms[j])
        d = min(max(d, 0.0), 2.0)
    c = counters[slot]
    if trace is not None:
        if c < trace.shape[0]:
            trace[c, 0] = i
            trace[c, 1] = j
    counters[slot] = c + 1
    return d


@njit(cache=True)
def batch_distance(X, norms, metric, left, right):
    """Uncounted distances for validation; same arithmetic as raw_distance."""
    out = np.empty(left.shape[0])
    calls = np.zeros(1, np.int64)
    for t in range(left.shape[0]):
        out[t] = raw_distance(X, norms, metric, left[t], right[t], calls, 0, None)
    return out


@njit(cache=True, inline="always")
def try_insert(ids, dists, counts, p, q, d):
    """Offer neighbor ``q`` at distance ``d`` to row ``p``; keep k best by (dist, id)."""
    k = ids.shape[1]
    c = counts[p]
    if c == k:
        wd = dists[p, k - 1]
        if d > wd or (d == wd and q >= ids[p, k - 1]):
            return False
    for t in range(c):
        if ids[p, t] == q:
            return False
    pos = c if c < k else k - 1
    while pos > 0:
        pd = dists[p, pos - 1]
        if pd > d or (pd == d and ids[p, pos - 1] > q):
            dists[p, pos] = pd
            ids[p, pos] = ids[p, pos - 1]
            pos -= 1
        else:
            break
    dists[p, pos] = d
    ids[p, pos] = q
    if c < k:
        counts[p] = c + 1
    return True


@njit(**_HOT)
def brute_force(X, norms, metric, calls, trace, block, ids, dists, counts):
    """Exact k-NN rows into empty graph arrays, one query row at a time,
    tiled over candidate blocks."""
    # each branch inlines a body specialized on a constant metric
    if metric == EUCLIDEAN:
        _brute_force(X, norms, EUCLIDEAN, calls, trace, block, ids, dists, counts)
    else:
        _brute_force(X, norms, COSINE, calls, trace, block, ids, dists, counts)


@njit(cache=True, inline="always")
def _brute_force(X, norms, metric, calls, trace, block, ids, dists, counts):
    n = X.shape[0]
    for r0 in range(0, n, block):
        r1 = min(n, r0 + block)
        for c0 in range(0, n, block):
            c1 = min(n, c0 + block)
            for i in range(r0, r1):
                for j in range(c0, c1):
                    if i != j:
                        d = raw_distance(X, norms, metric, i, j, calls, 0, trace)
                        try_insert(ids, dists, counts, i, j, d)


# ---------------------------------------------------------------------------
# pair cache
#
# Membership of a pair {i, j} is "i and j shared a processed leaf in some
# division" or "the pair sits in the overflow hash table".  A leaf's distances
# live in a packed upper triangle (by position inside the leaf) at
# values[leaf_base[leaf]:].  A pair's value is read from the block of the
# earliest division that placed both points in one leaf, or from the hash.
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _cell(base, size, a, b):
    if a > b:
        a, b = b, a
    return base + a * (2 * size - a - 1) // 2 + (b - a - 1)


@njit(cache=True, inline="always")
def _pair_key(i, j, n):
    if i > j:
        i, j = j, i
    return np.uint64(i) * np.uint64(n) + np.uint64(j) + np.uint64(1)


@njit(cache=True, inline="always")
def _hash_slot(hkeys, key):
    mask = hkeys.shape[0] - 1
    s = np.int64(((key * _GOLDEN) >> np.uint64(17)) & np.uint64(mask))
    while True:
        kk = hkeys[s]
        if kk == key or kk == 0:
            return s
        s = (s + 1) & mask


@njit(cache=True)
def rehash(hkeys, hvals, keys, vals):
    for t in range(keys.shape[0]):
        s = _hash_slot(hkeys, keys[t])
        hkeys[s] = keys[t]
        hvals[s] = vals[t]


@njit(cache=True, inline="always")
def _coleaf_division(labels, ndiv, i, j):
    """Earliest division among the first ``ndiv`` that put i and j in one leaf, or -1."""
    for m in range(ndiv):
        a = labels[i, m]
        if a >= 0 and a == labels[j, m]:
            return m
    return -1


@njit(cache=True, inline="always")
def _coleaf_cell(labels, pos, leaf_base, leaf_size, ndiv, i, j):
    """Index into ``values`` of the stored {i, j} distance, or -1 if never co-leaf."""
    m = _coleaf_division(labels, ndiv, i, j)
    if m < 0:
        return -1
    a = labels[i, m]
    return _cell(leaf_base[a], leaf_size[a], pos[i, m], pos[j, m])


@njit(cache=True, inline="always")
def _hash_get_or_compute(X, norms, metric, hkeys, hvals, counters, trace, i, j):
    """Hash-table part of a lookup; computes and records the pair on a miss."""
    key = _pair_key(i, j, X.shape[0])
    s = _hash_slot(hkeys, key)
    if hkeys[s] == key:
        counters[HITS] += 1
        return hvals[s]
    d = raw_distance(X, norms, metric, i, j, counters, KERNEL_CALLS, trace)
    hkeys[s] = key
    hvals[s] = d
    counters[HASH_COUNT] += 1
    counters[MISSES] += 1
    return d


@njit(cache=True, inline="always")
def cache_get(X, norms, metric, labels, pos, leaf_base, leaf_size, values, ndiv,
              hkeys, hvals, counters, trace, i, j):
    """Distance of {i, j}: stored value on a hit, computed and recorded on a miss.

    The caller guarantees the hash table has room for one insertion.
    """
    cell = _coleaf_cell(labels, pos, leaf_base, leaf_size, ndiv, i, j)
    if cell >= 0:
        counters[HITS] += 1
        return values[cell]
    return _hash_get_or_compute(X, norms, metric, hkeys, hvals, counters, trace, i, j)


@njit(**_HOT)
def process_leaves(X, norms, metric, labels, pos, leaf_base, leaf_size, values, m,
                   hkeys, hvals, counters, trace, ids, dists, counts,
                   members, bounds, leaf_ids, skip_hits, li):
    if metric == EUCLIDEAN:
        _process_leaves(X, norms, EUCLIDEAN, labels, pos, leaf_base, leaf_size, values, m,
                        hkeys, hvals, counters, trace, ids, dists, counts,
                        members, bounds, leaf_ids, skip_hits, li)
    else:
        _process_leaves(X, norms, COSINE, labels, pos, leaf_base, leaf_size, values, m,
                        hkeys, hvals, counters, trace, ids, dists, counts,
                        members, bounds, leaf_ids, skip_hits, li)


@njit(cache=True, inline="always")
def _process_leaves(X, norms, metric, labels, pos, leaf_base, leaf_size, values, m,
                    hkeys, hvals, counters, trace, ids, dists, counts,
                    members, bounds, leaf_ids, skip_hits, li):
    """All-pairs work for the leaves of division ``m``.

    ``members[bounds[t]:bounds[t+1]]`` is leaf ``leaf_ids[t]``.  Labels and
    positions for division ``m`` must already be assigned.  With ``skip_hits``
    a cached pair is not re-offered to the graph: every cached pair has already
    been offered to both endpoint lists and lists only improve, so a re-offer
    cannot change anything.  ``li`` is int32 scratch of length >= m.
    """
    n = X.shape[0]
    use_hash = counters[HASH_COUNT] > 0
    for t in range(leaf_ids.shape[0]):
        lo = bounds[t]
        size = bounds[t + 1] - lo
        base = leaf_base[leaf_ids[t]]
        for a in range(size):
            i = members[lo + a]
            # unassigned (-1) slots of i become -2 so they never match
            for u in range(m):
                li[u] = labels[i, u] if labels[i, u] >= 0 else -2
            for b in range(a + 1, size):
                j = members[lo + b]
                # branch-free "shared a leaf before?" so the scan vectorizes
                seen = False
                for u in range(m):
                    seen |= li[u] == labels[j, u]
                if seen:
                    counters[HITS] += 1
                    if not skip_hits:
                        mm = _coleaf_division(labels, m, i, j)
                        a0 = labels[i, mm]
                        v = values[_cell(leaf_base[a0], leaf_size[a0], pos[i, mm], pos[j, mm])]
                        try_insert(ids, dists, counts, i, j, v)
                        try_insert(ids, dists, counts, j, i, v)
                    continue
                idx = base + a * (2 * size - a - 1) // 2 + (b - a - 1)
                if use_hash:
                    key = _pair_key(i, j, n)
                    s = _hash_slot(hkeys, key)
                    if hkeys[s] == key:
                        counters[HITS] += 1
                        values[idx] = hvals[s]
                        if not skip_hits:
                            try_insert(ids, dists, counts, i, j, hvals[s])
                            try_insert(ids, dists, counts, j, i, hvals[s])
                        continue
                d = raw_distance(X, norms, metric, i, j, counters, KERNEL_CALLS, trace)
                counters[MISSES] += 1
                values[idx] = d
                try_insert(ids, dists, counts, i, j, d)
                try_insert(ids, dists, counts, j, i, d)


# ---------------------------------------------------------------------------
# best-first propagation
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _heap_push(hd, hi, size, d, q):
    """Insert (d, q) into the binary min-heap hd/hi[:size]; returns the new size."""
    c = size
    while c > 0:
        parent = (c - 1) >> 1
        pd = hd[parent]
        if d < pd or (d == pd and q < hi[parent]):
            hd[c] = pd
            hi[c] = hi[parent]
            c = parent
        else:
            break
    hd[c] = d
    hi[c] = q
    return size + 1


@njit(cache=True, inline="always")
def _heap_pop(hd, hi, size):
    """Remove the (dist, id)-smallest entry; returns (its id, new size)."""
    top = hi[0]
    size -= 1
    d = hd[size]
    q = hi[size]
    # bottom-up: walk the hole to a leaf along smaller children, then sift the
    # displaced last entry back up; fewer comparisons than a classic sift-down
    c = 0
    while True:
        left = 2 * c + 1
        if left >= size:
            break
        best = left
        right = left + 1
        if right < size:
            dl = hd[left]
            dr = hd[right]
            if dr < dl or (dr == dl and hi[right] < hi[left]):
                best = right
        hd[c] = hd[best]
        hi[c] = hi[best]
        c = best
    while c > 0:
        parent = (c - 1) >> 1
        pd = hd[parent]
        if d < pd or (d == pd and q < hi[parent]):
            hd[c] = pd
            hi[c] = hi[parent]
            c = parent
        else:
            break
    hd[c] = d
    hi[c] = q
    return top, size


@njit(**_HOT)
def propagate_points(X, norms, metric, labels, pos, leaf_base, leaf_size, values, ndiv,
                     hkeys, hvals, counters, trace, ids, dists, counts,
                     points, T, stamp, stamp_base, visits, hd, hi, rb, cb, db):
    if metric == EUCLIDEAN:
        _propagate_points(X, norms, EUCLIDEAN, labels, pos, leaf_base, leaf_size, values, ndiv,
                          hkeys, hvals, counters, trace, ids, dists, counts,
                          points, T, stamp, stamp_base, visits, hd, hi, rb, cb, db)
    else:
        _propagate_points(X, norms, COSINE, labels, pos, leaf_base, leaf_size, values, ndiv,
                          hkeys, hvals, counters, trace, ids, dists, counts,
                          points, T, stamp, stamp_base, visits, hd, hi, rb, cb, db)


@njit(cache=True, inline="always")
def _propagate_points(X, norms, metric, labels, pos, leaf_base, leaf_size, values, ndiv,
                      hkeys, hvals, counters, trace, ids, dists, counts,
                      points, T, stamp, stamp_base, visits, hd, hi, rb, cb, db):
    """Best-first expansion for each point of ``points`` against the live graph.

    ``stamp`` is an (n,) int64 scratch array; generation numbers start above
    ``stamp_base`` so it never needs clearing.  ``visits[t]`` receives the
    number of visited points for ``points[t]``.  Scratch: ``hd``/``hi`` heap
    keys and ids of length >= T, ``rb``/``cb``/``db`` of length >= k.
    """
    for t in range(points.shape[0]):
        p = points[t]
        gen = stamp_base + t + 1
        stamp[p] = gen
        size = 0
        nvis = 0
        for e in range(counts[p]):
            if nvis >= T:
                break
            q = ids[p, e]
            stamp[q] = gen
            nvis += 1
            size = _heap_push(hd, hi, size, dists[p, e], q)
        while size > 0 and nvis < T:
            q, size = _heap_pop(hd, hi, size)
            if size > 0:
                prefetch_row(ids, hi[0])
            # q's list cannot change while its entries are handled (updates
            # touch only p's and r's lists), so the unvisited entries are
            # gathered first and then looked up and applied in stages, with
            # prefetches issued a stage ahead
            c = 0
            for e in range(counts[q]):
                r = ids[q, e]
                if stamp[r] == gen:
                    continue
                stamp[r] = gen
                prefetch_row(labels, r)
                prefetch_row(pos, r)
                prefetch_row(dists, r)
                rb[c] = r
                c += 1
                nvis += 1
                if nvis >= T:
                    break
            for e in range(c):
                cell = _coleaf_cell(labels, pos, leaf_base, leaf_size, ndiv, p, rb[e])
                if cell >= 0:
                    prefetch(values, cell)
                cb[e] = cell
            for e in range(c):
                if cb[e] >= 0:
                    counters[HITS] += 1
                    db[e] = values[cb[e]]
                else:
                    db[e] = _hash_get_or_compute(X, norms, metric, hkeys, hvals, counters,
                                                 trace, p, rb[e])
            for e in range(c):
                r = rb[e]
                d = db[e]
                try_insert(ids, dists, counts, p, r, d)
                try_insert(ids, dists, counts, r, p, d)
                size = _heap_push(hd, hi, size, d, r)
        visits[t] = nvis


# ---------------------------------------------------------------------------
# misc
# ---------------------------------------------------------------------------


@njit(cache=True)
def fnv1a64(buf):
    h = np.uint64(0xCBF29CE484222325)
    prime = np.uint64(0x100000001B3)
    for t in range(buf.shape[0]):
        h = (h ^ np.uint64(buf[t])) * prime
    return h


@njit(cache=True)
def edge_overlap(a_ids, a_counts, b_ids, b_counts):
    """Number of directed edges (owner, id) present in both graphs."""
    total = 0
    for p in range(a_ids.shape[0]):
        for s in range(a_counts[p]):
            q = a_ids[p, s]
            for t in range(b_counts[p]):
                if b_ids[p, t] == q:
                    total += 1
                    break
    return total


# ---------------------------------------------------------------------------
# partitioning
# ---------------------------------------------------------------------------


@njit(cache=True)
def sample_without_replacement(rng, subset, size):
    """``size`` distinct entries of ``subset`` by a partial Fisher-Yates shuffle."""
    pool = subset.copy()
    m = pool.shape[0]
    for t in range(size):
        u = rng.integers(t, m)
        pool[t], pool[u] = pool[u], pool[t]
    return pool[:size].copy()


@njit(cache=True)
def principal_direction(X, subset, pca_sample, iters, rng):
    """Sample, draw a random unit start, and power-iterate.

    Returns a unit vector, or an empty array if the sample is degenerate.
    """
    if subset.shape[0] > pca_sample:
        sample = sample_without_replacement(rng, subset, pca_sample)
    else:
        sample = subset
    v = rng.standard_normal(X.shape[1])
    v /= np.sqrt(v @ v)
    return power_direction(X, sample, v, iters)


@njit(cache=True)
def divide(X, g, pca_sample, iters, rng):
    """One random division of all rows of X.

    Returns ``members`` (leaf after leaf, each ascending), ``bounds`` (leaf t is
    members[bounds[t]:bounds[t+1]]), the maximum depth and the number of
    degenerate splits.  Leaves are emitted depth first, left before right.
    """
    n = X.shape[0]
    members = np.empty(n, np.int64)
    bounds = np.zeros(n + 1, np.int64)
    n_leaves = 0
    top = 0
    depth = 0
    degenerate = 0
    # explicit stack of (ids, level)
    stack = [(np.arange(n), 0)]
    while len(stack) > 0:
        ids, level = stack.pop()
        m = ids.shape[0]
        if m < g:
            members[top:top + m] = ids
            top += m
            n_leaves += 1
            bounds[n_leaves] = top
            depth = max(depth, level)
            continue
        v = principal_direction(X, ids, pca_sample, iters, rng)
        side = np.empty(0, np.int8)
        if v.shape[0] == 0:
            degenerate += 1
        else:
            side = median_split(X, ids, v)
        if side.shape[0] == 0:
            half = (m + 1) // 2
            left = ids[:half].copy()
            right = ids[half:].copy()
        else:
            left = ids[side == 0]
            right = ids[side == 1]
        stack.append((right, level + 1))
        stack.append((left, level + 1))
    return members, bounds[:n_leaves + 1].copy(), depth, degenerate


@njit(cache=True)
def power_direction(X, sample, v, iters):
    """Power iteration for the top eigenvector of the centered scatter of X[sample].

    ``v`` is the unit start vector.  Returns a unit vector, or an empty array
    when the sampled rows are all identical.
    """
    d = X.shape[1]
    s = sample.shape[0]
    mean = np.zeros(d)
    for t in range(s):
        for c in range(d):
            mean[c] += X[sample[t], c]
    mean /= s
    Y = np.empty((s, d))
    nonzero = False
    for t in range(s):
        for c in range(d):
            y = X[sample[t], c] - mean[c]
            Y[t, c] = y
            nonzero |= y != 0.0
    if not nonzero:
        return np.empty(0)
    C = Y.T @ Y
    for _ in range(iters):
        w = C @ v
        norm = np.sqrt(w @ w)
        if norm == 0.0:
            # start orthogonal to the sample span; restart from the longest row
            best = 0
            best_sq = -1.0
            for t in range(s):
                sq = Y[t] @ Y[t]
                if sq > best_sq:
                    best, best_sq = t, sq
            w = Y[best].copy()
            norm = np.sqrt(w @ w)
        v = w / norm
    return v


@njit(cache=True)
def median_split(X, ids, direction):
    """Side (0 left, 1 right) of each id under a median split along ``direction``.

    Values tied with the median go, in the given order, to the currently
    smaller side (left on ties).  Returns an empty array when every projection
    is equal.
    """
    m = ids.shape[0]
    proj = np.empty(m)
    for t in range(m):
        proj[t] = X[ids[t]] @ direction
    med = np.median(proj)
    side = np.empty(m, np.int8)
    n_left = 0
    n_right = 0
    for t in range(m):
        if proj[t] < med:
            side[t] = 0
            n_left += 1
        elif proj[t] > med:
            side[t] = 1
            n_right += 1
        else:
            side[t] = 2
    if n_left + n_right == 0:
        return np.empty(0, np.int8)
    for t in range(m):
        if side[t] == 2:
            if n_left <= n_right:
                side[t] = 0
                n_left += 1
            else:
                side[t] = 1
                n_right += 1
    return side
