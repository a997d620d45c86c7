# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tree kernels: bit-identical twin of ``_pykernels``.

Every floating-point expression here mirrors the numpy reference with the
same operand order (the extension is compiled with -ffp-contract=off so no
FMA fusion can change roundings), the SplitMix64 stream is consumed at the
same points, and nodes are created in the same depth-first order.  The
parity test suite asserts bitwise-equal trees on random instances.
"""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport int32_t, uint64_t
from libc.stdlib cimport free, malloc, qsort

cnp.import_array()

cdef double TIE_REL = 1e-12
cdef double PURITY_REL = 1e-12


cdef inline uint64_t _next64(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] = state[0] + <uint64_t>0x9E3779B97F4A7C15UL
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9UL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBUL
    return z ^ (z >> 31)


cdef inline uint64_t _bounded(uint64_t* state, uint64_t k) noexcept nogil:
    cdef uint64_t mask = k - 1
    cdef uint64_t r
    mask |= mask >> 1
    mask |= mask >> 2
    mask |= mask >> 4
    mask |= mask >> 8
    mask |= mask >> 16
    mask |= mask >> 32
    while True:
        r = _next64(state) & mask
        if r < k:
            return r


cdef struct KV:
    double v
    int i


cdef int _kv_cmp(const void* pa, const void* pb) noexcept nogil:
    # order by value, then original rank: unique keys, so any comparison
    # sort realizes the same order as a stable argsort
    cdef const KV* a = <const KV*>pa
    cdef const KV* b = <const KV*>pb
    if a.v < b.v:
        return -1
    if a.v > b.v:
        return 1
    if a.i < b.i:
        return -1
    if a.i > b.i:
        return 1
    return 0


cdef struct Frame:
    int node
    int start
    int end


def grow(X, y, c, double min_count, int mtry, seed):
    """Drop-in replacement for ``_pykernels.grow``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xa = \
        np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ya = np.asarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ca = np.asarray(c, dtype=np.float64)
    cdef Py_ssize_t m = Xa.shape[0]
    cdef int p = <int>Xa.shape[1]
    if m == 0:
        raise ValueError("cannot grow a tree with no member rows")
    if mtry > p:
        mtry = p
    if mtry < 1:
        mtry = 1

    cdef cnp.ndarray[cnp.float64_t, ndim=1] cya = ca * ya

    # capacity: every leaf keeps >= min_count weight and >= 1 row
    cdef double total = 0.0
    cdef Py_ssize_t t
    for t in range(m):
        total += ca[t]
    cdef Py_ssize_t max_leaves = <Py_ssize_t>(total / (min_count if min_count > 1.0 else 1.0))
    if max_leaves > m:
        max_leaves = m
    if max_leaves < 1:
        max_leaves = 1
    cdef Py_ssize_t cap = 2 * max_leaves + 3

    cdef cnp.ndarray[cnp.int32_t, ndim=1] feature = np.full(cap, -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] threshold = np.zeros(cap, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] left = np.full(cap, -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] right = np.full(cap, -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] count = np.zeros(cap, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mean = np.zeros(cap, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] leaf_of = np.empty(m, dtype=np.int32)

    cdef uint64_t state = <uint64_t>(int(seed) & ((1 << 64) - 1))

    cdef int32_t* idx = <int32_t*>malloc(m * sizeof(int32_t))
    cdef int32_t* scratch = <int32_t*>malloc(m * sizeof(int32_t))
    cdef KV* kv = <KV*>malloc(m * sizeof(KV))
    cdef double* gains = <double*>malloc(m * sizeof(double))
    cdef int* cand = <int*>malloc(p * sizeof(int))
    cdef Frame* stack = <Frame*>malloc((cap + 1) * sizeof(Frame))
    if idx == NULL or scratch == NULL or kv == NULL or gains == NULL \
            or cand == NULL or stack == NULL:
        free(idx); free(scratch); free(kv); free(gains); free(cand); free(stack)
        raise MemoryError()

    cdef int n_nodes = 1
    cdef int sp = 0
    cdef int node, start, end, mn, g
    cdef int i, j, jj, k, tmp, chosen, best_var, left_id, right_id, nl
    cdef double tc, tcy, node_mean, sse, dd, t2
    cdef double cl, cyl, cr, cyr, gl, gr, gain, gmax, thresh, a, b, z
    cdef double best_gain, best_z, var_gain, var_z
    cdef bint have
    cdef bint overflow = 0

    with nogil:
        for t in range(m):
            idx[t] = <int32_t>t
        stack[0].node = 0
        stack[0].start = 0
        stack[0].end = <int>m
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp].node
            start = stack[sp].start
            end = stack[sp].end
            mn = end - start

            tc = 0.0
            tcy = 0.0
            for i in range(start, end):
                g = idx[i]
                tc = tc + ca[g]
                tcy = tcy + cya[g]
            node_mean = tcy / tc
            count[node] = tc
            mean[node] = node_mean

            best_var = -1
            best_gain = 0.0
            best_z = 0.0
            if tc >= 2.0 * min_count:
                sse = 0.0
                for i in range(start, end):
                    g = idx[i]
                    dd = ya[g] - node_mean
                    sse = sse + ca[g] * (dd * dd)
                if sse > PURITY_REL * (tc * node_mean * node_mean):
                    # partial Fisher-Yates over column indices
                    for j in range(p):
                        cand[j] = j
                    for j in range(mtry):
                        k = j + <int>_bounded(&state, <uint64_t>(p - j))
                        tmp = cand[j]
                        cand[j] = cand[k]
                        cand[k] = tmp
                    # insertion sort of the drawn prefix (ascending)
                    for j in range(1, mtry):
                        tmp = cand[j]
                        k = j - 1
                        while k >= 0 and cand[k] > tmp:
                            cand[k + 1] = cand[k]
                            k -= 1
                        cand[k + 1] = tmp

                    t2 = tcy * tcy / tc
                    for jj in range(mtry):
                        j = cand[jj]
                        for i in range(mn):
                            kv[i].v = Xa[idx[start + i], j]
                            kv[i].i = i
                        qsort(kv, mn, sizeof(KV), _kv_cmp)
                        cl = 0.0
                        cyl = 0.0
                        gmax = 0.0
                        have = 0
                        for i in range(mn - 1):
                            g = idx[start + kv[i].i]
                            cl = cl + ca[g]
                            cyl = cyl + cya[g]
                            if kv[i].v < kv[i + 1].v and cl >= min_count \
                                    and (tc - cl) >= min_count:
                                cr = tc - cl
                                cyr = tcy - cyl
                                gl = cyl * cyl / cl
                                gr = cyr * cyr / cr
                                gain = gl + gr - t2
                                # clear the cancellation noise of the two
                                # squared-mean terms (mirrors _pykernels)
                                if gain > TIE_REL * (gl + gr):
                                    gains[i] = gain
                                    if not have or gain > gmax:
                                        gmax = gain
                                        have = 1
                                else:
                                    gains[i] = -1.0
                            else:
                                gains[i] = -1.0
                        if not have:
                            continue
                        thresh = gmax * (1.0 - TIE_REL)
                        chosen = -1
                        for i in range(mn - 1):
                            if gains[i] >= thresh and gains[i] > 0.0:
                                chosen = i
                                break
                        if chosen < 0:
                            continue
                        var_gain = gains[chosen]
                        a = kv[chosen].v
                        b = kv[chosen + 1].v
                        z = 0.5 * (a + b)
                        if z <= a:
                            z = b
                        var_z = z
                        if var_gain * (1.0 - TIE_REL) > best_gain:
                            best_gain = var_gain
                            best_var = j
                            best_z = var_z

            if best_var < 0:
                for i in range(start, end):
                    leaf_of[idx[i]] = node
                continue

            # stable partition (original relative order kept on both sides);
            # left side compacts in place (write index never passes the read
            # index), right side goes through scratch
            nl = 0
            k = 0
            for i in range(start, end):
                g = idx[i]
                if Xa[g, best_var] < best_z:
                    idx[start + nl] = g
                    nl += 1
                else:
                    scratch[k] = g
                    k += 1
            for i in range(k):
                idx[start + nl + i] = scratch[i]

            if n_nodes + 2 > cap:
                overflow = 1
                break
            left_id = n_nodes
            right_id = n_nodes + 1
            n_nodes += 2
            feature[node] = best_var
            threshold[node] = best_z
            left[node] = left_id
            right[node] = right_id

            stack[sp].node = right_id
            stack[sp].start = start + nl
            stack[sp].end = end
            sp += 1
            stack[sp].node = left_id
            stack[sp].start = start
            stack[sp].end = start + nl
            sp += 1

    free(idx)
    free(scratch)
    free(kv)
    free(gains)
    free(cand)
    free(stack)
    if overflow:
        raise AssertionError("node capacity bound violated")

    n = n_nodes
    return {
        "feature": feature[:n].copy(),
        "threshold": threshold[:n].copy(),
        "left": left[:n].copy(),
        "right": right[:n].copy(),
        "count": count[:n].copy(),
        "mean": mean[:n].copy(),
        "leaf_of": leaf_of,
    }


def route(feature, threshold, left, right, Xq):
    """Drop-in replacement for ``_pykernels.route``."""
    cdef cnp.ndarray[cnp.int32_t, ndim=1] fa = np.asarray(feature, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ta = np.asarray(threshold, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] la = np.asarray(left, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] ra = np.asarray(right, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xa = \
        np.ascontiguousarray(Xq, dtype=np.float64)
    cdef Py_ssize_t q = Xa.shape[0]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] pos = np.zeros(q, dtype=np.int32)
    cdef Py_ssize_t i
    cdef int node, f
    with nogil:
        for i in range(q):
            node = 0
            f = fa[node]
            while f >= 0:
                if Xa[i, f] < ta[node]:
                    node = la[node]
                else:
                    node = ra[node]
                f = fa[node]
            pos[i] = node
    return pos
