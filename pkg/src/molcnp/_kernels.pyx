# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: packed-bit distances and binary-feature regression trees.

Must stay semantically identical to ``molcnp._fallback``.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, uint8_t
from libc.stdlib cimport malloc, free, qsort

cnp.import_array()

cdef double TIE_RTOL = 1e-10
cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef int _cmp_u64(const void* a, const void* b) noexcept nogil:
    cdef uint64_t x = (<uint64_t*>a)[0]
    cdef uint64_t y = (<uint64_t*>b)[0]
    if x < y:
        return -1
    if x > y:
        return 1
    return 0


def feature_keys(uint64_t tree_seed, uint64_t node_counter, Py_ssize_t n_features):
    out = np.empty(n_features, dtype=np.uint64)
    cdef uint64_t[:] o = out
    cdef uint64_t base = mix64(tree_seed ^ mix64(node_counter + GOLDEN))
    cdef Py_ssize_t f
    for f in range(n_features):
        o[f] = mix64(base + (<uint64_t>f + 1) * GOLDEN)
    return out


cdef Py_ssize_t _candidates(uint64_t tree_seed, uint64_t counter, Py_ssize_t d,
                            Py_ssize_t k, uint64_t* keys, uint64_t* scratch,
                            int64_t* out) nogil:
    cdef uint64_t base = mix64(tree_seed ^ mix64(counter + GOLDEN))
    cdef Py_ssize_t f, m = 0
    cdef uint64_t threshold
    for f in range(d):
        keys[f] = mix64(base + (<uint64_t>f + 1) * GOLDEN)
    if k >= d:
        for f in range(d):
            out[f] = f
        return d
    for f in range(d):
        scratch[f] = keys[f]
    qsort(scratch, d, sizeof(uint64_t), _cmp_u64)
    threshold = scratch[k - 1]
    for f in range(d):
        if keys[f] <= threshold:
            out[m] = f
            m += 1
    return m


def candidate_features(uint64_t tree_seed, uint64_t node_counter, Py_ssize_t n_features, Py_ssize_t k):
    cdef uint64_t* keys = <uint64_t*>malloc(n_features * sizeof(uint64_t))
    cdef uint64_t* scratch = <uint64_t*>malloc(n_features * sizeof(uint64_t))
    out = np.empty(n_features, dtype=np.int64)
    cdef int64_t[:] o = out
    cdef Py_ssize_t m
    try:
        m = _candidates(tree_seed, node_counter, n_features, k, keys, scratch, &o[0])
    finally:
        free(keys)
        free(scratch)
    return out[:m].copy()


def pairwise_hamming(const uint64_t[:, :] a, const uint64_t[:, :] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], w = a.shape[1]
    out = np.empty((n, m), dtype=np.int64)
    cdef int64_t[:, :] o = out
    cdef Py_ssize_t i, j, k
    cdef int64_t acc
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0
                for k in range(w):
                    acc += __builtin_popcountll(a[i, k] ^ b[j, k])
                o[i, j] = acc
    return out


def pairwise_tanimoto(const uint64_t[:, :] a, const uint64_t[:, :] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], w = a.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, :] o = out
    cdef Py_ssize_t i, j, k
    cdef int64_t inter, union
    with nogil:
        for i in range(n):
            for j in range(m):
                inter = 0
                union = 0
                for k in range(w):
                    inter += __builtin_popcountll(a[i, k] & b[j, k])
                    union += __builtin_popcountll(a[i, k] | b[j, k])
                if union == 0:
                    o[i, j] = 1.0
                else:
                    o[i, j] = <double>inter / <double>union
    return out


def build_tree(const uint8_t[:, :] X, const double[:] y, samples,
               Py_ssize_t max_features, Py_ssize_t min_samples_leaf, uint64_t tree_seed):
    cdef int64_t[:] idx_in = np.ascontiguousarray(samples, dtype=np.int64)
    cdef Py_ssize_t n = idx_in.shape[0], d = X.shape[1]
    cdef Py_ssize_t cap = 2 * n + 1
    feature_a = np.full(cap, -1, dtype=np.int64)
    left_a = np.full(cap, -1, dtype=np.int64)
    right_a = np.full(cap, -1, dtype=np.int64)
    value_a = np.zeros(cap, dtype=np.float64)
    cdef int64_t[:] feature = feature_a
    cdef int64_t[:] left = left_a
    cdef int64_t[:] right = right_a
    cdef double[:] value = value_a

    idx_a = np.array(idx_in, dtype=np.int64)
    tmp_a = np.empty(max(n, 1), dtype=np.int64)
    cdef int64_t[:] idx = idx_a
    cdef int64_t[:] tmp = tmp_a
    # stack entries: node, start, end
    stack_a = np.empty((cap, 3), dtype=np.int64)
    cdef int64_t[:, :] stack = stack_a

    cdef uint64_t* keys = <uint64_t*>malloc(d * sizeof(uint64_t))
    cdef uint64_t* scratch = <uint64_t*>malloc(d * sizeof(uint64_t))
    cdef int64_t* cands = <int64_t*>malloc(d * sizeof(int64_t))
    cdef double* s1 = <double*>malloc(d * sizeof(double))
    cdef int64_t* n1 = <int64_t*>malloc(d * sizeof(int64_t))

    cdef Py_ssize_t sp = 0, n_nodes = 1, node, start, end, cnt, i, c, m, f
    cdef Py_ssize_t best_f, nl, nr, row
    cdef uint64_t counter = 0
    cdef double total, ymin, ymax, yv, g, best_gain, nn0, nn1, ss0
    try:
        with nogil:
            stack[0, 0] = 0
            stack[0, 1] = 0
            stack[0, 2] = n
            sp = 1
            while sp > 0:
                sp -= 1
                node = stack[sp, 0]
                start = stack[sp, 1]
                end = stack[sp, 2]
                cnt = end - start
                total = 0.0
                ymin = y[idx[start]]
                ymax = ymin
                for i in range(start, end):
                    yv = y[idx[i]]
                    total += yv
                    if yv < ymin:
                        ymin = yv
                    if yv > ymax:
                        ymax = yv
                value[node] = total / cnt
                if cnt < 2 * min_samples_leaf or ymax == ymin:
                    continue
                m = _candidates(tree_seed, counter, d, max_features, keys, scratch, cands)
                counter += 1
                for c in range(m):
                    s1[c] = 0.0
                    n1[c] = 0
                for i in range(start, end):
                    row = idx[i]
                    yv = y[row]
                    for c in range(m):
                        if X[row, cands[c]] != 0:
                            n1[c] += 1
                            s1[c] += yv
                best_f = -1
                best_gain = 0.0
                for c in range(m):
                    if n1[c] < min_samples_leaf or cnt - n1[c] < min_samples_leaf:
                        continue
                    nn1 = <double>n1[c]
                    nn0 = <double>(cnt - n1[c])
                    ss0 = total - s1[c]
                    g = s1[c] * s1[c] / nn1 + ss0 * ss0 / nn0 - total * total / cnt
                    if g > best_gain + TIE_RTOL * (best_gain if best_gain > 1.0 else 1.0):
                        best_f = cands[c]
                        best_gain = g
                if best_f < 0:
                    continue
                # stable partition: bit clear first, then bit set
                nl = 0
                for i in range(start, end):
                    if X[idx[i], best_f] == 0:
                        tmp[nl] = idx[i]
                        nl += 1
                nr = nl
                for i in range(start, end):
                    if X[idx[i], best_f] != 0:
                        tmp[nr] = idx[i]
                        nr += 1
                for i in range(cnt):
                    idx[start + i] = tmp[i]
                feature[node] = best_f
                left[node] = n_nodes
                right[node] = n_nodes + 1
                n_nodes += 2
                stack[sp, 0] = right[node]
                stack[sp, 1] = start + nl
                stack[sp, 2] = end
                sp += 1
                stack[sp, 0] = left[node]
                stack[sp, 1] = start
                stack[sp, 2] = start + nl
                sp += 1
    finally:
        free(keys)
        free(scratch)
        free(cands)
        free(s1)
        free(n1)
    return (feature_a[:n_nodes].copy(), left_a[:n_nodes].copy(),
            right_a[:n_nodes].copy(), value_a[:n_nodes].copy())


def tree_predict(const int64_t[:] feature, const int64_t[:] left, const int64_t[:] right,
                 const double[:] value, const uint8_t[:, :] X):
    cdef Py_ssize_t n = X.shape[0], i
    cdef int64_t node
    out = np.empty(n, dtype=np.float64)
    cdef double[:] o = out
    with nogil:
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if X[i, feature[node]] != 0:
                    node = right[node]
                else:
                    node = left[node]
            o[i] = value[node]
    return out
