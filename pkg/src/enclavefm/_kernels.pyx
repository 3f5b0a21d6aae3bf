# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Must stay bit-identical to ``_kernels_py.py``."""

from array import array

from libc.stdint cimport int32_t, int64_t, uint64_t
from libc.stdlib cimport free, malloc

BACKEND = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def mix64(z):
    return _mix64(<uint64_t>(z & 0xFFFFFFFFFFFFFFFF))


def fill_weights(seed, Py_ssize_t n):
    out = array("i", bytes(4 * n))
    cdef int32_t[::1] view = out
    cdef uint64_t state = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            state = state + GOLDEN
            view[i] = <int32_t>(<int64_t>(_mix64(state) >> 48) - 32768)
    return out


def bucket_table(int context_window, int vocab, int buckets):
    out = array("i", bytes(4 * context_window * vocab))
    cdef int32_t[::1] view = out
    cdef uint64_t j, t
    with nogil:
        for j in range(<uint64_t>context_window):
            for t in range(<uint64_t>vocab):
                view[j * vocab + t] = <int32_t>(_mix64((j << 32) | t) % <uint64_t>buckets)
    return out


cdef void _accumulate(const int32_t[::1] table, const int32_t[::1] bias, int vocab,
                      const int32_t[::1] rows, const int32_t[::1] coefs, int64_t* acc) nogil:
    cdef Py_ssize_t v, j, base
    cdef int64_t c
    for v in range(vocab):
        acc[v] = bias[v]
    for j in range(rows.shape[0]):
        base = <Py_ssize_t>rows[j] * vocab
        c = coefs[j]
        for v in range(vocab):
            acc[v] += c * table[base + v]


def raw_scores(const int32_t[::1] table, const int32_t[::1] bias, int vocab, rows, coefs):
    cdef int32_t[::1] r = array("i", rows)
    cdef int32_t[::1] c = array("i", coefs)
    cdef int64_t* acc = <int64_t*>malloc(vocab * sizeof(int64_t))
    if acc == NULL:
        raise MemoryError()
    try:
        _accumulate(table, bias, vocab, r, c, acc)
        return [acc[v] for v in range(vocab)]
    finally:
        free(acc)


def topk(const int32_t[::1] table, const int32_t[::1] bias, int vocab, rows, coefs, int k):
    cdef int32_t[::1] r = array("i", rows)
    cdef int32_t[::1] c = array("i", coefs)
    if k > vocab:
        k = vocab
    cdef int64_t* acc = <int64_t*>malloc(vocab * sizeof(int64_t))
    cdef int64_t* best_s = <int64_t*>malloc(k * sizeof(int64_t))
    cdef int* best_v = <int*>malloc(k * sizeof(int))
    cdef int filled = 0, v, pos, i
    cdef int64_t top, s
    if acc == NULL or best_s == NULL or best_v == NULL:
        free(acc); free(best_s); free(best_v)
        raise MemoryError()
    try:
        with nogil:
            _accumulate(table, bias, vocab, r, c, acc)
            top = acc[0]
            for v in range(vocab):
                s = acc[v]
                if s > top:
                    top = s
                # scanning in token order, so equal scores keep the earlier token ahead
                if filled == k and s <= best_s[k - 1]:
                    continue
                pos = filled if filled < k else k - 1
                while pos > 0 and best_s[pos - 1] < s:
                    pos -= 1
                i = filled if filled < k else k - 1
                while i > pos:
                    best_s[i] = best_s[i - 1]
                    best_v[i] = best_v[i - 1]
                    i -= 1
                best_s[pos] = s
                best_v[pos] = v
                if filled < k:
                    filled += 1
        return [(best_s[i] - top, best_v[i]) for i in range(filled)]
    finally:
        free(acc)
        free(best_s)
        free(best_v)
