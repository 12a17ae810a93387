# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled clockwise-successor search over a sorted uint32 ring."""
from cpython.array cimport array, clone


def successor_indices(const unsigned int[:] points, const unsigned int[:] keys):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t m = keys.shape[0]
    cdef Py_ssize_t i, lo, hi, mid
    cdef unsigned int key
    cdef array out = clone(array("l"), m, False)
    cdef long[:] res = out
    if n == 0:
        raise ValueError("empty ring")
    for i in range(m):
        key = keys[i]
        lo = 0
        hi = n
        while lo < hi:
            mid = (lo + hi) >> 1
            if points[mid] < key:
                lo = mid + 1
            else:
                hi = mid
        res[i] = 0 if lo == n else lo
    return out


def group_histogram(const long[:] point_groups, const long[:] indices, Py_ssize_t k):
    cdef array out = clone(array("l"), k, True)
    cdef long[:] counts = out
    cdef Py_ssize_t i
    for i in range(indices.shape[0]):
        counts[point_groups[indices[i]]] += 1
    return out
