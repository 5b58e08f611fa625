# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled union-find pass of graph-based segmentation."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _find(Py_ssize_t[::1] parent, Py_ssize_t x) noexcept nogil:
    cdef Py_ssize_t root = x, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


cdef inline Py_ssize_t _join(Py_ssize_t[::1] parent, Py_ssize_t[::1] rank,
                             Py_ssize_t[::1] size, Py_ssize_t x, Py_ssize_t y) noexcept nogil:
    if rank[x] > rank[y]:
        parent[y] = x
        size[x] += size[y]
        return x
    parent[x] = y
    size[y] += size[x]
    if rank[x] == rank[y]:
        rank[y] += 1
    return y


def segment_graph(const cnp.int64_t[::1] a, const cnp.int64_t[::1] b,
                  const double[::1] w, Py_ssize_t n_vertices,
                  double k, Py_ssize_t min_size):
    cdef Py_ssize_t n_edges = a.shape[0]
    cdef Py_ssize_t i, x, y, r, m
    parent_np = np.arange(n_vertices, dtype=np.intp)
    rank_np = np.zeros(n_vertices, dtype=np.intp)
    size_np = np.ones(n_vertices, dtype=np.intp)
    thr_np = np.full(n_vertices, k, dtype=np.float64)
    labels_np = np.empty(n_vertices, dtype=np.int64)
    remap_np = np.full(n_vertices, -1, dtype=np.int64)
    cdef Py_ssize_t[::1] parent = parent_np
    cdef Py_ssize_t[::1] rank = rank_np
    cdef Py_ssize_t[::1] size = size_np
    cdef double[::1] thr = thr_np
    cdef cnp.int64_t[::1] labels = labels_np
    cdef cnp.int64_t[::1] remap = remap_np

    with nogil:
        for i in range(n_edges):
            x = _find(parent, a[i])
            y = _find(parent, b[i])
            if x != y and w[i] <= thr[x] and w[i] <= thr[y]:
                r = _join(parent, rank, size, x, y)
                thr[r] = w[i] + k / size[r]
        for i in range(n_edges):
            x = _find(parent, a[i])
            y = _find(parent, b[i])
            if x != y and (size[x] < min_size or size[y] < min_size):
                _join(parent, rank, size, x, y)
        m = 0
        for i in range(n_vertices):
            r = _find(parent, i)
            if remap[r] < 0:
                remap[r] = m
                m += 1
            labels[i] = remap[r]
    return labels_np
