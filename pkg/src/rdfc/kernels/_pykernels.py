"""Pure-Python union-find pass of graph-based segmentation.

Mirrors ``_ckernels.segment_graph`` exactly, including tie handling, so the
two backends produce identical labels.
"""
import numpy as np


def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


def _join(parent, rank, size, x, y):
    if rank[x] > rank[y]:
        parent[y] = x
        size[x] += size[y]
        return x
    parent[x] = y
    size[y] += size[x]
    if rank[x] == rank[y]:
        rank[y] += 1
    return y


def segment_graph(a, b, w, n_vertices, k, min_size):
    a = np.asarray(a).tolist()
    b = np.asarray(b).tolist()
    w = np.asarray(w, dtype=np.float64).tolist()
    parent = list(range(n_vertices))
    rank = [0] * n_vertices
    size = [1] * n_vertices
    thr = [float(k)] * n_vertices

    for ai, bi, wi in zip(a, b, w):
        x = _find(parent, ai)
        y = _find(parent, bi)
        if x != y and wi <= thr[x] and wi <= thr[y]:
            r = _join(parent, rank, size, x, y)
            thr[r] = wi + k / size[r]
    for ai, bi in zip(a, b):
        x = _find(parent, ai)
        y = _find(parent, bi)
        if x != y and (size[x] < min_size or size[y] < min_size):
            _join(parent, rank, size, x, y)

    remap = {}
    labels = np.empty(n_vertices, dtype=np.int64)
    for i in range(n_vertices):
        r = _find(parent, i)
        labels[i] = remap.setdefault(r, len(remap))
    return labels
