# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled union-find kernels; see ``_pykernels`` for the reference twin."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _find(Py_ssize_t[::1] parent, Py_ssize_t x) noexcept nogil:
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def merge_pairs(order, Py_ssize_t height, Py_ssize_t width, bint conn8=False, bint frame=False):
    cdef cnp.int64_t[::1] order_v = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t n = height * width
    cdef Py_ssize_t FRAME = n
    cdef Py_ssize_t[::1] parent = np.full(n + 1, -1, dtype=np.intp)
    cdef cnp.int64_t[::1] rank = np.empty(n + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] births = np.empty(n + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] deaths = np.empty(n + 1, dtype=np.int64)
    cdef Py_ssize_t roots[9]
    cdef int dr8[8]
    cdef int dc8[8]
    cdef int nb, k, j, m
    cdef Py_ssize_t i, p, r, c, rr, cc, q, x, oldest, npairs = 0
    cdef bint seen

    if conn8:
        dr8[:] = [-1, -1, -1, 0, 0, 1, 1, 1]
        dc8[:] = [-1, 0, 1, -1, 1, -1, 0, 1]
        nb = 8
    else:
        dr8[:4] = [-1, 0, 0, 1]
        dc8[:4] = [0, -1, 1, 0]
        nb = 4

    with nogil:
        for i in range(n):
            rank[order_v[i]] = i
        rank[FRAME] = -1
        if frame:
            parent[FRAME] = FRAME
        for i in range(n):
            p = order_v[i]
            r = p // width
            c = p - r * width
            m = 0
            for k in range(nb):
                rr = r + dr8[k]
                cc = c + dc8[k]
                if 0 <= rr < height and 0 <= cc < width:
                    q = rr * width + cc
                    if parent[q] < 0:
                        continue
                    x = _find(parent, q)
                elif frame:
                    x = FRAME
                else:
                    continue
                seen = False
                for j in range(m):
                    if roots[j] == x:
                        seen = True
                        break
                if not seen:
                    roots[m] = x
                    m += 1
            if m == 0:
                parent[p] = p
                continue
            oldest = roots[0]
            for j in range(1, m):
                if rank[roots[j]] < rank[oldest]:
                    oldest = roots[j]
            parent[p] = oldest
            for j in range(m):
                x = roots[j]
                if x != oldest:
                    births[npairs] = x
                    deaths[npairs] = p
                    npairs += 1
                    parent[x] = oldest

    if frame:
        root = -1
    elif n:
        root = _find(parent, order_v[0])
    else:
        root = -1
    return (np.asarray(births[:npairs]).copy(),
            np.asarray(deaths[:npairs]).copy(), int(root))
