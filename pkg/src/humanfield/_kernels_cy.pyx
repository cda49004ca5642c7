# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: brute-force KNN and capsule-union sphere tracing."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def knn_indices(const double[:, ::1] points, const double[:, ::1] verts, int k):
    """Indices of the ``k`` nearest ``verts`` per point, ordered by (distance, index)."""
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t q = verts.shape[0]
    if k < 1 or k > q:
        raise ValueError(f"k must be in [1, {q}], got {k}")
    out_np = np.empty((n, k), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_np
    best_np = np.empty(k, dtype=np.float64)
    cdef double[::1] best = best_np
    cdef Py_ssize_t i, j, m, pos
    cdef double dx, dy, dz, d2
    cdef int filled
    for i in range(n):
        filled = 0
        for j in range(q):
            dx = points[i, 0] - verts[j, 0]
            dy = points[i, 1] - verts[j, 1]
            dz = points[i, 2] - verts[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if filled == k and d2 >= best[k - 1]:
                continue
            # insertion keeps equal distances in index order (strict <)
            pos = filled if filled < k else k - 1
            while pos > 0 and d2 < best[pos - 1]:
                best[pos] = best[pos - 1]
                out[i, pos] = out[i, pos - 1]
                pos -= 1
            best[pos] = d2
            out[i, pos] = j
            if filled < k:
                filled += 1
    return out_np


cdef inline double _capsule(double px, double py, double pz,
                            double ax, double ay, double az,
                            double bx, double by, double bz, double r) nogil:
    cdef double pax = px - ax, pay = py - ay, paz = pz - az
    cdef double bax = bx - ax, bay = by - ay, baz = bz - az
    cdef double bb = bax * bax + bay * bay + baz * baz
    cdef double h = 0.0
    if bb > 0.0:
        h = (pax * bax + pay * bay + paz * baz) / bb
        if h < 0.0:
            h = 0.0
        elif h > 1.0:
            h = 1.0
    pax -= bax * h
    pay -= bay * h
    paz -= baz * h
    return sqrt(pax * pax + pay * pay + paz * paz) - r


def sphere_trace_capsules(const double[:, ::1] origins, const double[:, ::1] dirs,
                          const double[:, ::1] seg_a, const double[:, ::1] seg_b,
                          const double[::1] radii, double t_far,
                          double eps=1e-7, int max_steps=512):
    """Ray distance to the first hit of a union of capsules; ``inf`` on a miss."""
    cdef Py_ssize_t n = origins.shape[0]
    cdef Py_ssize_t c = seg_a.shape[0]
    out_np = np.full(n, np.inf, dtype=np.float64)
    cdef double[::1] out = out_np
    cdef Py_ssize_t i, j
    cdef int step
    cdef double t, d, dj, px, py, pz
    with nogil:
        for i in range(n):
            t = 0.0
            for step in range(max_steps):
                px = origins[i, 0] + t * dirs[i, 0]
                py = origins[i, 1] + t * dirs[i, 1]
                pz = origins[i, 2] + t * dirs[i, 2]
                d = INFINITY
                for j in range(c):
                    dj = _capsule(px, py, pz, seg_a[j, 0], seg_a[j, 1], seg_a[j, 2],
                                  seg_b[j, 0], seg_b[j, 1], seg_b[j, 2], radii[j])
                    if dj < d:
                        d = dj
                if d < eps:
                    out[i] = t
                    break
                t += d
                if t > t_far:
                    break
    return out_np
