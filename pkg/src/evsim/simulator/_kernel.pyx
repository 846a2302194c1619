# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-interval event generation.

Mirrors ``_kernel_py.interval_events`` operation for operation, so both
backends emit bit-identical timestamps.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, nextafter, INFINITY

cnp.import_array()


def interval_events(const double[:, ::1] L0, const double[:, ::1] L1,
                    double t0, double t1, double C,
                    double[:, ::1] ref, double[:, ::1] last,
                    Py_ssize_t row0, Py_ssize_t row1):
    """Emit the events of rows ``[row0, row1)`` between two frame samples.

    ``ref`` and ``last`` are updated in place.  Returns unsorted
    ``(t, x, y, p)`` arrays in pixel-major order.
    """
    cdef Py_ssize_t W = L0.shape[1]
    cdef Py_ssize_t r, c, n = 0, k = 0
    cdef double l0, l1, lev, slope, frac, te, pc
    cdef double dt = t1 - t0
    cdef double t_lo = nextafter(t0, INFINITY)
    cdef signed char pol

    with nogil:
        for r in range(row0, row1):
            for c in range(W):
                l1 = L1[r, c]
                lev = ref[r, c]
                while fabs(l1 - lev) >= C:
                    if l1 > lev:
                        lev = lev + C
                    else:
                        lev = lev - C
                    n += 1

    t_out = np.empty(n, dtype=np.float64)
    x_out = np.empty(n, dtype=np.int32)
    y_out = np.empty(n, dtype=np.int32)
    p_out = np.empty(n, dtype=np.int8)
    cdef double[::1] tv = t_out
    cdef int[::1] xv = x_out
    cdef int[::1] yv = y_out
    cdef signed char[::1] pv = p_out

    with nogil:
        for r in range(row0, row1):
            for c in range(W):
                l1 = L1[r, c]
                lev = ref[r, c]
                if fabs(l1 - lev) < C:
                    continue
                l0 = L0[r, c]
                slope = l1 - l0
                if l1 > lev:
                    pol = 1
                    pc = C
                else:
                    pol = -1
                    pc = -C
                while fabs(l1 - lev) >= C:
                    lev = lev + pc
                    frac = (lev - l0) / slope
                    te = t0 + frac * dt
                    if te < t_lo:
                        te = t_lo
                    if te > t1:
                        te = t1
                    tv[k] = te
                    xv[k] = <int>c
                    yv[k] = <int>r
                    pv[k] = pol
                    k += 1
                ref[r, c] = lev
                last[r, c] = te
    return t_out, x_out, y_out, p_out
