# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror :mod:`caoloc._fallback`."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def sosfilt(double[:, ::1] sos, double[::1] x, double[:, ::1] zi):
    """Run a biquad cascade (direct form II transposed) over ``x``.

    ``sos`` rows are ``(b0, b1, b2, 1, a1, a2)``; ``zi`` holds the two delay
    registers per section and is not modified. Returns ``(y, zf)``.
    """
    cdef Py_ssize_t n_sec = sos.shape[0]
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, k
    cdef double b0, b1, b2, a1, a2, z1, z2, xi, yi

    if zi.shape[0] != n_sec or zi.shape[1] != 2:
        raise ValueError(f"zi shape {(zi.shape[0], zi.shape[1])} does not match {n_sec} sections")

    y_arr = np.array(x, dtype=np.float64, copy=True)
    zf_arr = np.array(zi, dtype=np.float64, copy=True)
    cdef double[::1] y = y_arr
    cdef double[:, ::1] zf = zf_arr

    for k in range(n_sec):
        b0 = sos[k, 0]
        b1 = sos[k, 1]
        b2 = sos[k, 2]
        a1 = sos[k, 4]
        a2 = sos[k, 5]
        z1 = zf[k, 0]
        z2 = zf[k, 1]
        for i in range(n):
            xi = y[i]
            yi = b0 * xi + z1
            z1 = b1 * xi - a1 * yi + z2
            z2 = b2 * xi - a2 * yi
            y[i] = yi
        zf[k, 0] = z1
        zf[k, 1] = z2
    return y_arr, zf_arr


def local_maxima(double[::1] x, Py_ssize_t min_distance):
    """Indices of strict-left / non-strict-right local maxima of ``x``,
    greedily thinned so kept peaks are at least ``min_distance`` apart
    (larger peak wins)."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef list out = []
    cdef Py_ssize_t last = -1
    for i in range(1, n - 1):
        if x[i] > x[i - 1] and x[i] >= x[i + 1] and x[i] > 0.0:
            if last >= 0 and i - last < min_distance:
                if x[i] > x[last]:
                    out[len(out) - 1] = i
                    last = i
            else:
                out.append(i)
                last = i
    return np.asarray(out, dtype=np.intp)
