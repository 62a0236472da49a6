# Compiled backend for the sequential scan recurrence. Mirrors scan_py.py;
# keep the two in sync — tests compare them element for element.

import numpy as np

cimport cython
from cython cimport floating


@cython.boundscheck(False)
@cython.wraparound(False)
def scan_forward(floating[:, :, ::1] abar, floating[:, :, ::1] bbar,
                 floating[:, ::1] c, floating[::1] d_skip,
                 floating[:, ::1] x, floating[:, ::1] h0):
    cdef Py_ssize_t length = abar.shape[0]
    cdef Py_ssize_t ch = abar.shape[1]
    cdef Py_ssize_t n = abar.shape[2]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    y_arr = np.empty((length, ch), dtype=dtype)
    h_arr = np.empty((length, ch, n), dtype=dtype)
    cdef floating[:, ::1] y = y_arr
    cdef floating[:, :, ::1] h = h_arr
    cdef Py_ssize_t k, i, j
    cdef floating acc, hv, xv
    for k in range(length):
        for i in range(ch):
            xv = x[k, i]
            acc = 0
            for j in range(n):
                if k == 0:
                    hv = abar[k, i, j] * h0[i, j] + bbar[k, i, j] * xv
                else:
                    hv = abar[k, i, j] * h[k - 1, i, j] + bbar[k, i, j] * xv
                h[k, i, j] = hv
                acc += c[k, j] * hv
            y[k, i] = acc + d_skip[i] * xv
    return y_arr, h_arr


@cython.boundscheck(False)
@cython.wraparound(False)
def scan_backward(floating[:, :, ::1] abar, floating[:, :, ::1] bbar,
                  floating[:, ::1] c, floating[::1] d_skip,
                  floating[:, ::1] x, floating[:, ::1] h0,
                  floating[:, :, ::1] h, floating[:, ::1] grad_y):
    cdef Py_ssize_t length = abar.shape[0]
    cdef Py_ssize_t ch = abar.shape[1]
    cdef Py_ssize_t n = abar.shape[2]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    ga_arr = np.empty((length, ch, n), dtype=dtype)
    gb_arr = np.empty((length, ch, n), dtype=dtype)
    gc_arr = np.zeros((length, n), dtype=dtype)
    gd_arr = np.zeros(ch, dtype=dtype)
    gx_arr = np.empty((length, ch), dtype=dtype)
    gh_arr = np.zeros((ch, n), dtype=dtype)
    cdef floating[:, :, ::1] ga = ga_arr
    cdef floating[:, :, ::1] gb = gb_arr
    cdef floating[:, ::1] gc = gc_arr
    cdef floating[::1] gd = gd_arr
    cdef floating[:, ::1] gx = gx_arr
    cdef floating[:, ::1] gh = gh_arr
    cdef Py_ssize_t k, i, j
    cdef floating gy, ghv, hprev, xv, xacc
    for k in range(length - 1, -1, -1):
        for i in range(ch):
            gy = grad_y[k, i]
            xv = x[k, i]
            xacc = 0
            for j in range(n):
                ghv = gy * c[k, j] + gh[i, j]
                if k == 0:
                    hprev = h0[i, j]
                else:
                    hprev = h[k - 1, i, j]
                ga[k, i, j] = ghv * hprev
                gb[k, i, j] = ghv * xv
                xacc += ghv * bbar[k, i, j]
                gc[k, j] += gy * h[k, i, j]
                gh[i, j] = ghv * abar[k, i, j]
            gx[k, i] = xacc + gy * d_skip[i]
            gd[i] += gy * xv
    return ga_arr, gb_arr, gc_arr, gd_arr, gx_arr, gh_arr
