# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same contracts as ``covgen._pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def masked_softmax_rows(x, mask):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] mv = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t r, j, R = xv.shape[0], N = xv.shape[1]
    out = np.zeros((R, N))
    cdef double[:, ::1] ov = out
    cdef double mx, s
    cdef bint seen
    for r in range(R):
        seen = False
        mx = 0.0
        for j in range(N):
            if mv[r, j]:
                if not seen or xv[r, j] > mx:
                    mx = xv[r, j]
                seen = True
        if not seen:
            raise ValueError("empty attention support")
        s = 0.0
        for j in range(N):
            if mv[r, j]:
                ov[r, j] = exp(xv[r, j] - mx)
                s += ov[r, j]
        for j in range(N):
            ov[r, j] /= s
    return out


def softmax_rows_backward(y, g):
    cdef const double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t r, j, R = yv.shape[0], N = yv.shape[1]
    out = np.empty((R, N))
    cdef double[:, ::1] ov = out
    cdef double dot
    for r in range(R):
        dot = 0.0
        for j in range(N):
            dot += gv[r, j] * yv[r, j]
        for j in range(N):
            ov[r, j] = yv[r, j] * (gv[r, j] - dot)
    return out


def scatter_add_rows(src, idx, Py_ssize_t width):
    cdef const double[:, ::1] sv = np.ascontiguousarray(src, dtype=np.float64)
    cdef const cnp.int64_t[:, ::1] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t r, i, R = sv.shape[0], L = sv.shape[1]
    out = np.zeros((R, width))
    cdef double[:, ::1] ov = out
    for r in range(R):
        for i in range(L):
            ov[r, iv[r, i]] += sv[r, i]
    return out


def gather_cols(g, idx):
    cdef const double[:, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const cnp.int64_t[:, ::1] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t r, i, R = iv.shape[0], L = iv.shape[1]
    out = np.empty((R, L))
    cdef double[:, ::1] ov = out
    for r in range(R):
        for i in range(L):
            ov[r, i] = gv[r, iv[r, i]]
    return out


def index_add_rows(Py_ssize_t n_rows, ids, g):
    cdef const cnp.int64_t[::1] idv = np.ascontiguousarray(ids, dtype=np.int64).ravel()
    cdef const double[:, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t k, j, n = idv.shape[0], E = gv.shape[1]
    out = np.zeros((n_rows, E))
    cdef double[:, ::1] ov = out
    for k in range(n):
        for j in range(E):
            ov[idv[k], j] += gv[k, j]
    return out


def lcs_table(a, b):
    cdef const cnp.int64_t[::1] av = np.ascontiguousarray(a, dtype=np.int64)
    cdef const cnp.int64_t[::1] bv = np.ascontiguousarray(b, dtype=np.int64)
    cdef Py_ssize_t i, j, n = av.shape[0], m = bv.shape[0]
    table = np.zeros((n + 1, m + 1), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] t = table
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if av[i - 1] == bv[j - 1]:
                t[i, j] = t[i - 1, j - 1] + 1
            elif t[i, j - 1] > t[i - 1, j]:
                t[i, j] = t[i, j - 1]
            else:
                t[i, j] = t[i - 1, j]
    return table


def adagrad_update(cnp.ndarray theta, cnp.ndarray grad, cnp.ndarray acc, double lr):
    if not (theta.flags.c_contiguous and acc.flags.c_contiguous):
        raise ValueError("adagrad_update needs contiguous theta/acc")
    cdef double[::1] tv = theta.reshape(-1)
    cdef const double[::1] gv = np.ascontiguousarray(grad, dtype=np.float64).reshape(-1)
    cdef double[::1] av = acc.reshape(-1)
    cdef Py_ssize_t k, n = tv.shape[0]
    for k in range(n):
        av[k] += gv[k] * gv[k]
        tv[k] -= lr * gv[k] / sqrt(av[k])
