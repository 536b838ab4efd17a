# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled contrast kernel; mirrors ``_kernels_py.contrast_rows``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


def contrast_rows(logits, weights, mask):
    cdef const double[:, ::1] s = np.ascontiguousarray(logits, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t n = s.shape[0], k = s.shape[1]
    if w.shape[0] != n or w.shape[1] != k or m.shape[0] != n or m.shape[1] != k:
        raise ValueError("logits, weights and mask must share one shape")

    out_loss = np.empty(n, dtype=np.float64)
    out_grad = np.empty((n, k), dtype=np.float64)
    cdef double[::1] loss = out_loss
    cdef double[:, ::1] g = out_grad
    cdef Py_ssize_t i, j
    cdef double mx, total, c, dot, lse, e

    with nogil:
        for i in range(n):
            mx = -INFINITY
            c = 0.0
            dot = 0.0
            for j in range(k):
                c += w[i, j]
                dot += w[i, j] * s[i, j]
                if m[i, j] and s[i, j] > mx:
                    mx = s[i, j]
            total = 0.0
            for j in range(k):
                if m[i, j]:
                    e = exp(s[i, j] - mx)
                    g[i, j] = e
                    total += e
                else:
                    g[i, j] = 0.0
            lse = mx + log(total)
            loss[i] = c * lse - dot
            for j in range(k):
                g[i, j] = c * (g[i, j] / total) - w[i, j]
    return out_loss, out_grad
