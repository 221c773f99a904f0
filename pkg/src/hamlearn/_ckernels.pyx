# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric kernels for the small dense operations on the AD tape.

Same names and semantics as ``_pykernels``. Inputs are float64 arrays; 2-D
inputs must be C-contiguous (the caller guarantees this).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, tanh as c_tanh

cnp.import_array()


def matvec(const double[:, ::1] a, const double[::1] x):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], i, j
    if x.shape[0] != n:
        raise ValueError("matvec: shape mismatch")
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += a[i, j] * x[j]
        o[i] = acc
    return out


def rmatvec(const double[:, ::1] a, const double[::1] g):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], i, j
    if g.shape[0] != m:
        raise ValueError("rmatvec: shape mismatch")
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double gi
    for i in range(m):
        gi = g[i]
        for j in range(n):
            o[j] += a[i, j] * gi
    return out


def outer(const double[::1] g, const double[::1] x):
    cdef Py_ssize_t m = g.shape[0], n = x.shape[0], i, j
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(m):
        for j in range(n):
            o[i, j] = g[i] * x[j]
    return out


def tanh(const double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = c_tanh(x[i])
    return out


def tanh_vjp(const double[::1] g, const double[::1] y):
    cdef Py_ssize_t n = g.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = g[i] * (1.0 - y[i] * y[i])
    return out


def relu(const double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = x[i] if x[i] > 0.0 else 0.0
    return out


def relu_vjp(const double[::1] g, const double[::1] x):
    cdef Py_ssize_t n = g.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = g[i] if x[i] > 0.0 else 0.0
    return out


def softmax(const double[::1] z):
    cdef Py_ssize_t n = z.shape[0], i
    cdef double m = z[0], s = 0.0
    for i in range(1, n):
        if z[i] > m:
            m = z[i]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = exp(z[i] - m)
        s += o[i]
    for i in range(n):
        o[i] = o[i] / s
    return out


def softmax_xent(const double[::1] z, const double[::1] target):
    cdef Py_ssize_t n = z.shape[0], i
    if target.shape[0] != n:
        raise ValueError("softmax_xent: shape mismatch")
    cdef double m = z[0], s = 0.0, tsum = 0.0, loss = 0.0, lse
    for i in range(1, n):
        if z[i] > m:
            m = z[i]
    grad = np.empty(n, dtype=np.float64)
    cdef double[::1] gr = grad
    for i in range(n):
        gr[i] = exp(z[i] - m)
        s += gr[i]
        tsum += target[i]
    lse = log(s)
    for i in range(n):
        loss += target[i] * (lse - (z[i] - m))
        gr[i] = (gr[i] / s) * tsum - target[i]
    return loss, grad
