# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled numeric kernels.

Flat, allocation-free loops over C-contiguous float64 buffers. The Python
wrapper in ext_backend.py owns shape handling and output allocation; these
routines only fill buffers that are already the right size.
"""

from libc.math cimport exp as c_exp, log as c_log, sqrt as c_sqrt, tanh as c_tanh


def gemm(const double[:, ::1] a, const double[:, ::1] b, double[:, ::1] out,
         bint ta, bint tb):
    cdef Py_ssize_t m = out.shape[0]
    cdef Py_ssize_t n = out.shape[1]
    cdef Py_ssize_t kdim = a.shape[0] if ta else a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(m):
        for j in range(n):
            acc = 0.0
            if not ta and not tb:
                for k in range(kdim):
                    acc += a[i, k] * b[k, j]
            elif ta and not tb:
                for k in range(kdim):
                    acc += a[k, i] * b[k, j]
            elif not ta and tb:
                for k in range(kdim):
                    acc += a[i, k] * b[j, k]
            else:
                for k in range(kdim):
                    acc += a[k, i] * b[j, k]
            out[i, j] = acc


def relu(const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = x[i] if x[i] > 0.0 else 0.0


def relu_backward(const double[::1] g, const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = g[i] if x[i] > 0.0 else 0.0


def sigmoid(const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    cdef double e
    for i in range(x.shape[0]):
        if x[i] >= 0.0:
            out[i] = 1.0 / (1.0 + c_exp(-x[i]))
        else:
            e = c_exp(x[i])
            out[i] = e / (1.0 + e)


def tanh(const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = c_tanh(x[i])


def exp(const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = c_exp(x[i])


def log(const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = c_log(x[i])


def sqrt(const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = c_sqrt(x[i])


def softmax_rows(const double[:, ::1] z, double[:, ::1] out):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t k = z.shape[1]
    cdef Py_ssize_t i, j
    cdef double hi, s
    for i in range(n):
        hi = z[i, 0]
        for j in range(1, k):
            if z[i, j] > hi:
                hi = z[i, j]
        s = 0.0
        for j in range(k):
            out[i, j] = c_exp(z[i, j] - hi)
            s += out[i, j]
        for j in range(k):
            out[i, j] /= s


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, long t):
    cdef Py_ssize_t i
    cdef double bc1 = 1.0 - beta1**t
    cdef double bc2 = 1.0 - beta2**t
    cdef double mhat, vhat
    for i in range(p.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] -= lr * mhat / (c_sqrt(vhat) + eps)
