# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops of the square-function evaluation.

``theta_table`` applies the standard kernel ``scale t^alpha / (t + d)^(m + alpha)``
to a block of functions; ``cone_table`` integrates squared values against
the cone weight ``(t / (t + d))^(m lam)`` with respect to ``w dy / t^m``.

For each node the pair matrix is filled by a fused loop and the contraction
with the function block is left to BLAS. Powers are taken of 1 / (t + d);
when an exponent is an integer or half an odd integer they are formed by
repeated multiplication and one sqrt, otherwise by exp/log in a loop simple
enough for the compiler to vectorise.
"""
import numpy as np

from libc.math cimport exp, log, sqrt, floor


cdef int _mode(double e):
    # 0: integer exponent, 1: half-odd-integer exponent, 2: general
    if e >= 0 and e <= 64 and e == floor(e):
        return 0
    if e >= 0 and e <= 64 and 2 * e == floor(2 * e):
        return 1
    return 2


cdef inline double _ipow(double b, int k) nogil:
    cdef double r = 1.0
    while k > 0:
        if k & 1:
            r *= b
        b *= b
        k >>= 1
    return r


cdef void _fill(const double* d, double* out, Py_ssize_t size, double t, double e,
                double c, int mode, int k, bint ratio) noexcept nogil:
    # out[i] = c * b^e with b = 1 / (t + d[i]), or b = t / (t + d[i]) when ratio
    cdef Py_ssize_t i
    cdef double num = t if ratio else 1.0
    cdef double lt = log(num)
    if mode == 0:
        for i in range(size):
            out[i] = c * _ipow(num / (t + d[i]), k)
    elif mode == 1:
        for i in range(size):
            out[i] = c * _ipow(num / (t + d[i]), k) * sqrt(num / (t + d[i]))
    else:
        for i in range(size):
            out[i] = c * exp(e * (lt - log(t + d[i])))


def _check(a):
    if not a.flags.c_contiguous:
        raise ValueError("arrays must be C-contiguous")


def theta_table(const double[:, ::1] dyz, const double[:, ::1] fz,
                const double[::1] nodes, double alpha, double m, double scale):
    """``out[k, y, f] = sum_z s_{t_k}(y, z) fz[z, f]`` (fz already carries the masses)."""
    cdef Py_ssize_t N = dyz.shape[0]
    cdef Py_ssize_t P = dyz.shape[1]
    cdef Py_ssize_t T = nodes.shape[0]
    if fz.shape[0] != P:
        raise ValueError("inconsistent shapes")
    out = np.zeros((T, N, fz.shape[1]), dtype=np.float64)
    if scale == 0.0 or N == 0 or P == 0:
        return out
    F = np.asarray(fz)
    K = np.empty((N, P), dtype=np.float64)
    cdef double[:, ::1] Kv = K
    cdef double ma = m + alpha
    cdef int mode = _mode(ma)
    cdef int ik = <int>floor(ma)
    cdef double t
    cdef Py_ssize_t it
    for it in range(T):
        t = nodes[it]
        with nogil:
            _fill(&dyz[0, 0], &Kv[0, 0], N * P, t, ma, scale * exp(alpha * log(t)), mode, ik, False)
        np.dot(K, F, out=out[it])
    return out


def cone_table(const double[:, ::1] dxy, const double[::1] wy,
               const double[:, :, ::1] sq, const double[::1] nodes,
               double m, double mlam):
    """``out[f, x, k] = t_k^-m sum_y (t_k / (t_k + dxy))^mlam wy[y] sq[k, y, f]``."""
    cdef Py_ssize_t M = dxy.shape[0]
    cdef Py_ssize_t N = dxy.shape[1]
    cdef Py_ssize_t T = nodes.shape[0]
    cdef Py_ssize_t nf = sq.shape[2]
    if wy.shape[0] != N or sq.shape[0] != T or sq.shape[1] != N:
        raise ValueError("inconsistent shapes")
    res = np.zeros((T, M, nf), dtype=np.float64)
    if M == 0 or N == 0:
        return np.ascontiguousarray(res.transpose(2, 1, 0))
    S = np.asarray(sq)
    W = np.empty((M, N), dtype=np.float64)
    cdef double[:, ::1] Wv = W
    cdef int mode = _mode(mlam)
    cdef int ik = <int>floor(mlam)
    cdef double t
    cdef Py_ssize_t it, y
    for it in range(T):
        t = nodes[it]
        with nogil:
            _fill(&dxy[0, 0], &Wv[0, 0], M * N, t, mlam, 1.0, mode, ik, True)
        Sw = S[it] * (np.asarray(wy)[:, None] * exp(-m * log(t)))
        np.dot(W, Sw, out=res[it])
    return np.ascontiguousarray(res.transpose(2, 1, 0))
