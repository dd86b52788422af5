# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: fused gate backward, conv-tap combine/scatter, and
fused Adam updates. Semantics mirror kernels_py.py exactly.

The gate *forward* stays in numpy in both backends: its cost is tanh/exp,
which numpy evaluates with SIMD far faster than scalar libm calls.
"""

import numpy as np

cimport cython
from libc.math cimport sqrt, sqrtf

ctypedef fused real:
    float
    double


def gate_bwd_cached(real[:, :, ::1] ta, real[:, :, ::1] sig, real[:, :, ::1] dout):
    """Gradient w.r.t. pre from the cached forward factors."""
    cdef Py_ssize_t c = ta.shape[0]
    cdef Py_ssize_t rows = c * ta.shape[1]
    cdef Py_ssize_t L = ta.shape[2]
    dpre_arr = np.empty((2 * c, ta.shape[1], L), dtype=np.asarray(ta).dtype)
    cdef real[:, :, ::1] dpre = dpre_arr
    cdef real *da = &dpre[0, 0, 0]
    cdef real *db = &dpre[c, 0, 0]
    cdef real *tp = &ta[0, 0, 0]
    cdef real *sp = &sig[0, 0, 0]
    cdef real *dp = &dout[0, 0, 0]
    cdef Py_ssize_t i, j, base
    cdef real t, s, d
    for i in range(rows):
        base = i * L
        for j in range(base, base + L):
            t = tp[j]
            s = sp[j]
            d = dp[j]
            da[j] = d * s * (<real>1.0 - t * t)
            db[j] = d * t * s * (<real>1.0 - s)
    return dpre_arr


def conv_taps_fwd(real[:, :, :, ::1] z, real[::1] bias, Py_ssize_t dilation):
    """Combine kernel-3 tap responses z (3, Co, B, L) into y = center +
    shifted(left) + shifted(right) + bias, zero-padded at the edges."""
    cdef Py_ssize_t co = z.shape[1]
    cdef Py_ssize_t B = z.shape[2]
    cdef Py_ssize_t L = z.shape[3]
    cdef Py_ssize_t rows = co * B
    y_arr = np.empty((co, B, L), dtype=np.asarray(z).dtype)
    cdef real[:, :, ::1] y = y_arr
    cdef real *zl = &z[0, 0, 0, 0]
    cdef real *zc = &z[1, 0, 0, 0]
    cdef real *zr = &z[2, 0, 0, 0]
    cdef real *yp = &y[0, 0, 0]
    cdef Py_ssize_t i, j, base, d = dilation
    cdef Py_ssize_t cut = L - d if L > d else 0
    cdef real bv
    for i in range(rows):
        base = i * L
        bv = bias[i // B]
        for j in range(0, L):
            yp[base + j] = zc[base + j] + bv
        for j in range(d, L):
            yp[base + j] = yp[base + j] + zl[base + j - d]
        for j in range(0, cut):
            yp[base + j] = yp[base + j] + zr[base + j + d]
    return y_arr


def conv_taps_bwd_scatter(real[:, :, ::1] dy, Py_ssize_t dilation):
    """Scatter dy into per-tap gradients dz (3, Co, B, L) for the tap GEMMs."""
    cdef Py_ssize_t co = dy.shape[0]
    cdef Py_ssize_t B = dy.shape[1]
    cdef Py_ssize_t L = dy.shape[2]
    cdef Py_ssize_t rows = co * B
    dz_arr = np.empty((3, co, B, L), dtype=np.asarray(dy).dtype)
    cdef real[:, :, :, ::1] dz = dz_arr
    cdef real *dl = &dz[0, 0, 0, 0]
    cdef real *dc = &dz[1, 0, 0, 0]
    cdef real *dr = &dz[2, 0, 0, 0]
    cdef real *dp = &dy[0, 0, 0]
    cdef Py_ssize_t i, j, base, d = dilation
    cdef Py_ssize_t cut = L - d if L > d else 0
    cdef Py_ssize_t zr_lo = d if d < L else L
    for i in range(rows):
        base = i * L
        for j in range(0, L):
            dc[base + j] = dp[base + j]
        for j in range(0, cut):
            dl[base + j] = dp[base + j + d]
        for j in range(cut, L):
            dl[base + j] = <real>0.0
        for j in range(0, zr_lo):
            dr[base + j] = <real>0.0
        for j in range(zr_lo, L):
            dr[base + j] = dp[base + j - d]
    return dz_arr


def adam_update(real[::1] param, real[::1] grad, real[::1] m, real[::1] v,
                double lr_t, double beta1, double beta2, double eps):
    """Fused in-place Adam step on flattened tensors."""
    cdef Py_ssize_t n = param.shape[0]
    cdef Py_ssize_t i
    cdef real b1 = <real>beta1
    cdef real b2 = <real>beta2
    cdef real lr = <real>lr_t
    cdef real e = <real>eps
    cdef real one = <real>1.0
    cdef real g
    for i in range(n):
        g = grad[i]
        m[i] = b1 * m[i] + (one - b1) * g
        v[i] = b2 * v[i] + (one - b2) * g * g
        if real is float:
            param[i] -= lr * m[i] / (sqrtf(v[i]) + e)
        else:
            param[i] -= lr * m[i] / (sqrt(v[i]) + e)
