# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MLP kernels.

Same contract and parameter layout as ``_kernels_py``.  Matrix products go
straight to BLAS through scipy's Cython bindings; bias, activation, softmax
and loss are fused loops, which removes the per-call numpy overhead that
dominates for the small layers used here.
"""

import numpy as np
from libc.math cimport exp, log
from scipy.linalg.cython_blas cimport dgemm

cdef double LOG_FLOOR = 1e-12


cdef inline void _gemm(bint trans_a, bint trans_b, int m, int n, int k,
                       double* a, int lda, double* b, int ldb,
                       double beta, double* c, int ldc) noexcept nogil:
    # row-major C = op(A) op(B) + beta C, expressed as column-major C^T = op(B)^T op(A)^T
    cdef char ta = b'T' if trans_b else b'N'
    cdef char tb = b'T' if trans_a else b'N'
    cdef double alpha = 1.0
    dgemm(&ta, &tb, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


cdef inline void _softmax_rows(double* z, Py_ssize_t n, Py_ssize_t k) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double mx, s
    cdef double* row
    for i in range(n):
        row = z + i * k
        mx = row[0]
        for j in range(1, k):
            if row[j] > mx:
                mx = row[j]
        s = 0.0
        for j in range(k):
            row[j] = exp(row[j] - mx)
            s += row[j]
        for j in range(k):
            row[j] /= s


cdef list _forward(const double[::1] params, list sizes, const double[:, ::1] x, double slope):
    """Returns the activations of every layer; the last entry holds probabilities."""
    cdef Py_ssize_t n = x.shape[0]
    cdef int L = len(sizes) - 1
    cdef int l, fan_in, fan_out
    cdef Py_ssize_t i, j, offset = 0
    cdef double[:, ::1] out
    cdef const double[:, ::1] prev = x
    cdef double* pp = <double*> &params[0]
    cdef double* bias
    cdef double v
    cdef list acts = []
    for l in range(L):
        fan_in = sizes[l]
        fan_out = sizes[l + 1]
        out = np.empty((n, fan_out), dtype=np.float64)
        bias = pp + offset + fan_in * fan_out
        with nogil:
            for i in range(n):
                for j in range(fan_out):
                    out[i, j] = bias[j]
            _gemm(False, False, <int> n, fan_out, fan_in,
                  <double*> &prev[0, 0], fan_in, pp + offset, fan_out,
                  1.0, &out[0, 0], fan_out)
            if l < L - 1:
                for i in range(n):
                    for j in range(fan_out):
                        v = out[i, j]
                        if v <= 0.0:
                            out[i, j] = slope * v
            else:
                _softmax_rows(&out[0, 0], n, fan_out)
        offset += fan_in * fan_out + fan_out
        acts.append(out)
        prev = out
    return acts


def forward_probs(const double[::1] params, sizes, const double[:, ::1] x, double slope):
    cdef list acts = _forward(params, list(sizes), x, slope)
    return np.asarray(acts[len(acts) - 1])


def loss_and_grad(const double[::1] params, sizes, const double[:, ::1] x,
                  const int[::1] y, double slope):
    """Mean cross-entropy and its gradient w.r.t. the flat parameters."""
    cdef list sz = list(sizes)
    cdef Py_ssize_t n = x.shape[0]
    cdef int L = len(sz) - 1
    cdef int l, fan_in, fan_out, k = sz[L]
    cdef Py_ssize_t i, j, end
    cdef double total = 0.0, p, inv_n = 1.0 / n
    cdef list acts = _forward(params, sz, x, slope)
    cdef double[:, ::1] dz = acts[L - 1]
    cdef double[:, ::1] da
    cdef double[:, ::1] a_prev
    cdef double[::1] grad = np.empty(params.shape[0], dtype=np.float64)
    cdef double* pp = <double*> &params[0]

    with nogil:
        for i in range(n):
            p = dz[i, y[i]]
            total -= log(p if p > LOG_FLOOR else LOG_FLOOR)
            dz[i, y[i]] = p - 1.0
            for j in range(k):
                dz[i, j] *= inv_n

    end = params.shape[0]
    for l in range(L - 1, -1, -1):
        fan_in = sz[l]
        fan_out = sz[l + 1]
        if l > 0:
            a_prev = acts[l - 1]
        else:
            a_prev = np.asarray(x)
        with nogil:
            for j in range(fan_out):
                grad[end - fan_out + j] = 0.0
            for i in range(n):
                for j in range(fan_out):
                    grad[end - fan_out + j] += dz[i, j]
            end -= fan_out
            _gemm(True, False, fan_in, fan_out, <int> n,
                  &a_prev[0, 0], fan_in, &dz[0, 0], fan_out,
                  0.0, &grad[end - fan_in * fan_out], fan_out)
            end -= fan_in * fan_out
        if l > 0:
            da = np.empty((n, fan_in), dtype=np.float64)
            with nogil:
                _gemm(False, True, <int> n, fan_in, fan_out,
                      &dz[0, 0], fan_out, pp + end, fan_out,
                      0.0, &da[0, 0], fan_in)
                # a_prev > 0 iff its pre-activation > 0 (slope >= 0)
                for i in range(n):
                    for j in range(fan_in):
                        if a_prev[i, j] <= 0.0:
                            da[i, j] *= slope
            dz = da
    return total * inv_n, np.asarray(grad)
