# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels: fused im2col gather + BLAS dgemm.

Mirrors numpy_backend semantics exactly (cross-correlation, zero padding,
float64).  The gather/scatter loops run without the GIL and each output
element has a fixed accumulation order, so results are deterministic.
"""
import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

NAME = "cython"


cdef inline void _rm_dgemm(bint ta, bint tb, int m, int n, int kd,
                           double alpha, const double* a, int lda,
                           const double* b, int ldb,
                           double beta, double* c, int ldc) noexcept nogil:
    # Row-major C(m,n) = alpha * opA(A) @ opB(B) + beta * C, expressed as the
    # column-major product C^T = opB(B)^T @ opA(A)^T.  Leading dimensions are
    # the row-major storage widths.
    cdef char cta = b'T' if ta else b'N'
    cdef char ctb = b'T' if tb else b'N'
    dgemm(&ctb, &cta, &n, &m, &kd, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


cdef void _gather(const double[:, :, ::1] x, double[:, ::1] colt,
                  int kh, int kw, int stride, int pad) noexcept nogil:
    # x: one sample (c,h,w); colt: (c*kh*kw, ho*wo) with implicit zero padding.
    cdef int c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef int wo_all = colt.shape[1]
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (w + 2 * pad - kw) // stride + 1
    cdef int ci, i, j, oh, ow, ih, row, base, lo, hi
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                # valid ow range: 0 <= ow*stride + j - pad < w
                lo = 0 if pad <= j else (pad - j + stride - 1) // stride
                hi = (w - 1 - j + pad) // stride
                if hi > wo - 1:
                    hi = wo - 1
                for oh in range(ho):
                    ih = oh * stride + i - pad
                    base = oh * wo
                    if ih < 0 or ih >= h:
                        for ow in range(wo):
                            colt[row, base + ow] = 0.0
                        continue
                    for ow in range(lo):
                        colt[row, base + ow] = 0.0
                    for ow in range(lo, hi + 1):
                        colt[row, base + ow] = x[ci, ih, ow * stride + j - pad]
                    for ow in range(hi + 1, wo):
                        colt[row, base + ow] = 0.0


cdef void _scatter(double[:, :, ::1] dx, const double[:, ::1] dcolt,
                   int kh, int kw, int stride, int pad) noexcept nogil:
    # Transpose of _gather: accumulate column gradients back into one sample.
    cdef int c = dx.shape[0], h = dx.shape[1], w = dx.shape[2]
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (w + 2 * pad - kw) // stride + 1
    cdef int ci, i, j, oh, ow, ih, row, base, lo, hi
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                lo = 0 if pad <= j else (pad - j + stride - 1) // stride
                hi = (w - 1 - j + pad) // stride
                if hi > wo - 1:
                    hi = wo - 1
                for oh in range(ho):
                    ih = oh * stride + i - pad
                    if ih < 0 or ih >= h:
                        continue
                    base = oh * wo
                    for ow in range(lo, hi + 1):
                        dx[ci, ih, ow * stride + j - pad] += dcolt[row, base + ow]


def conv2d_forward(cnp.ndarray x, cnp.ndarray weight, cnp.ndarray bias,
                   int stride, int pad):
    """Cross-correlate a batch (n,c,h,w) with filters (k,c,kh,kw) plus bias (k,)."""
    cdef int n = x.shape[0], h = x.shape[2], w = x.shape[3]
    cdef int k = weight.shape[0], kh = weight.shape[2], kw = weight.shape[3]
    cdef int kcol = weight.shape[1] * kh * kw
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (w + 2 * pad - kw) // stride + 1
    cdef int m = ho * wo

    y_arr = np.empty((n, k, ho, wo), dtype=np.float64)
    colt_arr = np.empty((kcol, m), dtype=np.float64)

    cdef double[:, :, :, ::1] xv = x
    cdef double[:, :, :, ::1] yv = y_arr
    cdef double[:, ::1] colt = colt_arr
    cdef double[:, ::1] wmat = weight.reshape(k, kcol)
    cdef double[::1] bv = bias
    cdef int i, ki, pi
    with nogil:
        for i in range(n):
            _gather(xv[i], colt, kh, kw, stride, pad)
            # y_i (k, m) = wmat (k, kcol) @ colt (kcol, m)
            _rm_dgemm(0, 0, k, m, kcol, 1.0, &wmat[0, 0], kcol,
                      &colt[0, 0], m, 0.0, &yv[i, 0, 0, 0], m)
            for ki in range(k):
                for pi in range(m):
                    yv[i, ki, pi // wo, pi % wo] += bv[ki]
    return y_arr


def conv2d_backward(cnp.ndarray x, cnp.ndarray weight, cnp.ndarray dy,
                    int stride, int pad, bint need_dx=True):
    """Gradients of conv2d_forward; returns (dx or None, dweight, dbias)."""
    cdef int n = x.shape[0], h = x.shape[2], w = x.shape[3]
    cdef int k = weight.shape[0], kh = weight.shape[2], kw = weight.shape[3]
    cdef int kcol = weight.shape[1] * kh * kw
    cdef int ho = dy.shape[2], wo = dy.shape[3]
    cdef int m = ho * wo

    dw_arr = np.zeros((k, kcol), dtype=np.float64)
    colt_arr = np.empty((kcol, m), dtype=np.float64)
    dx_arr = np.zeros_like(x) if need_dx else None
    dcolt_arr = np.empty((kcol, m), dtype=np.float64) if need_dx else None

    cdef double[:, :, :, ::1] xv = x
    cdef double[:, :, :, ::1] dyv = dy
    cdef double[:, ::1] colt = colt_arr
    cdef double[:, ::1] dwmat = dw_arr
    cdef double[:, ::1] wmat = weight.reshape(k, kcol)
    cdef double[:, ::1] dcolt
    cdef double[:, :, :, ::1] dxv
    cdef int i
    if need_dx:
        dcolt = dcolt_arr
        dxv = dx_arr
        with nogil:
            for i in range(n):
                _gather(xv[i], colt, kh, kw, stride, pad)
                _rm_dgemm(0, 1, k, kcol, m, 1.0, &dyv[i, 0, 0, 0], m,
                          &colt[0, 0], m, 1.0, &dwmat[0, 0], kcol)
                # dcolt (kcol, m) = wmat^T (kcol, k) @ dy_i (k, m)
                _rm_dgemm(1, 0, kcol, m, k, 1.0, &wmat[0, 0], kcol,
                          &dyv[i, 0, 0, 0], m, 0.0, &dcolt[0, 0], m)
                _scatter(dxv[i], dcolt, kh, kw, stride, pad)
    else:
        with nogil:
            for i in range(n):
                _gather(xv[i], colt, kh, kw, stride, pad)
                _rm_dgemm(0, 1, k, kcol, m, 1.0, &dyv[i, 0, 0, 0], m,
                          &colt[0, 0], m, 1.0, &dwmat[0, 0], kcol)

    dweight = dw_arr.reshape(weight.shape[0], weight.shape[1], kh, kw)
    dbias = np.ascontiguousarray(dy.sum(axis=(0, 2, 3)))
    return dx_arr, dweight, dbias
