# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU recurrence kernels.

Same contract as ``pedmotion._gru_py``. Matrix products go through BLAS
dgemm; arrays are row-major, so every call is phrased on the transposed
(column-major) view.
"""
import numpy as np
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm


cdef inline double _sig(double a) noexcept nogil:
    return 1.0 / (1.0 + exp(-a))


cdef inline double _tanh(double a) noexcept nogil:
    # glibc tanh is several times slower than exp
    return 2.0 / (1.0 + exp(-2.0 * a)) - 1.0


cdef inline void _mm_abT(double* a, double* w, double* out, int B, int K, int M,
                         double beta) noexcept nogil:
    # out(B, M) = a(B, K) @ w(M, K).T + beta * out
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef double alpha = 1.0
    dgemm(&ta, &tb, &M, &B, &K, &alpha, w, &K, a, &K, &beta, out, &M)


cdef inline void _mm_ab(double* d, double* w, double* out, int B, int M, int K,
                        double beta) noexcept nogil:
    # out(B, K) = d(B, M) @ w(M, K) + beta * out
    cdef char ta = b'N'
    cdef char tb = b'N'
    cdef double alpha = 1.0
    dgemm(&ta, &tb, &K, &B, &M, &alpha, w, &K, d, &M, &beta, out, &K)


cdef inline void _mm_aTb(double* g, double* h, double* out, int B, int M, int K) noexcept nogil:
    # out(M, K) += g(B, M).T @ h(B, K)
    cdef char ta = b'N'
    cdef char tb = b'T'
    cdef double alpha = 1.0
    cdef double beta = 1.0
    dgemm(&ta, &tb, &K, &M, &B, &alpha, h, &K, g, &M, &beta, out, &K)


def gru_forward(double[:, :, ::1] xr, double[:, :, ::1] xz, double[:, :, ::1] xn,
                double[:, ::1] W_rh, double[:, ::1] W_zh, double[:, ::1] W_hh,
                double[:, ::1] h0):
    cdef int T = xr.shape[0]
    cdef int B = xr.shape[1]
    cdef int H = xr.shape[2]
    hs_a = np.empty((T + 1, B, H))
    r_a = np.empty((T, B, H))
    z_a = np.empty((T, B, H))
    n_a = np.empty((T, B, H))
    tmp_a = np.empty((B, H))
    rh_a = np.empty((B, H))
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, ::1] r = r_a
    cdef double[:, :, ::1] z = z_a
    cdef double[:, :, ::1] n = n_a
    cdef double[:, ::1] tmp = tmp_a
    cdef double[:, ::1] rh = rh_a
    cdef int t, b, j
    cdef double hv
    hs[0, :, :] = h0
    if T == 0 or B == 0 or H == 0:
        return hs_a, r_a, z_a, n_a
    with nogil:
        for t in range(T):
            _mm_abT(&hs[t, 0, 0], &W_rh[0, 0], &tmp[0, 0], B, H, H, 0.0)
            for b in range(B):
                for j in range(H):
                    r[t, b, j] = _sig(xr[t, b, j] + tmp[b, j])
                    rh[b, j] = r[t, b, j] * hs[t, b, j]
            _mm_abT(&hs[t, 0, 0], &W_zh[0, 0], &tmp[0, 0], B, H, H, 0.0)
            for b in range(B):
                for j in range(H):
                    z[t, b, j] = _sig(xz[t, b, j] + tmp[b, j])
            _mm_abT(&rh[0, 0], &W_hh[0, 0], &tmp[0, 0], B, H, H, 0.0)
            for b in range(B):
                for j in range(H):
                    n[t, b, j] = _tanh(xn[t, b, j] + tmp[b, j])
                    hv = hs[t, b, j]
                    hs[t + 1, b, j] = hv + z[t, b, j] * (n[t, b, j] - hv)
    return hs_a, r_a, z_a, n_a


def gru_backward(double[:, :, ::1] dh_out, double[:, :, ::1] hs,
                 double[:, :, ::1] r, double[:, :, ::1] z, double[:, :, ::1] n,
                 double[:, ::1] W_rh, double[:, ::1] W_zh, double[:, ::1] W_hh):
    cdef int T = dh_out.shape[0]
    cdef int B = dh_out.shape[1]
    cdef int H = dh_out.shape[2]
    dxr_a = np.empty((T, B, H))
    dxz_a = np.empty((T, B, H))
    dxn_a = np.empty((T, B, H))
    dW_rh_a = np.zeros((H, H))
    dW_zh_a = np.zeros((H, H))
    dW_hh_a = np.zeros((H, H))
    dh_a = np.zeros((B, H))
    nxt_a = np.empty((B, H))
    drh_a = np.empty((B, H))
    rh_a = np.empty((B, H))
    cdef double[:, :, ::1] dxr = dxr_a
    cdef double[:, :, ::1] dxz = dxz_a
    cdef double[:, :, ::1] dxn = dxn_a
    cdef double[:, ::1] dW_rh = dW_rh_a
    cdef double[:, ::1] dW_zh = dW_zh_a
    cdef double[:, ::1] dW_hh = dW_hh_a
    cdef double[:, ::1] dh = dh_a
    cdef double[:, ::1] nxt = nxt_a
    cdef double[:, ::1] drh = drh_a
    cdef double[:, ::1] rh = rh_a
    cdef int t, b, j
    cdef double d, hv, rv, zv, nv
    if T == 0 or B == 0 or H == 0:
        return dxr_a, dxz_a, dxn_a, dW_rh_a, dW_zh_a, dW_hh_a, dh_a
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    d = dh[b, j] + dh_out[t, b, j]
                    dh[b, j] = d
                    hv = hs[t, b, j]
                    zv = z[t, b, j]
                    nv = n[t, b, j]
                    dxn[t, b, j] = d * zv * (1.0 - nv * nv)
                    dxz[t, b, j] = d * (nv - hv) * zv * (1.0 - zv)
                    rh[b, j] = r[t, b, j] * hv
            _mm_ab(&dxn[t, 0, 0], &W_hh[0, 0], &drh[0, 0], B, H, H, 0.0)
            for b in range(B):
                for j in range(H):
                    hv = hs[t, b, j]
                    rv = r[t, b, j]
                    dxr[t, b, j] = drh[b, j] * hv * rv * (1.0 - rv)
                    nxt[b, j] = dh[b, j] * (1.0 - z[t, b, j]) + drh[b, j] * rv
            _mm_aTb(&dxn[t, 0, 0], &rh[0, 0], &dW_hh[0, 0], B, H, H)
            _mm_aTb(&dxz[t, 0, 0], &hs[t, 0, 0], &dW_zh[0, 0], B, H, H)
            _mm_aTb(&dxr[t, 0, 0], &hs[t, 0, 0], &dW_rh[0, 0], B, H, H)
            _mm_ab(&dxz[t, 0, 0], &W_zh[0, 0], &nxt[0, 0], B, H, H, 1.0)
            _mm_ab(&dxr[t, 0, 0], &W_rh[0, 0], &nxt[0, 0], B, H, H, 1.0)
            dh[:, :] = nxt
    return dxr_a, dxz_a, dxn_a, dW_rh_a, dW_zh_a, dW_hh_a, dh_a
