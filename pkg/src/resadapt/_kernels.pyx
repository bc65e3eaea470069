# cython: language_level=3
# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: cosine score matrix, row softmax, masked-CE loss
and anchor gradient.

Same contracts as the numpy fallback.  Banks arrive as float32 storage,
anchor tables are coerced to float64 (exact for float32 storage) so
callers can form residual-adapted sums at full precision.  All
accumulation is float64 with a fixed four-lane partial-sum order: results
are deterministic and every per-row value is independent of batch size.
ce_loss_grad reuses the exact arithmetic of cosine_scores + softmax_rows,
so probabilities agree bit for bit across the classify and loss paths
within this backend.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

from .errors import DegenerateVector, DimMismatch

cnp.import_array()

NAME = "compiled"

cdef double NORM_EPS = 1e-12


cdef inline double _dot64(const double* a, const double* b,
                          Py_ssize_t n) noexcept nogil:
    # four-lane partial sums: deterministic, element-count dependent only
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= n:
        s0 += a[i] * b[i]
        s1 += a[i + 1] * b[i + 1]
        s2 += a[i + 2] * b[i + 2]
        s3 += a[i + 3] * b[i + 3]
        i += 4
    while i < n:
        s0 += a[i] * b[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


cdef inline void _widen_row(const float[:, ::1] x, Py_ssize_t i,
                            double* out) noexcept nogil:
    cdef Py_ssize_t d
    for d in range(x.shape[1]):
        out[d] = <double>x[i, d]


cdef int _anchor_norms(const double[:, ::1] a, double[::1] out) noexcept nogil:
    cdef Py_ssize_t k
    cdef int bad = 0
    for k in range(a.shape[0]):
        out[k] = sqrt(_dot64(&a[k, 0], &a[k, 0], a.shape[1]))
        if out[k] <= NORM_EPS:
            bad = 1
    return bad


cdef void _softmax_row(const double[:, ::1] s, Py_ssize_t n, double tau,
                       double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t k
    cdef Py_ssize_t K = s.shape[1]
    cdef double m = s[n, 0]
    cdef double tot = 0.0
    for k in range(1, K):
        if s[n, k] > m:
            m = s[n, k]
    for k in range(K):
        out[n, k] = exp((s[n, k] - m) / tau)
        tot += out[n, k]
    for k in range(K):
        out[n, k] /= tot


def cosine_scores(object bank, object anchors):
    """(N, D) float32 x (K, D) anchors -> (N, K) float64 cosine matrix."""
    cdef const float[:, ::1] x = np.ascontiguousarray(bank, dtype=np.float32)
    cdef const double[:, ::1] a = np.ascontiguousarray(anchors, dtype=np.float64)
    if x.shape[1] != a.shape[1]:
        raise DimMismatch(f"bank dim {x.shape[1]} != anchor dim {a.shape[1]}")
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t K = a.shape[0]
    cdef Py_ssize_t D = a.shape[1]
    na_arr = np.empty(K, dtype=np.float64)
    row_arr = np.empty(D, dtype=np.float64)
    cdef double[::1] na = na_arr
    cdef double[::1] row = row_arr
    if K and _anchor_norms(a, na):
        raise DegenerateVector("anchor row with norm <= 1e-12")
    out_arr = np.empty((N, K), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n, k
    cdef double nx
    cdef int bad = 0
    with nogil:
        for n in range(N):
            _widen_row(x, n, &row[0])
            nx = sqrt(_dot64(&row[0], &row[0], D))
            if nx <= NORM_EPS:
                bad = 1
                break
            for k in range(K):
                out[n, k] = _dot64(&row[0], &a[k, 0], D) / (nx * na[k])
    if bad:
        raise DegenerateVector("embedding row with norm <= 1e-12")
    return out_arr


def softmax_rows(object scores, double tau):
    """Temperature softmax along axis 1 with max-subtraction (float64)."""
    s_arr = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const double[:, ::1] s = s_arr
    cdef Py_ssize_t N = s.shape[0]
    if N == 0:
        return np.zeros_like(s_arr)
    out_arr = np.empty_like(s_arr)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n
    with nogil:
        for n in range(N):
            _softmax_row(s, n, tau, out)
    return out_arr


def ce_loss_grad(object bank, object labels, object anchors, double tau,
                 bint want_grad=True):
    """Per-sample NLL of the label class plus d(mean nll)/d(anchors).

    anchors must be the (K, D) float64 residual-adapted table.  Returns
    (nll (B,) float64, grad (K, D) float64 or None).
    """
    cdef const float[:, ::1] x = np.ascontiguousarray(bank, dtype=np.float32)
    cdef const double[:, ::1] a = np.ascontiguousarray(anchors, dtype=np.float64)
    cdef const cnp.int64_t[:] y = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t B = x.shape[0]
    cdef Py_ssize_t K = a.shape[0]
    cdef Py_ssize_t D = a.shape[1]
    if x.shape[1] != D:
        raise DimMismatch(f"bank dim {x.shape[1]} != anchor dim {D}")
    if y.shape[0] != B:
        raise DimMismatch(f"{B} samples but {y.shape[0]} labels")
    cdef Py_ssize_t n, k, d
    for n in range(B):
        if y[n] < 0 or y[n] >= K:
            raise DimMismatch(f"label outside [0, {K})")

    if B == 0:
        return (np.zeros(0, dtype=np.float64),
                np.zeros((K, D), dtype=np.float64) if want_grad else None)

    na_arr = np.empty(K, dtype=np.float64)
    nx_arr = np.empty(B, dtype=np.float64)
    row_arr = np.empty(D, dtype=np.float64)
    cdef double[::1] na = na_arr
    cdef double[::1] nx = nx_arr
    cdef double[::1] row = row_arr
    if _anchor_norms(a, na):
        raise DegenerateVector("anchor row with norm <= 1e-12")

    s_arr = np.empty((B, K), dtype=np.float64)
    p_arr = np.empty((B, K), dtype=np.float64)
    picked_arr = np.empty(B, dtype=np.float64)
    cdef double[:, ::1] s = s_arr
    cdef double[:, ::1] p = p_arr
    cdef double[::1] picked = picked_arr
    cdef int bad = 0
    with nogil:
        for n in range(B):
            _widen_row(x, n, &row[0])
            nx[n] = sqrt(_dot64(&row[0], &row[0], D))
            if nx[n] <= NORM_EPS:
                bad = 1
                break
            for k in range(K):
                s[n, k] = _dot64(&row[0], &a[k, 0], D) / (nx[n] * na[k])
            _softmax_row(s, n, tau, p)
            picked[n] = p[n, y[n]]
    if bad:
        raise DegenerateVector("embedding row with norm <= 1e-12")
    # numpy's log, not libm's: keeps -log p bit-identical to the fallback
    # backend and to oracles that take np.log of the classifier's probs.
    nll_arr = -np.log(picked_arr)
    if not want_grad:
        return nll_arr, None

    w_arr = np.zeros((K, D), dtype=np.float64)
    c_arr = np.zeros(K, dtype=np.float64)
    xh_arr = np.empty(D, dtype=np.float64)
    grad_arr = np.empty((K, D), dtype=np.float64)
    cdef double[:, ::1] w = w_arr
    cdef double[::1] c = c_arr
    cdef double[::1] xh = xh_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double btau = <double>B * tau
    cdef double g, ck, nak
    cdef double* wk
    cdef const double* ak
    with nogil:
        for n in range(B):
            _widen_row(x, n, &xh[0])
            for d in range(D):
                xh[d] /= nx[n]
            for k in range(K):
                g = (p[n, k] - (1.0 if y[n] == k else 0.0)) / btau
                c[k] += g * s[n, k]
                wk = &w[k, 0]
                for d in range(D):
                    wk[d] += g * xh[d]
        for k in range(K):
            ck = c[k]
            nak = na[k]
            ak = &a[k, 0]
            wk = &w[k, 0]
            for d in range(D):
                grad[k, d] = (wk[d] - ck * (ak[d] / nak)) / nak
    return nll_arr, grad_arr
