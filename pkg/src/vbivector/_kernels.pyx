# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-session kernels.

Same contract as ``_kernels_py``: one fused loop per session builds the
latent precision, factorizes it in place, and writes mean, covariance and
log-determinant without allocating (H, n, n) temporaries beyond the output.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log

from .exceptions import DegeneracyError

cnp.import_array()


cdef int _chol_inplace(double[:, ::1] a, Py_ssize_t n) noexcept nogil:
    # lower Cholesky, overwrites the lower triangle; returns failing pivot + 1
    cdef Py_ssize_t i, j, k
    cdef double s, t
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= a[j, k] * a[j, k]
        if not s > 0.0:
            return <int>(j + 1)
        s = sqrt(s)
        a[j, j] = s
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= a[i, k] * a[j, k]
            a[i, j] = t / s
    return 0


cdef void _lower_inverse(double[:, ::1] l, double[:, ::1] out, Py_ssize_t n) noexcept nogil:
    # out = L^-1 (lower triangular), column by column forward substitution
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(n):
        for i in range(n):
            out[i, j] = 0.0
        out[j, j] = 1.0 / l[j, j]
        for i in range(j + 1, n):
            s = 0.0
            for k in range(j, i):
                s -= l[i, k] * out[k, j]
            out[i, j] = s / l[i, i]


def session_posteriors(N, grams, proj):
    cdef double[:, ::1] Nv = np.ascontiguousarray(N, dtype=np.float64)
    cdef double[:, :, ::1] G = np.ascontiguousarray(grams, dtype=np.float64)
    cdef double[:, ::1] P = np.ascontiguousarray(proj, dtype=np.float64)
    cdef Py_ssize_t H = Nv.shape[0]
    cdef Py_ssize_t K = Nv.shape[1]
    cdef Py_ssize_t n = G.shape[2]

    ybar_arr = np.zeros((H, n))
    cov_arr = np.zeros((H, n, n))
    logdet_arr = np.zeros(H)
    cdef double[:, ::1] ybar = ybar_arr
    cdef double[:, :, ::1] cov = cov_arr
    cdef double[::1] ld = logdet_arr
    cdef double[:, ::1] work = np.zeros((n, n))
    cdef double[:, ::1] linv = np.zeros((n, n))

    cdef Py_ssize_t i, k, a, b, c
    cdef double w, s
    cdef int bad = 0
    cdef Py_ssize_t bad_session = -1

    with nogil:
        for i in range(H):
            for a in range(n):
                for b in range(a + 1):
                    work[a, b] = 0.0
                work[a, a] = 1.0
            for k in range(K):
                w = Nv[i, k]
                if w == 0.0:
                    continue
                for a in range(n):
                    for b in range(a + 1):
                        work[a, b] += w * G[k, a, b]
            bad = _chol_inplace(work, n)
            if bad:
                bad_session = i
                break
            s = 0.0
            for a in range(n):
                s += log(work[a, a])
            ld[i] = 2.0 * s
            _lower_inverse(work, linv, n)
            # cov = L^-T L^-1, lower triangle then mirror
            for a in range(n):
                for b in range(a + 1):
                    s = 0.0
                    for c in range(a, n):
                        s += linv[c, a] * linv[c, b]
                    cov[i, a, b] = s
                    cov[i, b, a] = s
            for a in range(n):
                s = 0.0
                for b in range(n):
                    s += cov[i, a, b] * P[i, b]
                ybar[i, a] = s
    if bad:
        raise DegeneracyError(
            f"session {bad_session} precision is not positive definite (pivot {bad - 1})"
        )
    return ybar_arr, cov_arr, logdet_arr


def second_moments(N, ybar, cov):
    cdef double[:, ::1] Nv = np.ascontiguousarray(N, dtype=np.float64)
    cdef double[:, ::1] Y = np.ascontiguousarray(ybar, dtype=np.float64)
    cdef double[:, :, ::1] C = np.ascontiguousarray(cov, dtype=np.float64)
    cdef Py_ssize_t H = Nv.shape[0]
    cdef Py_ssize_t K = Nv.shape[1]
    cdef Py_ssize_t n = Y.shape[1]
    cdef Py_ssize_t npk = n * (n + 1) // 2

    # lower triangles packed row by row so the inner update is one flat loop
    cdef double[:, ::1] Rp = np.zeros((K, npk))
    cdef double[::1] rhop = np.zeros(npk)
    cdef double[::1] S = np.zeros(npk)
    R_arr = np.empty((K, n, n))
    rho_arr = np.empty((n, n))
    cdef double[:, :, ::1] R = R_arr
    cdef double[:, ::1] rho = rho_arr
    cdef Py_ssize_t i, k, a, b, p
    cdef double w

    with nogil:
        for i in range(H):
            p = 0
            for a in range(n):
                for b in range(a + 1):
                    S[p] = C[i, a, b] + Y[i, a] * Y[i, b]
                    rhop[p] += S[p]
                    p += 1
            for k in range(K):
                w = Nv[i, k]
                if w == 0.0:
                    continue
                for p in range(npk):
                    Rp[k, p] += w * S[p]
        p = 0
        for a in range(n):
            for b in range(a + 1):
                rho[a, b] = rhop[p]
                rho[b, a] = rhop[p]
                for k in range(K):
                    R[k, a, b] = Rp[k, p]
                    R[k, b, a] = Rp[k, p]
                p += 1
    return R_arr, rho_arr
