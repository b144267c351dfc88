# cython: language_level=3
"""Compiled dense Newton power-flow kernels (rectangular voltage coordinates).

Same call signatures as :mod:`pqflex._pykernels`.
"""
import numpy as np

from libc.math cimport fabs

ctypedef double complex cplx


cdef int _solve_inplace(double[:, ::1] A, double[::1] b, Py_ssize_t n) noexcept nogil:
    """Gaussian elimination with partial pivoting; overwrites b with the solution."""
    cdef Py_ssize_t i, j, k, p
    cdef double amax, scale, t, f
    scale = 0.0
    for i in range(n):
        for j in range(n):
            if fabs(A[i, j]) > scale:
                scale = fabs(A[i, j])
    if scale == 0.0:
        return 1
    for k in range(n):
        p = k
        amax = fabs(A[k, k])
        for i in range(k + 1, n):
            if fabs(A[i, k]) > amax:
                amax = fabs(A[i, k])
                p = i
        if amax <= 1e-14 * scale:
            return 1
        if p != k:
            for j in range(n):
                t = A[k, j]
                A[k, j] = A[p, j]
                A[p, j] = t
            t = b[k]
            b[k] = b[p]
            b[p] = t
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            if f != 0.0:
                for j in range(k + 1, n):
                    A[i, j] -= f * A[k, j]
                b[i] -= f * b[k]
    for i in range(n - 1, -1, -1):
        t = b[i]
        for j in range(i + 1, n):
            t -= A[i, j] * b[j]
        b[i] = t / A[i, i]
    return 0


cdef int _newton_one(const cplx[:, ::1] Y, cplx[::1] V, const Py_ssize_t[::1] var,
                     const cplx[::1] sspec, double tol, int max_iter,
                     double[:, ::1] J, double[::1] r, cplx[::1] I,
                     int* iters, double* resnorm) noexcept nogil:
    cdef Py_ssize_t N = Y.shape[0]
    cdef Py_ssize_t m = var.shape[0]
    cdef Py_ssize_t a, b, j, k, it
    cdef cplx acc, d, t, dse, dsf, ci
    cdef double norm
    cdef cplx jj = 1j
    for it in range(max_iter + 1):
        for k in range(N):
            acc = 0
            for j in range(N):
                acc = acc + Y[k, j] * V[j]
            I[k] = acc
        norm = 0.0
        for a in range(m):
            k = var[a]
            d = sspec[a] - V[k] * I[k].conjugate()
            r[a] = d.real
            r[m + a] = d.imag
            if fabs(d.real) > norm:
                norm = fabs(d.real)
            if fabs(d.imag) > norm:
                norm = fabs(d.imag)
        resnorm[0] = norm
        iters[0] = it
        if norm != norm:
            return 3
        if norm < tol:
            return 0
        if it == max_iter:
            break
        for a in range(m):
            k = var[a]
            ci = I[k].conjugate()
            for b in range(m):
                j = var[b]
                t = V[k] * Y[k, j].conjugate()
                dse = t
                dsf = -jj * t
                if j == k:
                    dse = dse + ci
                    dsf = dsf + jj * ci
                J[a, b] = dse.real
                J[a, m + b] = dsf.real
                J[m + a, b] = dse.imag
                J[m + a, m + b] = dsf.imag
        if _solve_inplace(J, r, 2 * m):
            return 2
        for a in range(m):
            k = var[a]
            V[k] = V[k] + r[a] + jj * r[m + a]
    return 1


def newton_dense(Y, v0, var, sspec, double tol=1e-8, int max_iter=50):
    """Solve one power flow; returns ``(v, iterations, residual_norm, status)``.

    status: 0 converged, 1 iteration limit, 2 singular Jacobian, 3 non-finite.
    """
    cdef cplx[:, ::1] Yv = np.ascontiguousarray(Y, dtype=np.complex128)
    cdef cplx[::1] V = np.array(v0, dtype=np.complex128)
    cdef Py_ssize_t[::1] varv = np.ascontiguousarray(var, dtype=np.intp)
    cdef cplx[::1] s = np.ascontiguousarray(sspec, dtype=np.complex128)
    cdef Py_ssize_t m = varv.shape[0]
    cdef double[:, ::1] J = np.empty((2 * m, 2 * m))
    cdef double[::1] r = np.empty(2 * m)
    cdef cplx[::1] I = np.empty(Yv.shape[0], dtype=np.complex128)
    cdef int iters = 0
    cdef double resnorm = 0.0
    cdef int status
    with nogil:
        status = _newton_one(Yv, V, varv, s, tol, max_iter, J, r, I, &iters, &resnorm)
    return np.asarray(V), iters, resnorm, status


def newton_dense_batch(Y, v0, var, sspec, double tol=1e-8, int max_iter=50):
    """Solve one power flow per row of ``sspec`` (shape ``(n, len(var))``), all from ``v0``."""
    cdef cplx[:, ::1] Yv = np.ascontiguousarray(Y, dtype=np.complex128)
    cdef cplx[::1] V0 = np.ascontiguousarray(v0, dtype=np.complex128)
    cdef Py_ssize_t[::1] varv = np.ascontiguousarray(var, dtype=np.intp)
    cdef cplx[:, ::1] S = np.ascontiguousarray(np.atleast_2d(sspec), dtype=np.complex128)
    cdef Py_ssize_t n = S.shape[0]
    cdef Py_ssize_t N = Yv.shape[0]
    cdef Py_ssize_t m = varv.shape[0]
    out_v = np.empty((n, N), dtype=np.complex128)
    out_it = np.zeros(n, dtype=np.int32)
    out_res = np.zeros(n)
    out_status = np.zeros(n, dtype=np.int32)
    cdef cplx[:, ::1] OV = out_v
    cdef int[::1] OI = out_it
    cdef double[::1] OR = out_res
    cdef int[::1] OS = out_status
    cdef double[:, ::1] J = np.empty((2 * m, 2 * m))
    cdef double[::1] r = np.empty(2 * m)
    cdef cplx[::1] I = np.empty(N, dtype=np.complex128)
    cdef Py_ssize_t i, k
    cdef int iters = 0
    cdef double resnorm = 0.0
    with nogil:
        for i in range(n):
            for k in range(N):
                OV[i, k] = V0[k]
            OS[i] = _newton_one(Yv, OV[i, :], varv, S[i, :], tol, max_iter, J, r, I, &iters, &resnorm)
            OI[i] = iters
            OR[i] = resnorm
    return out_v, out_it, out_res, out_status
