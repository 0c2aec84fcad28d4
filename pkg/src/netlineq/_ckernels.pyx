# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Euler kernels; contract documented in ``_kernels_py``."""

from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dgemv

cdef double DIVERGENCE_NORM = 1e12


cdef inline void matvec(double[:, ::1] M, double *x, double *y, double a, double b) noexcept nogil:
    # y = a * M @ x + b * y for C-ordered M
    cdef int d = M.shape[0]
    cdef int inc = 1
    cdef char trans = b'T'
    dgemv(&trans, &d, &d, &a, &M[0, 0], &d, x, &inc, &b, y, &inc)


cdef inline bint blown(double sq) noexcept nogil:
    return not (sqrt(sq) <= DIVERGENCE_NORM)


def affine_euler(double[:, :, ::1] Ms, double[::1] c, double[::1] z, double h,
                 Py_ssize_t[::1] schedule, Py_ssize_t record_every, double[:, ::1] out):
    cdef Py_ssize_t d = z.shape[0]
    cdef Py_ssize_t steps = schedule.shape[0]
    cdef Py_ssize_t k, i, row = 1
    cdef Py_ssize_t fail = -1
    cdef double sq
    cdef double[::1] f = c.copy()
    out[0, :] = z
    with nogil:
        for k in range(steps):
            for i in range(d):
                f[i] = c[i]
            matvec(Ms[schedule[k]], &z[0], &f[0], 1.0, 1.0)
            sq = 0.0
            for i in range(d):
                z[i] = z[i] + h * f[i]
                sq = sq + z[i] * z[i]
            if blown(sq):
                fail = k + 1
                break
            if (k + 1) % record_every == 0 or k + 1 == steps:
                for i in range(d):
                    out[row, i] = z[i]
                row += 1
    return fail


def dist_euler(double[:, ::1] Lk, double[:, ::1] L, double[:, ::1] A, double[:, ::1] nbAt,
               double alpha, double gamma, Py_ssize_t m,
               double[::1] x, double[::1] y, double[::1] v, double h,
               Py_ssize_t steps, Py_ssize_t record_every,
               double[:, ::1] outx, double[:, ::1] outy, double[:, ::1] outv):
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t k, i, row = 1
    cdef Py_ssize_t fail = -1
    cdef double sq
    cdef double[::1] wx = x.copy()
    cdef double[::1] wy = y.copy()
    cdef double[::1] xd = x.copy()
    cdef double[::1] yd = y.copy()
    cdef double[::1] vd = v.copy()
    outx[0, :] = x
    outy[0, :] = y
    outv[0, :] = v
    with nogil:
        for k in range(steps):
            for i in range(d):
                wx[i] = v[i // m] * x[i]
                wy[i] = v[i // m] * y[i]
            matvec(nbAt, &y[0], &xd[0], -1.0, 0.0)
            matvec(Lk, &wx[0], &xd[0], -alpha, 1.0)
            matvec(Lk, &wy[0], &yd[0], -gamma, 0.0)
            matvec(A, &xd[0], &yd[0], 1.0, 1.0)
            matvec(L, &v[0], &vd[0], -1.0, 0.0)
            sq = 0.0
            for i in range(d):
                x[i] = x[i] + h * xd[i]
                y[i] = y[i] + h * yd[i]
                sq = sq + x[i] * x[i] + y[i] * y[i]
            for i in range(n):
                v[i] = v[i] + h * vd[i]
                sq = sq + v[i] * v[i]
            if blown(sq):
                fail = k + 1
                break
            if (k + 1) % record_every == 0 or k + 1 == steps:
                for i in range(d):
                    outx[row, i] = x[i]
                    outy[row, i] = y[i]
                for i in range(n):
                    outv[row, i] = v[i]
                row += 1
    return fail
