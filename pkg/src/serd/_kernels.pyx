# cython: language_level=3
"""Compiled fixed-point loops over the sparse successor-slot layout.

Both solvers iterate synchronously (new table from old table) until the
sup-norm change of one sweep is <= tol; the array passed in is overwritten
with the last iterate. They return ``(residual, iterations)``.
"""
import numpy as np

from libc.math cimport exp, log, fabs, INFINITY
from libc.string cimport memcpy


cdef inline double _lse_row(double* row, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    cdef double m = row[0]
    cdef double acc = 0.0
    for j in range(1, n):
        if row[j] > m:
            m = row[j]
    for j in range(n):
        acc += exp(row[j] - m)
    return m + log(acc)


def soft_q_solve(const Py_ssize_t[:, :, ::1] succ, const double[:, :, ::1] prob,
                 const double[:, ::1] reward, double gamma, double[:, ::1] q,
                 double tol, long max_iter):
    cdef Py_ssize_t S = succ.shape[0], A = succ.shape[1], K = succ.shape[2]
    cdef Py_ssize_t s, a, k
    cdef long it = 0
    cdef double res = INFINITY, acc, val, d
    cdef double[::1] v = np.empty(S)
    cdef double[:, ::1] qn = np.empty((S, A))
    if S == 0:
        return 0.0, 0
    with nogil:
        while it < max_iter:
            for s in range(S):
                v[s] = _lse_row(&q[s, 0], A)
            res = 0.0
            for s in range(S):
                for a in range(A):
                    acc = 0.0
                    for k in range(K):
                        acc = acc + prob[s, a, k] * v[succ[s, a, k]]
                    val = reward[s, a] + gamma * acc
                    d = fabs(val - q[s, a])
                    if d > res:
                        res = d
                    qn[s, a] = val
            memcpy(&q[0, 0], &qn[0, 0], S * A * sizeof(double))
            it += 1
            if res <= tol:
                break
    return res, it


def grad_solve(const Py_ssize_t[:, :, ::1] succ, const double[:, :, ::1] prob,
               const double[:, ::1] pi, const double[:, :, ::1] b, double gamma,
               double[:, :, ::1] phi, double tol, long max_iter):
    cdef Py_ssize_t S = succ.shape[0], A = succ.shape[1], K = succ.shape[2]
    cdef Py_ssize_t N = b.shape[2]
    cdef Py_ssize_t s, a, k, i, nxt
    cdef long it = 0
    cdef double res = INFINITY, w, val, d
    cdef double[:, ::1] expect = np.empty((S, N))
    cdef double[:, :, ::1] phin = np.empty((S, A, N))
    cdef double[::1] acc = np.empty(N)
    if S == 0 or N == 0:
        return 0.0, 0
    with nogil:
        while it < max_iter:
            for s in range(S):
                for i in range(N):
                    expect[s, i] = 0.0
                for a in range(A):
                    w = pi[s, a]
                    for i in range(N):
                        expect[s, i] = expect[s, i] + w * phi[s, a, i]
            res = 0.0
            for s in range(S):
                for a in range(A):
                    for i in range(N):
                        acc[i] = 0.0
                    for k in range(K):
                        w = prob[s, a, k]
                        nxt = succ[s, a, k]
                        for i in range(N):
                            acc[i] = acc[i] + w * expect[nxt, i]
                    for i in range(N):
                        val = b[s, a, i] + gamma * acc[i]
                        d = fabs(val - phi[s, a, i])
                        if d > res:
                            res = d
                        phin[s, a, i] = val
            memcpy(&phi[0, 0, 0], &phin[0, 0, 0], S * A * N * sizeof(double))
            it += 1
            if res <= tol:
                break
    return res, it
