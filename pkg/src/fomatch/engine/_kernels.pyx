# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch kernels; same contract as ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport isnan, INFINITY

cnp.import_array()


def simulate(const signed char[::1] kind, const int[::1] vert, const long long[::1] indptr,
             const int[::1] indices, const double[::1] offer, const double[:, ::1] gy, long stop):
    cdef Py_ssize_t S = gy.shape[0], n = gy.shape[1]
    partner_a = np.full((S, n), -1, dtype=np.int32)
    role_a = np.zeros((S, n), dtype=np.int8)
    alpha_a = np.zeros((S, n))
    mtime_a = np.full((S, n), -1, dtype=np.int32)
    cdef int[:, ::1] partner = partner_a
    cdef signed char[:, ::1] role = role_a
    cdef double[:, ::1] alpha = alpha_a
    cdef int[:, ::1] mtime = mtime_a
    cdef unsigned char[::1] arrived = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] expired = np.zeros(n, dtype=np.uint8)
    cdef Py_ssize_t t, s, k, lo, hi, bestk
    cdef int u, v, bestv
    cdef double sc, best
    for t in range(stop + 1):
        u = vert[t]
        if kind[t] == 0:
            arrived[u] = 1
            continue
        lo = indptr[u]
        hi = indptr[u + 1]
        for k in range(lo, hi):
            v = indices[k]
            if arrived[v] and not expired[v] and isnan(offer[k]):
                raise KeyError(f"missing offer entry at deadline of vertex {u}")
        expired[u] = 1
        with nogil:
            for s in range(S):
                if partner[s, u] >= 0:
                    continue
                best = -INFINITY
                bestk = -1
                for k in range(lo, hi):
                    v = indices[k]
                    if not arrived[v] or expired[v] or partner[s, v] >= 0:
                        continue
                    sc = 1.0 - gy[s, v] - offer[k]
                    if sc > best:
                        best = sc
                        bestk = k
                if bestk < 0:
                    continue
                bestv = indices[bestk]
                partner[s, u] = bestv
                partner[s, bestv] = u
                role[s, u] = 1
                role[s, bestv] = 2
                alpha[s, u] = best
                alpha[s, bestv] = gy[s, bestv] + offer[bestk]
                mtime[s, u] = <int>t
                mtime[s, bestv] = <int>t
    return partner_a, role_a, alpha_a, mtime_a
