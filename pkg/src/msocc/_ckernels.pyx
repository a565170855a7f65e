# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-site likelihood kernel.

Mirrors ``msocc._pykernels.loglik_grad``; see that module for the maths.
Sites are reduced serially in index order so results do not depend on
the calling thread.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, log, log1p

cnp.import_array()


cdef inline double _log_sigmoid(double x) noexcept nogil:
    if x >= 0:
        return -log1p(exp(-x))
    return x - log1p(exp(x))


def loglik_grad(
    const double[::1] log_psi,
    const double[::1] eta,
    const int[:, ::1] det,
    const int[::1] nocc,
    bint want_grad=True,
):
    cdef Py_ssize_t n_states = log_psi.shape[0]
    cdef Py_ssize_t S = eta.shape[0]
    cdef Py_ssize_t I = det.shape[0]
    cdef Py_ssize_t i, s, z, low
    cdef double ll = 0.0, mx, acc, lse, w, d, n
    cdef unsigned int mask

    state_post_arr = np.zeros(n_states, dtype=np.float64)
    score_arr = np.zeros(S, dtype=np.float64)
    cdef double[::1] state_post = state_post_arr
    cdef double[::1] score = score_arr

    cdef double[::1] logp = np.empty(S)
    cdef double[::1] logq = np.empty(S)
    cdef double[::1] p = np.empty(S)
    cdef double[::1] A = np.empty(S)
    cdef double[::1] m = np.empty(S)
    cdef double[::1] sumA = np.empty(n_states)
    cdef double[::1] lt = np.empty(n_states)

    with nogil:
        for s in range(S):
            logp[s] = _log_sigmoid(eta[s])
            logq[s] = _log_sigmoid(-eta[s])
            p[s] = exp(logp[s])

        for i in range(I):
            mask = 0
            n = nocc[i]
            for s in range(S):
                d = det[i, s]
                A[s] = d * logp[s] + (n - d) * logq[s]
                if det[i, s] > 0:
                    mask |= (<unsigned int>1) << s

            sumA[0] = 0.0
            mx = -INFINITY
            for z in range(n_states):
                if z > 0:
                    low = 0
                    while not ((z >> low) & 1):
                        low += 1
                    sumA[z] = sumA[z & (z - 1)] + A[low]
                if (<unsigned int>z & mask) != mask:
                    lt[z] = -INFINITY
                else:
                    lt[z] = log_psi[z] + sumA[z]
                    if lt[z] > mx:
                        mx = lt[z]

            acc = 0.0
            for z in range(n_states):
                if lt[z] != -INFINITY:
                    acc += exp(lt[z] - mx)
            lse = mx + log(acc)
            ll += lse

            if want_grad:
                for s in range(S):
                    m[s] = 0.0
                for z in range(n_states):
                    if lt[z] == -INFINITY:
                        continue
                    w = exp(lt[z] - lse)
                    state_post[z] += w
                    for s in range(S):
                        if (z >> s) & 1:
                            m[s] += w
                for s in range(S):
                    score[s] += m[s] * (det[i, s] - n * p[s])

    return ll, state_post_arr, score_arr
