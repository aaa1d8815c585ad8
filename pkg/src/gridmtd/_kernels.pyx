# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled EXP3 self-play loop; see ``_kernels_py`` for the reference."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef double _update(double[::1] p, double[::1] g, double[::1] num, double wsum,
                    Py_ssize_t played, double payoff, double gamma, double eta,
                    double beta, double floor) noexcept nogil:
    cdef Py_ssize_t s, n = p.shape[0]
    cdef double est, gmax, tot
    for s in range(n):
        num[s] += eta * p[s]
    wsum += eta
    for s in range(n):
        est = beta / p[s]
        if s == played:
            est += payoff / p[s]
        g[s] += eta * est
    gmax = g[0]
    for s in range(1, n):
        if g[s] > gmax:
            gmax = g[s]
    tot = 0.0
    for s in range(n):
        p[s] = exp(g[s] - gmax)
        tot += p[s]
    for s in range(n):
        p[s] = gamma / n + (1.0 - gamma) * p[s] / tot
    tot = 0.0
    for s in range(n):
        if p[s] < floor:
            p[s] = floor
        tot += p[s]
    for s in range(n):
        p[s] /= tot
    return wsum


cdef Py_ssize_t _sample(double[::1] p, double u) noexcept nogil:
    cdef Py_ssize_t s, n = p.shape[0]
    cdef double acc = 0.0
    for s in range(n):
        acc += p[s]
        if u < acc:
            return s
    return n - 1


def player_update(p, g, num, double wsum, Py_ssize_t played, double payoff,
                  double gamma, double eta, double beta, double floor):
    cdef double[::1] pv = p, gv = g, nv = num
    return _update(pv, gv, nv, wsum, played, payoff, gamma, eta, beta, floor)


def selfplay(u, sched_d, sched_a, draws, noise, double floor, Py_ssize_t record_every):
    cdef double[:, ::1] um = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:, ::1] sd = np.ascontiguousarray(sched_d, dtype=np.float64)
    cdef double[:, ::1] sa = np.ascontiguousarray(sched_a, dtype=np.float64)
    cdef double[:, ::1] dr = np.ascontiguousarray(draws, dtype=np.float64)
    cdef double[:, ::1] nz = np.ascontiguousarray(noise, dtype=np.float64)
    cdef Py_ssize_t nd = um.shape[0], na = um.shape[1], horizon = sd.shape[0]
    cdef Py_ssize_t t, i, j, s, r = 0
    cdef Py_ssize_t n_rec = horizon // record_every if record_every > 0 else 0
    p_d_arr = np.full(nd, 1.0 / nd)
    p_a_arr = np.full(na, 1.0 / na)
    num_d_arr = np.zeros(nd)
    num_a_arr = np.zeros(na)
    snaps_arr = np.zeros((n_rec, nd + na))
    cdef double[::1] p_d = p_d_arr, p_a = p_a_arr, num_d = num_d_arr, num_a = num_a_arr
    cdef double[::1] g_d = np.zeros(nd), g_a = np.zeros(na)
    cdef double[:, ::1] snaps = snaps_arr
    cdef double w_d = 0.0, w_a = 0.0, val
    with nogil:
        for t in range(horizon):
            i = _sample(p_d, dr[t, 0])
            j = _sample(p_a, dr[t, 1])
            val = um[i, j]
            w_d = _update(p_d, g_d, num_d, w_d, i, val + nz[t, 0], sd[t, 0], sd[t, 1], sd[t, 2], floor)
            w_a = _update(p_a, g_a, num_a, w_a, j, 1.0 - val + nz[t, 1], sa[t, 0], sa[t, 1], sa[t, 2], floor)
            if record_every > 0 and (t + 1) % record_every == 0:
                for s in range(nd):
                    snaps[r, s] = num_d[s] / w_d if w_d > 0 else p_d[s]
                for s in range(na):
                    snaps[r, nd + s] = num_a[s] / w_a if w_a > 0 else p_a[s]
                r += 1
    return num_d_arr, w_d, num_a_arr, w_a, p_d_arr, p_a_arr, snaps_arr
