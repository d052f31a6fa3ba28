# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loops for DebtRank propagation and fire-sale cascades.

Mirrors ``_pykernels`` exactly in semantics; see that module for the
reference formulation.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fmin, fmax, NAN

cnp.import_array()

cdef enum:
    UNDISTRESSED = 0
    DISTRESSED = 1
    INACTIVE = 2


cdef double _run(const double[:, ::1] W, const double[::1] v, long[::1] seeds, double psi,
                 double[::1] h, double[::1] h_next, signed char[::1] s,
                 signed char[::1] s_next, long* steps) nogil:
    cdef Py_ssize_t N = W.shape[0]
    cdef Py_ssize_t i, j, m
    cdef long t = 1
    cdef double base = 0.0, final = 0.0, acc
    cdef bint any_d

    for i in range(N):
        h[i] = 0.0
        s[i] = UNDISTRESSED
    for m in range(seeds.shape[0]):
        h[seeds[m]] = psi
        s[seeds[m]] = DISTRESSED
    for i in range(N):
        base += h[i] * v[i]

    while True:
        any_d = False
        for j in range(N):
            if s[j] == DISTRESSED:
                any_d = True
                break
        if not any_d:
            break
        for i in range(N):
            acc = h[i]
            for j in range(N):
                if s[j] == DISTRESSED:
                    acc += h[j] * W[j, i]
            h_next[i] = fmin(1.0, acc)
        for i in range(N):
            if s[i] == DISTRESSED:
                s_next[i] = INACTIVE
            elif s[i] == UNDISTRESSED and h_next[i] > 0:
                s_next[i] = DISTRESSED
            else:
                s_next[i] = s[i]
        for i in range(N):
            h[i] = h_next[i]
            s[i] = s_next[i]
        t += 1

    for i in range(N):
        final += h[i] * v[i]
    steps[0] = t
    return final - base


def debtrank_run(W, v, seeds, double psi, record=False):
    if record:
        from . import _pykernels
        return _pykernels.debtrank_run(W, v, seeds, psi, record=True)
    cdef const double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef long[::1] sv = np.ascontiguousarray(np.atleast_1d(seeds), dtype=np.int_)
    cdef Py_ssize_t N = Wv.shape[0]
    cdef double[::1] h = np.empty(N)
    cdef double[::1] h2 = np.empty(N)
    cdef signed char[::1] s = np.empty(N, dtype=np.int8)
    cdef signed char[::1] s2 = np.empty(N, dtype=np.int8)
    cdef long steps = 0
    cdef double R
    with nogil:
        R = _run(Wv, vv, sv, psi, h, h2, s, s2, &steps)
    return R, steps, None, None


def debtrank_all(W, v, double psi):
    cdef const double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t N = Wv.shape[0]
    cdef Py_ssize_t i
    cdef double[::1] h = np.empty(N)
    cdef double[::1] h2 = np.empty(N)
    cdef signed char[::1] s = np.empty(N, dtype=np.int8)
    cdef signed char[::1] s2 = np.empty(N, dtype=np.int8)
    cdef long[::1] seed = np.zeros(1, dtype=np.int_)
    R = np.empty(N)
    steps = np.empty(N, dtype=np.int64)
    cdef double[::1] Rv = R
    cdef cnp.int64_t[::1] stv = steps
    cdef long st = 0
    with nogil:
        for i in range(N):
            seed[0] = i
            Rv[i] = _run(Wv, vv, seed, psi, h, h2, s, s2, &st)
            stv[i] = st
    return R, steps


cdef double _step(double[:, ::1] H, double[::1] E, const double[::1] O,
                  const double[::1] cap, double eps, const double[::1] D,
                  double[::1] pf, unsigned char[::1] alive, unsigned char[::1] pending,
                  unsigned char[::1] exhausted, unsigned char[::1] defaulted,
                  unsigned char[::1] stuck, double[::1] V, double[::1] gamma,
                  double[::1] impact, bint liquidate_only) nogil:
    cdef Py_ssize_t K = H.shape[0]
    cdef Py_ssize_t N = H.shape[1]
    cdef Py_ssize_t k, i
    cdef double L, g, sold, total = 0.0, loss

    for i in range(N):
        V[i] = 0.0
        for k in range(K):
            V[i] += H[k, i]
        gamma[i] = 0.0
        stuck[i] = 0
        if not liquidate_only and alive[i] and not exhausted[i]:
            L = (V[i] + O[i]) / E[i]
            if L > cap[i]:
                if V[i] > 0:
                    g = (V[i] + O[i] - (1.0 - eps) * cap[i] * E[i]) / V[i]
                    gamma[i] = fmin(g, 1.0)
                else:
                    stuck[i] = 1
        if pending[i]:
            gamma[i] = 1.0

    for k in range(K):
        sold = 0.0
        for i in range(N):
            sold += H[k, i] * gamma[i]
        total += sold
        impact[k] = fmin(sold / D[k], 1.0)
        pf[k] = fmax(pf[k] * (1.0 - impact[k]), 0.0)

    for i in range(N):
        loss = 0.0
        for k in range(K):
            loss += impact[k] * H[k, i]
            H[k, i] = fmax(H[k, i] * (1.0 - impact[k]) * (1.0 - gamma[i]), 0.0)
        defaulted[i] = 0
        if alive[i]:
            E[i] = fmax(E[i] - loss, 0.0)
            if gamma[i] >= 1.0:
                exhausted[i] = 1
            if not (E[i] > 0):
                defaulted[i] = 1
                alive[i] = 0
    return total


def firesale_cascade(H, E, O, cap, double eps, D, Py_ssize_t initial, long max_steps, double stop_tol):
    Hc = np.array(H, dtype=np.float64, order="C", copy=True)
    Ec = np.array(E, dtype=np.float64, copy=True)
    cdef double[:, ::1] Hv = Hc
    cdef double[::1] Ev = Ec
    cdef const double[::1] Ov = np.ascontiguousarray(O, dtype=np.float64)
    cdef const double[::1] capv = np.ascontiguousarray(cap, dtype=np.float64)
    cdef const double[::1] Dv = np.ascontiguousarray(D, dtype=np.float64)
    cdef Py_ssize_t K = Hv.shape[0]
    cdef Py_ssize_t N = Hv.shape[1]
    cdef Py_ssize_t i, k
    pf = np.ones(K)
    alive = np.ones(N, dtype=np.uint8)
    pending = np.zeros(N, dtype=np.uint8)
    exhausted = np.zeros(N, dtype=np.uint8)
    defaulted = np.zeros(N, dtype=np.uint8)
    stuck = np.zeros(N, dtype=np.uint8)
    stuck_any = np.zeros(N, dtype=np.uint8)
    default_step = np.full(N, -1, dtype=np.int64)
    cdef double[::1] pfv = pf
    cdef unsigned char[::1] av = alive
    cdef unsigned char[::1] pv = pending
    cdef unsigned char[::1] ev = exhausted
    cdef unsigned char[::1] dv = defaulted
    cdef unsigned char[::1] sv = stuck
    cdef unsigned char[::1] sav = stuck_any
    cdef cnp.int64_t[::1] dsv = default_step
    cdef double[::1] V = np.empty(N)
    cdef double[::1] gamma = np.empty(N)
    cdef double[::1] impact = np.empty(K)
    cdef double threshold = 0.0, sold_total, lev, cnt
    cdef long steps = 0
    cdef bint liquidate_only = True, any_pending

    for k in range(K):
        for i in range(N):
            threshold += Hv[k, i]
    threshold *= stop_tol
    av[initial] = 0
    pv[initial] = 1

    sold_path = []
    lev_path = []
    while steps < max_steps:
        with nogil:
            sold_total = _step(Hv, Ev, Ov, capv, eps, Dv, pfv, av, pv, ev, dv, sv,
                               V, gamma, impact, liquidate_only)
            liquidate_only = False
            steps += 1
            any_pending = False
            lev = 0.0
            cnt = 0.0
            for i in range(N):
                if dv[i]:
                    dsv[i] = steps
                    any_pending = True
                if sv[i]:
                    sav[i] = 1
                pv[i] = dv[i]
                if av[i]:
                    V[i] = 0.0
                    for k in range(K):
                        V[i] += Hv[k, i]
                    lev += (V[i] + Ov[i]) / Ev[i]
                    cnt += 1.0
        sold_path.append(sold_total)
        lev_path.append(lev / cnt if cnt > 0 else NAN)
        if sold_total < threshold and not any_pending:
            break
    return {
        "holdings": Hc,
        "equity": Ec,
        "price_factor": pf,
        "alive": alive.astype(bool),
        "default_step": default_step,
        "steps": steps,
        "sold_path": np.array(sold_path),
        "leverage_path": np.array(lev_path),
        "stuck": stuck_any.astype(bool),
    }
