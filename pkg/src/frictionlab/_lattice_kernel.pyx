# cython: language_level=3
"""Compiled lattice DP step for closed-form trade costs.

Mirrors the numpy backend exactly: grid scan with small-trade tie-break,
then exact refinement over the bracketing knots (crossings of the two child
lines, quadratic vertices, cost kinks).
"""
import numpy as np

cimport cython
from libc.math cimport fabs, INFINITY


cdef inline double _cost(int kind, double lam, double lin, double kink,
                         double off, double d) noexcept nogil:
    cdef double a
    if kind == 0:
        return 0.0
    if kind == 1:
        return lam * d * d
    if kind == 2:
        return lin * fabs(d)
    a = fabs(d)
    if a <= kink:
        return lam * d * d
    return lin * a - off


cdef inline double _interp(const double[:, ::1] c, Py_ssize_t row, double x,
                           double g0, double h, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t idx = <Py_ssize_t>((x - g0) / h)
    if idx < 0:
        idx = 0
    if idx > m - 2:
        idx = m - 2
    cdef double w = (x - (g0 + idx * h)) / h
    return c[row, idx] * (1.0 - w) + c[row, idx + 1] * w


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def lattice_step(const double[:, ::1] c_next,
                 const double[::1] ds_up, const double[::1] ds_dn,
                 const double[::1] gamma,
                 int kind,
                 const double[::1] lam, const double[::1] lin,
                 const double[::1] kink, const double[::1] off):
    cdef Py_ssize_t L = ds_up.shape[0]
    cdef Py_ssize_t m = gamma.shape[0]
    cdef double g0 = gamma[0]
    cdef double h = gamma[1] - gamma[0]
    out = np.empty((L, m))
    cdef double[:, ::1] c_out = out
    cdef double[::1] w = np.empty(m)

    cdef Py_ssize_t l, i, j, js, jl, jr, ja, nc, kc, seg
    cdef double du, dd, la, li, kk, of, gi, d, t, best
    cdef double fu, fd, glo, ghi, su, sd, fu_a, fd_a, denom, x, hv, key
    cdef double best_val, best_key, best_x
    cdef double cand[12]
    cdef int boundary = 0

    with nogil:
        for l in range(L):
            du = ds_up[l]
            dd = ds_dn[l]
            la = lam[l]
            li = lin[l]
            kk = kink[l]
            of = off[l]
            for j in range(m):
                fu = c_next[l + 1, j] - gamma[j] * du
                fd = c_next[l, j] - gamma[j] * dd
                w[j] = fu if fu > fd else fd
            for i in range(m):
                gi = gamma[i]
                best = INFINITY
                js = i
                for j in range(m):
                    d = gamma[j] - gi
                    t = _cost(kind, la, li, kk, of, d) + w[j] + 1e-12 * fabs(d)
                    if t < best:
                        best = t
                        js = j
                jl = js - 1 if js > 0 else 0
                jr = js + 1 if js < m - 1 else m - 1
                glo = gamma[jl]
                ghi = gamma[jr]
                nc = 0
                cand[nc] = gamma[js]; nc += 1
                cand[nc] = glo; nc += 1
                cand[nc] = ghi; nc += 1
                x = gi
                if x < glo:
                    x = glo
                if x > ghi:
                    x = ghi
                cand[nc] = x; nc += 1
                for seg in range(2):
                    ja = jl if seg == 0 else (js if js < m - 1 else m - 2)
                    su = (c_next[l + 1, ja + 1] - c_next[l + 1, ja]) / h - du
                    sd = (c_next[l, ja + 1] - c_next[l, ja]) / h - dd
                    fu_a = c_next[l + 1, ja] - gamma[ja] * du
                    fd_a = c_next[l, ja] - gamma[ja] * dd
                    denom = su - sd
                    if denom != 0.0:
                        cand[nc] = gamma[ja] + (fd_a - fu_a) / denom
                    else:
                        cand[nc] = gamma[ja]
                    nc += 1
                    if (kind == 1 or kind == 3) and la != 0.0:
                        cand[nc] = gi - su / (2.0 * la); nc += 1
                        cand[nc] = gi - sd / (2.0 * la); nc += 1
                if kind == 3:
                    cand[nc] = gi - kk; nc += 1
                    cand[nc] = gi + kk; nc += 1

                best_val = INFINITY
                best_key = INFINITY
                best_x = gamma[js]
                for kc in range(nc):
                    x = cand[kc]
                    if x < glo:
                        x = glo
                    if x > ghi:
                        x = ghi
                    fu = _interp(c_next, l + 1, x, g0, h, m) - x * du
                    fd = _interp(c_next, l, x, g0, h, m) - x * dd
                    hv = _cost(kind, la, li, kk, of, x - gi) + \
                        (fu if fu > fd else fd)
                    key = hv + 1e-12 * fabs(x - gi)
                    if key < best_key:
                        best_key = key
                        best_val = hv
                        best_x = x
                c_out[l, i] = best_val
                if fabs(best_x - gi) > 1e-12 and (
                        best_x <= gamma[0] or best_x >= gamma[m - 1]):
                    boundary = 1
    return out, boundary
