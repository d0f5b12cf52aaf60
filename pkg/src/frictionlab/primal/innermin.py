"""Inner minimization of the wealth DP: numpy backend.

Each DP step solves, per node and per pre-trade holding gamma_i,

    min over gamma'  cost(gamma' - gamma_i)
                     + max( Cup(gamma') - gamma' * dS_up,
                            Cdn(gamma') - gamma' * dS_dn )

where Cup/Cdn are the child value surfaces interpreted piecewise-linearly on
the uniform holdings grid.  A full grid scan locates the bracketing knots,
then the minimum is refined over the bracket by evaluating the exact
objective at the finitely many points where it can be attained: grid knots,
crossings of the two child lines, cost kinks, and vertices of quadratic
branches.  For closed-form costs and PL surfaces the refined value is exact,
which is what makes the frictionless DP reproduce CRR prices to float
accuracy.

Ties are broken toward the smaller trade |gamma' - gamma_i|.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .costmodel import (
    KIND_GENERIC,
    KIND_LIN,
    KIND_QUAD,
    KIND_TRUNCQUAD,
    KIND_ZERO,
    TradeCost,
)

_TIEBREAK = 1e-12
_ROW_CHUNK = 32


def _childmax_knots(c_up, c_dn, ds_up, ds_dn, gamma):
    return np.maximum(
        c_up - ds_up[:, None] * gamma[None, :],
        c_dn - ds_dn[:, None] * gamma[None, :],
    )


def _interp_rows(c, rows, x, gamma):
    """PL interpolation of surface rows of c at points x (uniform grid)."""
    m = gamma.size
    h = gamma[1] - gamma[0]
    idx = np.clip(((x - gamma[0]) / h).astype(np.int64), 0, m - 2)
    xl = gamma[0] + idx * h
    w = (x - xl) / h
    return c[rows, idx] * (1.0 - w) + c[rows, idx + 1] * w


def _h_eval(x, rows, gamma_in, c_up, c_dn, ds_up, ds_dn, gamma, cost):
    """Exact objective at trade targets x; x, rows, gamma_in broadcast."""
    fu = _interp_rows(c_up, rows, x, gamma) - x * ds_up[rows]
    fd = _interp_rows(c_dn, rows, x, gamma) - x * ds_dn[rows]
    return cost.eval(rows, x - gamma_in) + np.maximum(fu, fd)


def _crossing(c_up, c_dn, ds_up, ds_dn, gamma, rows, ja):
    """Crossing of the up/down child lines inside segment [ja, ja+1]."""
    h = gamma[1] - gamma[0]
    ga = gamma[ja]
    su = (c_up[rows, ja + 1] - c_up[rows, ja]) / h - ds_up[rows]
    sd = (c_dn[rows, ja + 1] - c_dn[rows, ja]) / h - ds_dn[rows]
    fu_a = c_up[rows, ja] - ga * ds_up[rows]
    fd_a = c_dn[rows, ja] - ga * ds_dn[rows]
    denom = su - sd
    safe = np.where(denom == 0.0, 1.0, denom)
    x = ga + (fd_a - fu_a) / safe
    return np.where(denom == 0.0, ga, x), su, sd


def _refine(j_star, rows, gamma_in, c_up, c_dn, ds_up, ds_dn, gamma, cost):
    """Exact minimum over the bracket around the grid argmin."""
    m = gamma.size
    jl = np.maximum(j_star - 1, 0)
    jr = np.minimum(j_star + 1, m - 1)
    g_lo, g_hi = gamma[jl], gamma[jr]

    cands = [gamma[j_star], g_lo, g_hi, np.clip(gamma_in, g_lo, g_hi)]
    for ja in (jl, np.minimum(j_star, m - 2)):
        x, su, sd = _crossing(c_up, c_dn, ds_up, ds_dn, gamma, rows, ja)
        cands.append(x)
        if cost.kind in (KIND_QUAD, KIND_TRUNCQUAD):
            lam = cost.lam[rows]
            cands.append(gamma_in - su / (2.0 * lam))
            cands.append(gamma_in - sd / (2.0 * lam))
    if cost.kind == KIND_TRUNCQUAD:
        cands.append(gamma_in - cost.kink[rows])
        cands.append(gamma_in + cost.kink[rows])
    if cost.kind == KIND_GENERIC:
        cands.extend(_golden(g_lo, g_hi, rows, gamma_in,
                             c_up, c_dn, ds_up, ds_dn, gamma, cost))

    x = np.clip(np.stack(cands), g_lo, g_hi)
    hv = _h_eval(x, rows[None, :], gamma_in[None, :],
                 c_up, c_dn, ds_up, ds_dn, gamma, cost)
    pick = np.argmin(hv + _TIEBREAK * np.abs(x - gamma_in[None, :]), axis=0)
    ar = np.arange(rows.size)
    return hv[pick, ar], x[pick, ar]


def _golden(g_lo, g_hi, rows, gamma_in, c_up, c_dn, ds_up, ds_dn, gamma, cost,
            iters=60):
    """Golden-section shrink on the convex objective; generic costs only."""
    phi = 0.5 * (np.sqrt(5.0) - 1.0)
    a, b = g_lo.astype(float).copy(), g_hi.astype(float).copy()
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1 = _h_eval(x1, rows, gamma_in, c_up, c_dn, ds_up, ds_dn, gamma, cost)
    f2 = _h_eval(x2, rows, gamma_in, c_up, c_dn, ds_up, ds_dn, gamma, cost)
    for _ in range(iters):
        take1 = f1 <= f2
        b = np.where(take1, x2, b)
        a = np.where(take1, a, x1)
        x1n = b - phi * (b - a)
        x2n = a + phi * (b - a)
        x1, x2 = np.where(take1, x1n, x2), np.where(take1, x2, x2n)
        fnew = _h_eval(np.where(take1, x1, x2), rows, gamma_in,
                       c_up, c_dn, ds_up, ds_dn, gamma, cost)
        f1, f2 = np.where(take1, fnew, f1), np.where(take1, f2, fnew)
    return [a, 0.5 * (a + b), b]


def _cost_vector(cost: TradeCost, rows, dvals):
    """cost(dnu) for every row in rows at every offset in dvals -> (R, D)."""
    if cost.kind == KIND_GENERIC:
        out = np.empty((rows.size, dvals.size))
        for i, r in enumerate(rows):
            fn = cost.generic[r]
            out[i] = [fn(float(d)) for d in dvals]
        return out
    return cost.eval(rows[:, None], dvals[None, :])


def dp_step(c_up, c_dn, ds_up, ds_dn, gamma, cost: TradeCost):
    """One backward DP step for a batch of nodes.

    c_up, c_dn: (R, m) child surfaces; ds_up, ds_dn: (R,) price increments.
    Returns (c_out (R, m), g_opt (R, m), boundary_hit bool).
    """
    R, m = c_up.shape
    w = _childmax_knots(c_up, c_dn, ds_up, ds_dn, gamma)
    h = gamma[1] - gamma[0]
    dflat = np.arange(-(m - 1), m) * h  # all grid trade offsets gamma_j - gamma_i
    tb = _TIEBREAK * np.abs(dflat)

    c_out = np.empty((R, m))
    g_opt = np.empty((R, m))
    boundary = False
    for r0 in range(0, R, _ROW_CHUNK):
        r1 = min(r0 + _ROW_CHUNK, R)
        rows = np.arange(r0, r1)
        costvec = _cost_vector(cost, rows, dflat) + tb[None, :]
        # view costvec[r, (m-1) - i + j] as a (chunk, m, m) matrix
        s0, s1 = costvec.strides
        costmat = as_strided(
            costvec[:, m - 1:], shape=(r1 - r0, m, m), strides=(s0, -s1, s1)
        )
        total = costmat + w[r0:r1, None, :]
        j_star = np.argmin(total, axis=2)  # (chunk, m)
        if np.any(j_star == 0) or np.any(j_star == m - 1):
            boundary = True
        rows_flat = np.repeat(rows, m)
        gin_flat = np.tile(gamma, r1 - r0)
        val, gopt = _refine(
            j_star.ravel(), rows_flat, gin_flat,
            c_up, c_dn, ds_up, ds_dn, gamma, cost,
        )
        c_out[r0:r1] = val.reshape(r1 - r0, m)
        g_opt[r0:r1] = gopt.reshape(r1 - r0, m)
    return c_out, g_opt, boundary


def best_trade(c_up, c_dn, ds_up, ds_dn, gamma, cost: TradeCost, gamma_in):
    """Optimal single trade per node for given pre-trade holdings.

    Returns (value (R,), g_opt (R,), boundary_hit).
    """
    R, m = c_up.shape
    gamma_in = np.asarray(gamma_in, dtype=float)
    rows = np.arange(R)
    w = _childmax_knots(c_up, c_dn, ds_up, ds_dn, gamma)
    dmat = gamma[None, :] - gamma_in[:, None]
    total = cost.eval(rows[:, None], dmat) + w + _TIEBREAK * np.abs(dmat)
    j_star = np.argmin(total, axis=1)
    boundary = bool(np.any(j_star == 0) or np.any(j_star == m - 1))
    val, gopt = _refine(j_star, rows, gamma_in,
                        c_up, c_dn, ds_up, ds_dn, gamma, cost)
    return val, gopt, boundary
