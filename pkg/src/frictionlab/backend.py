"""Backend selection for the lattice DP hot loop.

The compiled extension (Cython) handles the closed-form cost kinds; the numpy
fallback handles everything and is always available.  Selection happens at
import time and can be forced with FRICTIONLAB_BACKEND=compiled|fallback.
"""
from __future__ import annotations

import os

import numpy as np

from .primal.costmodel import KIND_GENERIC, KIND_ZERO, TradeCost
from .primal.innermin import dp_step

try:
    from . import _lattice_kernel as _kernel
except ImportError:  # pragma: no cover - build-environment dependent
    _kernel = None

_choice = os.environ.get("FRICTIONLAB_BACKEND", "auto")
if _choice == "compiled" and _kernel is None:
    raise ImportError("FRICTIONLAB_BACKEND=compiled but the extension is missing")
_use_compiled = _kernel is not None and _choice != "fallback"

__all__ = ["backend_name", "lattice_step"]


def backend_name() -> str:
    return "compiled" if _use_compiled else "fallback"


def _coef(arr, rows):
    if arr is None:
        return np.zeros(rows)
    return np.ascontiguousarray(arr, dtype=np.float64)


def lattice_step(c_next, ds_up, ds_dn, gamma, cost: TradeCost):
    """One backward step on the recombining lattice.

    c_next: (L+1, m) surface at slice k+1; ds_up/ds_dn: (L,) price moves.
    Returns (c_out (L, m), boundary_hit).
    """
    if _use_compiled and cost.kind != KIND_GENERIC:
        c_next = np.ascontiguousarray(c_next, dtype=np.float64)
        rows = ds_up.size
        c_out, hit = _kernel.lattice_step(
            c_next,
            np.ascontiguousarray(ds_up, dtype=np.float64),
            np.ascontiguousarray(ds_dn, dtype=np.float64),
            np.ascontiguousarray(gamma, dtype=np.float64),
            cost.kind,
            _coef(cost.lam, rows),
            _coef(cost.lin, rows),
            _coef(cost.kink, rows),
            _coef(cost.off, rows),
        )
        return c_out, bool(hit)
    c_out, g_opt, _ = dp_step(c_next[1:], c_next[:-1], ds_up, ds_dn, gamma, cost)
    if cost.kind == KIND_ZERO:
        return c_out, False
    traded = np.abs(g_opt - gamma[None, :]) > 1e-12
    at_edge = (g_opt <= gamma[0]) | (g_opt >= gamma[-1])
    return c_out, bool(np.any(traded & at_edge))
