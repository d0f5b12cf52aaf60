"""Trading-cost functions, their convex conjugates, truncation and scaled limits.

A penalty g(t, S, nu) is the cost of trading nu shares at time t when the
price path so far is S.  Built-in kinds:

* ``quadratic``            g = lam * nu^2                  (linear price impact)
* ``proportional``         g = (c/sqrt(n)) * S(t) * |nu|   (vanishing transaction costs)
* ``truncated_zero``       same as proportional; the name records that it is
                           the truncation at level c of the hard no-trade penalty
* ``truncated_quadratic``  quadratic truncated at level c (piecewise closed form)
* ``power``                g = |nu|^gamma / gamma, gamma in [1, 2]
* ``tabulated``            convex samples (nu, g) with linear interpolation and
                           boundary-slope extrapolation

The conjugate G(y) = sup_nu (nu*y - g(nu)) is returned as a float with
``math.inf`` marking the infinite region; callers that do arithmetic on G
must consult :func:`finite_band` first so that infinities never enter
arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .market import PLPath

__all__ = [
    "Penalty",
    "ScaledLimit",
    "quadratic",
    "proportional",
    "truncated_zero",
    "truncated_quadratic",
    "power",
    "tabulated",
    "g_eval",
    "G_eval",
    "finite_band",
    "conjugate_numeric",
    "truncate",
    "scaled_limit",
    "G_hat_eval",
    "load_tabulated_penalty",
]

_KINDS = (
    "quadratic",
    "proportional",
    "truncated_zero",
    "truncated_quadratic",
    "power",
    "tabulated",
    "truncated_generic",
)


@dataclass(frozen=True)
class Penalty:
    kind: str
    lam: float = 0.0
    c: float = 0.0
    gamma: float = 0.0
    price_scaled: bool = False
    nu_grid: np.ndarray | None = None
    g_vals: np.ndarray | None = None
    base: "Penalty | None" = None  # only for truncated_generic

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.kind == "quadratic" and not self.lam > 0:
            raise ValueError("quadratic penalty needs lam > 0")
        if self.kind == "truncated_quadratic" and not (self.lam > 0 and self.c > 0):
            raise ValueError("truncated quadratic needs lam > 0 and c > 0")
        if self.kind in ("proportional", "truncated_zero") and self.c < 0:
            raise ValueError("proportional cost needs c >= 0")
        if self.kind == "power" and not 1.0 <= self.gamma <= 2.0:
            raise ValueError(
                f"power penalty supports gamma in [1, 2], got {self.gamma}"
            )
        if self.kind == "tabulated":
            _validate_table(self.nu_grid, self.g_vals)
        if self.kind == "truncated_generic" and (self.base is None or not self.c > 0):
            raise ValueError("truncated_generic needs a base penalty and c > 0")


def _validate_table(nu_grid, g_vals):
    nu = np.asarray(nu_grid, dtype=float)
    g = np.asarray(g_vals, dtype=float)
    if nu.ndim != 1 or nu.shape != g.shape or nu.size < 3:
        raise ValueError("tabulated penalty needs matching 1-d arrays, size >= 3")
    if not np.all(np.diff(nu) > 0):
        raise ValueError("tabulated nu grid must be strictly increasing")
    if np.any(g < -1e-12):
        raise ValueError("tabulated penalty must be non-negative")
    slopes = np.diff(g) / np.diff(nu)
    if np.any(np.diff(slopes) < -1e-9 * max(1.0, np.abs(g).max())):
        raise ValueError("tabulated penalty must be convex")
    if abs(_pl_interp(0.0, nu, g)) > 1e-12 * max(1.0, np.abs(g).max()):
        raise ValueError("tabulated penalty must vanish at nu = 0")


def _pl_interp(x, nu, g):
    """Linear interpolation with boundary-slope extrapolation."""
    x = np.asarray(x, dtype=float)
    out = np.interp(x, nu, g)
    lo_slope = (g[1] - g[0]) / (nu[1] - nu[0])
    hi_slope = (g[-1] - g[-2]) / (nu[-1] - nu[-2])
    out = np.where(x < nu[0], g[0] + lo_slope * (x - nu[0]), out)
    out = np.where(x > nu[-1], g[-1] + hi_slope * (x - nu[-1]), out)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# constructors


def quadratic(lam: float, price_scaled: bool = False) -> Penalty:
    return Penalty("quadratic", lam=lam, price_scaled=price_scaled)


def proportional(c: float) -> Penalty:
    return Penalty("proportional", c=c, price_scaled=True)


def truncated_zero(c: float) -> Penalty:
    return Penalty("truncated_zero", c=c, price_scaled=True)


def truncated_quadratic(lam: float, c: float) -> Penalty:
    return Penalty("truncated_quadratic", lam=lam, c=c)


def power(gamma: float) -> Penalty:
    return Penalty("power", gamma=gamma)


def tabulated(nu_grid, g_vals) -> Penalty:
    return Penalty(
        "tabulated",
        nu_grid=np.asarray(nu_grid, dtype=float),
        g_vals=np.asarray(g_vals, dtype=float),
    )


def load_tabulated_penalty(path) -> Penalty:
    """Load a (nu, g) two-column numeric text file as a tabulated penalty."""
    data = np.loadtxt(path, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError(f"{path}: expected two numeric columns")
    return tabulated(data[:, 0], data[:, 1])


# ---------------------------------------------------------------------------
# evaluation


def _price(t: float, path: PLPath | None) -> float:
    if path is None:
        raise ValueError("price-dependent penalty needs the price path")
    return path.eval(t)


def g_eval(p: Penalty, t: float, path: PLPath | None, nu: float, n: int = 1) -> float:
    """Cost of trading nu shares at time t; zero at nu = 0."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0,1]")
    if p.kind == "quadratic":
        v = p.lam * nu * nu
        return v * _price(t, path) if p.price_scaled else v
    if p.kind in ("proportional", "truncated_zero"):
        return (p.c / math.sqrt(n)) * _price(t, path) * abs(nu)
    if p.kind == "truncated_quadratic":
        s = _price(t, path)
        kink = p.c * s / (2.0 * math.sqrt(n) * p.lam)
        if abs(nu) <= kink:
            return p.lam * nu * nu
        return (p.c / math.sqrt(n)) * s * abs(nu) - p.c**2 * s**2 / (4.0 * n * p.lam)
    if p.kind == "power":
        v = abs(nu) ** p.gamma / p.gamma
        return v * _price(t, path) if p.price_scaled else v
    if p.kind == "tabulated":
        v = _pl_interp(nu, p.nu_grid, p.g_vals)
        v = max(v, 0.0)
        return v * _price(t, path) if p.price_scaled else v
    if p.kind == "truncated_generic":
        # g_n^c(nu) = sup over the band |y| <= c S(t)/sqrt(n) of (nu*y - G(y))
        half = p.c * _price(t, path) / math.sqrt(n)
        ys = np.linspace(-half, half, 2001)
        lo, hi = finite_band(p.base, t, path, n)
        ys = ys[(ys >= lo) & (ys <= hi)]
        if ys.size == 0:
            return 0.0
        Gs = np.array([G_eval(p.base, t, path, float(y), n) for y in ys])
        return float(np.max(nu * ys - Gs))
    raise AssertionError(p.kind)


def G_eval(p: Penalty, t: float, path: PLPath | None, y: float, n: int = 1) -> float:
    """Legendre conjugate sup_nu(nu*y - g); math.inf outside the finite band."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0,1]")
    lo, hi = finite_band(p, t, path, n)
    if y < lo - 0.0 or y > hi + 0.0:
        return math.inf
    if p.kind == "quadratic":
        lam = p.lam * _price(t, path) if p.price_scaled else p.lam
        return y * y / (4.0 * lam)
    if p.kind in ("proportional", "truncated_zero"):
        return 0.0
    if p.kind == "truncated_quadratic":
        return y * y / (4.0 * p.lam)
    if p.kind == "power":
        if p.gamma == 1.0:
            return 0.0
        gs = p.gamma / (p.gamma - 1.0)
        if p.price_scaled:
            s = _price(t, path)
            return s * abs(y / s) ** gs / gs
        return abs(y) ** gs / gs
    if p.kind == "tabulated":
        s = _price(t, path) if p.price_scaled else 1.0
        vals = p.nu_grid * (y / s) - p.g_vals
        return s * float(np.max(vals))
    if p.kind == "truncated_generic":
        return G_eval(p.base, t, path, y, n)
    raise AssertionError(p.kind)


def finite_band(
    p: Penalty, t: float, path: PLPath | None, n: int = 1
) -> tuple[float, float]:
    """Interval of y on which G is finite; (-inf, inf) when unbounded.

    This is the explicit domain descriptor used by the dual solvers as a
    projection set, so it is computed from the penalty structure, never
    discovered numerically.
    """
    if p.kind in ("proportional", "truncated_zero"):
        half = p.c * _price(t, path) / math.sqrt(n)
        return (-half, half)
    if p.kind == "truncated_quadratic":
        half = p.c * _price(t, path) / math.sqrt(n)
        return (-half, half)
    if p.kind == "power" and p.gamma == 1.0:
        half = _price(t, path) if p.price_scaled else 1.0
        return (-half, half)
    if p.kind == "tabulated":
        nu, g = p.nu_grid, p.g_vals
        s = _price(t, path) if p.price_scaled else 1.0
        lo = s * (g[1] - g[0]) / (nu[1] - nu[0])
        hi = s * (g[-1] - g[-2]) / (nu[-1] - nu[-2])
        return (float(lo), float(hi))
    if p.kind == "truncated_generic":
        half = p.c * _price(t, path) / math.sqrt(n)
        blo, bhi = finite_band(p.base, t, path, n)
        return (max(-half, blo), min(half, bhi))
    return (-math.inf, math.inf)


def conjugate_numeric(
    p: Penalty, t: float, path: PLPath | None, y: float, nu_grid, n: int = 1
) -> float:
    """Brute-force conjugate over a nu grid; oracle for :func:`G_eval`."""
    nu_grid = np.asarray(nu_grid, dtype=float)
    if nu_grid.size == 0:
        raise ValueError("empty nu grid")
    vals = [nu * y - g_eval(p, t, path, float(nu), n) for nu in nu_grid]
    return float(np.max(vals))


def truncate(p: Penalty, c: float, n: int) -> Penalty:
    """Penalty whose conjugate is G restricted to |y| <= c S(t)/sqrt(n)."""
    if not c > 0:
        raise ValueError("truncation level must be positive")
    if p.kind == "quadratic" and not p.price_scaled:
        return truncated_quadratic(p.lam, c)
    if p.kind in ("proportional", "truncated_zero"):
        return truncated_zero(min(p.c, c))
    if p.kind == "truncated_quadratic":
        return truncated_quadratic(p.lam, min(p.c, c))
    if p.kind == "truncated_generic":
        return Penalty("truncated_generic", c=min(p.c, c), base=p.base)
    return Penalty("truncated_generic", c=c, base=p)


# ---------------------------------------------------------------------------
# scaled limit G_hat = lim n G(t, S, y/sqrt(n))


@dataclass(frozen=True)
class ScaledLimit:
    """Limit of the rescaled conjugates; quadratic in y for built-in kinds.

    ``quad_coef`` is q2 in G_hat(y) = q2 * y^2 (possibly divided by S(t) when
    the underlying cost is price-scaled); zero kind means G_hat == 0.
    """

    kind: str  # "quadratic" | "zero"
    quad_coef: float = 0.0
    price_scaled: bool = False

    def __post_init__(self):
        if self.kind not in ("quadratic", "zero"):
            raise ValueError(f"unknown scaled-limit kind {self.kind!r}")


def scaled_limit(p: Penalty) -> ScaledLimit:
    """Scaled limit of a built-in penalty kind."""
    if p.kind == "quadratic":
        return ScaledLimit("quadratic", 1.0 / (4.0 * p.lam), p.price_scaled)
    if p.kind == "truncated_quadratic":
        return ScaledLimit("quadratic", 1.0 / (4.0 * p.lam))
    if p.kind in ("proportional", "truncated_zero"):
        return ScaledLimit("zero")
    if p.kind == "power":
        if p.gamma == 2.0:
            return ScaledLimit("quadratic", 0.5, p.price_scaled)
        return ScaledLimit("zero")  # gamma in [1, 2)
    if p.kind == "truncated_generic":
        return scaled_limit(p.base)
    raise ValueError(f"no closed-form scaled limit for {p.kind!r} penalties")


def G_hat_eval(
    limit: ScaledLimit, t: float, path: PLPath | None, y: float
) -> float:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0,1]")
    if limit.kind == "zero":
        return 0.0
    v = limit.quad_coef * y * y
    return v / _price(t, path) if limit.price_scaled else v
