"""Dual representation of the super-replication price.

The dual maximizes, over probability measures on the binomial tree,

    E[ F - sum_k G(k/n, path, E[S_n | F_k] - S_k) ]

where G is the convex conjugate of the trading cost.  Every feasible measure
therefore yields a certified lower bound on the primal price.  The measure is
parametrized by the per-node up-move probabilities q; the equivalent
perspective ("Phi") form over terminal path weights is kept as an independent
evaluator.  Maximizers provided: exhaustive grid search with zoom refinement
(small n), projected gradient ascent with an analytic adjoint gradient, a
Markov-restricted lattice ascent for large n, and the explicit
exponentially-tilted martingale measure driven by a predictable process
kappa, whose constant-kappa version admits a closed-form continuous-time
benchmark.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import friction
from .friction import Penalty
from .market import EXHAUSTIVE_CAP, MarketParams, lattice_levels, slice_prices
from .payoffs import Claim, markov_dimension, payoff_terminal
from .primal.engine import terminal_payoffs, tree_prices

__all__ = [
    "TreeMeasure",
    "PhiWeights",
    "LatticeMeasure",
    "KappaProcess",
    "DualReport",
    "crr_probability",
    "crr_measure",
    "random_measure",
    "conditional_terminal_expectation",
    "dual_objective",
    "dual_brute_force",
    "dual_ascent",
    "dual_ascent_lattice",
    "phi_from_measure",
    "dual_objective_phi",
    "constant_kappa",
    "kappa_bounds_ok",
    "kusuoka_measure",
    "kusuoka_lower_bound",
    "kusuoka_residual",
    "save_measure",
    "load_measure",
    "save_kappa",
    "load_kappa",
]

_Q_EPS = 1e-9  # clamp: the tilt formula and the gradient are singular at 0/1


@dataclass
class TreeMeasure:
    """Up-move probability per non-terminal node; q[k] has shape (2**k,)."""

    n: int
    q: list

    def validate(self):
        if len(self.q) != self.n:
            raise ValueError("measure needs one q array per non-terminal slice")
        for k, arr in enumerate(self.q):
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (2**k,):
                raise ValueError(f"slice {k}: expected shape ({2**k},)")
            if np.any(arr < 0.0) or np.any(arr > 1.0):
                raise ValueError(f"slice {k}: q outside [0, 1]")
        return self

    def copy(self) -> "TreeMeasure":
        return TreeMeasure(self.n, [a.copy() for a in self.q])


@dataclass
class PhiWeights:
    """Node weights satisfying the tree flow constraints.

    phi[k] has shape (2**k,); phi[0] = [1]; each parent's weight equals the
    sum of its children's weights and the root carries total mass one.
    """

    n: int
    phi: list

    def validate(self, tol: float = 1e-9):
        if abs(self.phi[0][0] - 1.0) > tol:
            raise ValueError("root mass must be 1")
        for k in range(self.n):
            parent = self.phi[k]
            child = self.phi[k + 1]
            if np.any(child < -tol):
                raise ValueError(f"slice {k + 1}: negative weight")
            resid = np.abs(parent - (child[0::2] + child[1::2]))
            if np.any(resid > tol * np.maximum(1.0, np.abs(parent))):
                raise ValueError(f"slice {k}: flow constraint violated")
        return self


@dataclass
class LatticeMeasure:
    """Markov-restricted measure: q a function of (slice, level); q[k] is (k+1,)."""

    n: int
    q: list

    def validate(self):
        if len(self.q) != self.n:
            raise ValueError("lattice measure needs one q array per slice")
        for k, arr in enumerate(self.q):
            if np.asarray(arr).shape != (k + 1,):
                raise ValueError(f"slice {k}: expected shape ({k + 1},)")
            if np.any(arr < 0.0) or np.any(arr > 1.0):
                raise ValueError(f"slice {k}: q outside [0, 1]")
        return self


@dataclass
class DualReport:
    value: float
    measure: object
    iterations: int
    grad_norm: float
    certified: bool = True  # any feasible measure's objective is a lower bound


# ---------------------------------------------------------------------------
# measures


def crr_probability(params: MarketParams) -> float:
    """The unique one-step martingale probability of the binomial tree."""
    u = params.up_factor
    return (1.0 - 1.0 / u) / (u - 1.0 / u)


def crr_measure(params: MarketParams) -> TreeMeasure:
    q = crr_probability(params)
    return TreeMeasure(params.n, [np.full(2**k, q) for k in range(params.n)])


def random_measure(params: MarketParams, rng) -> TreeMeasure:
    return TreeMeasure(
        params.n, [rng.uniform(0.0, 1.0, size=2**k) for k in range(params.n)]
    )


def conditional_terminal_expectation(params: MarketParams, measure: TreeMeasure):
    """M(k, u) = E[S_n | node u] for all nodes, by backward recursion."""
    measure.validate()
    prices = tree_prices(params)
    m = [None] * (params.n + 1)
    m[params.n] = prices[params.n].copy()
    for k in range(params.n - 1, -1, -1):
        q = measure.q[k]
        m[k] = q * m[k + 1][1::2] + (1.0 - q) * m[k + 1][0::2]
    return m


# ---------------------------------------------------------------------------
# conjugate evaluation, vectorized over nodes of one slice


def _G_slice(penalty: Penalty, t: float, prices: np.ndarray, y: np.ndarray,
             n: int) -> np.ndarray:
    """G(t, S, y) per node; +inf marks band violations."""
    kind = penalty.kind
    if kind == "quadratic":
        lam = penalty.lam * (prices if penalty.price_scaled else 1.0)
        return y * y / (4.0 * lam)
    if kind in ("proportional", "truncated_zero"):
        half = penalty.c * prices / math.sqrt(n)
        return np.where(np.abs(y) <= half, 0.0, np.inf)
    if kind == "truncated_quadratic":
        half = penalty.c * prices / math.sqrt(n)
        return np.where(np.abs(y) <= half, y * y / (4.0 * penalty.lam), np.inf)
    if kind == "power":
        if penalty.gamma == 1.0:
            half = prices if penalty.price_scaled else np.ones_like(prices)
            return np.where(np.abs(y) <= half, 0.0, np.inf)
        gs = penalty.gamma / (penalty.gamma - 1.0)
        if penalty.price_scaled:
            return prices * np.abs(y / prices) ** gs / gs
        return np.abs(y) ** gs / gs
    # tabulated / truncated_generic: per-node scalar fallback
    from .primal.costmodel import _ConstPath

    out = np.empty(np.broadcast(prices, y).shape)
    pb, yb = np.broadcast_arrays(prices, y)
    flat_p, flat_y, flat_o = pb.ravel(), yb.ravel(), out.ravel()
    for i in range(flat_p.size):
        flat_o[i] = friction.G_eval(penalty, t, _ConstPath(flat_p[i]),
                                    float(flat_y[i]), n)
    return out


def _G_prime_slice(penalty: Penalty, t: float, prices: np.ndarray,
                   y: np.ndarray, n: int) -> np.ndarray:
    """dG/dy per node, defined on the finite band (0 at kinks/edges)."""
    kind = penalty.kind
    if kind == "quadratic":
        lam = penalty.lam * (prices if penalty.price_scaled else 1.0)
        return y / (2.0 * lam)
    if kind in ("proportional", "truncated_zero"):
        return np.zeros_like(y)
    if kind == "truncated_quadratic":
        return y / (2.0 * penalty.lam)
    if kind == "power":
        if penalty.gamma == 1.0:
            return np.zeros_like(y)
        gs = penalty.gamma / (penalty.gamma - 1.0)
        base = np.abs(y / prices) if penalty.price_scaled else np.abs(y)
        return np.sign(y) * base ** (gs - 1.0)
    # numeric derivative for tabulated / generic kinds
    h = 1e-6 * np.maximum(1.0, np.abs(y))
    gp = _G_slice(penalty, t, prices, y + h, n)
    gm = _G_slice(penalty, t, prices, y - h, n)
    out = (gp - gm) / (2.0 * h)
    return np.where(np.isfinite(out), out, 0.0)


def _band_slice(penalty: Penalty, t: float, prices: np.ndarray, n: int):
    """Per-node half-width of the finite band of G; inf when unbounded."""
    kind = penalty.kind
    if kind in ("proportional", "truncated_zero", "truncated_quadratic"):
        return penalty.c * prices / math.sqrt(n)
    if kind == "power" and penalty.gamma == 1.0:
        return prices if penalty.price_scaled else np.ones_like(prices)
    if kind in ("tabulated", "truncated_generic"):
        from .primal.costmodel import _ConstPath

        out = np.empty(prices.shape)
        for i, s in enumerate(prices.ravel()):
            lo, hi = friction.finite_band(penalty, t, _ConstPath(s), n)
            out.ravel()[i] = min(-lo, hi)
        return out
    return np.full_like(prices, np.inf)


# ---------------------------------------------------------------------------
# objective


def dual_objective(
    params: MarketParams,
    measure: TreeMeasure,
    penalty: Penalty,
    claim: Claim,
    fhat: np.ndarray | None = None,
) -> float:
    """Exact dual objective; returns -inf when the measure leaves the band.

    Infeasibility is a value, not an error: G = +inf at any reachable node
    makes the whole expectation -inf.
    """
    n = params.n
    prices = tree_prices(params)
    m = conditional_terminal_expectation(params, measure)
    if fhat is None:
        fhat = terminal_payoffs(params, claim, prices)

    phi = np.ones(1)
    total = 0.0
    for k in range(n):
        y = m[k] - prices[k]
        g = _G_slice(penalty, k / n, prices[k], y, n)
        mask = phi > 0.0
        if np.any(np.isinf(g[mask])):
            return -math.inf
        total -= float(np.dot(phi[mask], g[mask]))
        q = measure.q[k]
        child = np.empty(2 ** (k + 1))
        child[1::2] = phi * q
        child[0::2] = phi * (1.0 - q)
        phi = child
    total += float(np.dot(phi, fhat))
    return total


def _objective_batch(params, q_slices, penalty, claim, fhat, prices):
    """Objective for a batch of measures; q_slices[k] has shape (B, 2**k)."""
    n = params.n
    B = q_slices[0].shape[0]
    phis = []
    phi = np.ones((B, 1))
    for k in range(n):
        phis.append(phi)
        q = q_slices[k]
        child = np.empty((B, 2 ** (k + 1)))
        child[:, 1::2] = phi * q
        child[:, 0::2] = phi * (1.0 - q)
        phi = child
    total = phi @ fhat

    m = np.broadcast_to(prices[n], (B, 2**n)).copy()
    gsum = np.zeros(B)
    bad = np.zeros(B, dtype=bool)
    for k in range(n - 1, -1, -1):
        q = q_slices[k]
        m = q * m[:, 1::2] + (1.0 - q) * m[:, 0::2]
        y = m - prices[k][None, :]
        g = _G_slice(penalty, k / n, prices[k][None, :], y, n)
        w = phis[k]
        bad |= (np.isinf(g) & (w > 0.0)).any(axis=1)
        gsum += np.einsum("bj,bj->b", w, np.where(np.isfinite(g), g, 0.0))
    out = total - gsum
    out[bad] = -np.inf
    return out


def dual_brute_force(
    params: MarketParams,
    penalty: Penalty,
    claim: Claim,
    q_resolution: float = 1e-3,
    cap: int = 3,
) -> DualReport:
    """Grid maximization of the dual objective over all node probabilities.

    The q-grid is refined by zooming: each round lays a uniform grid per
    dimension inside the current box, keeps the best point, and shrinks the
    box around it until the per-dimension spacing drops below q_resolution.
    Every evaluated point is feasible-or-rejected exactly, so the returned
    value is always a certified lower bound; by smoothness of the objective
    the final point is within O(q_resolution) of the box optimum.
    """
    n = params.n
    if n > cap:
        raise ValueError(f"brute force capped at n <= {cap} (got n={n})")
    d = 2**n - 1
    prices = tree_prices(params)
    fhat = terminal_payoffs(params, claim, prices)
    q_crr = crr_probability(params)

    # points per dimension chosen so a full product grid stays ~<= 1e6 points
    if d == 1:
        pts = max(3, int(round(1.0 / q_resolution)) + 1)
    else:
        pts = max(5, int(round(1e6 ** (1.0 / d))))
        if pts % 2 == 0:
            pts += 1

    lo = np.full(d, _Q_EPS)
    hi = np.full(d, 1.0 - _Q_EPS)
    best_q = np.full(d, q_crr)
    best_val = -math.inf
    evals = 0

    def unpack(qmat):
        out = []
        i = 0
        for k in range(n):
            out.append(qmat[:, i:i + 2**k])
            i += 2**k
        return out

    while True:
        axes = [np.linspace(lo[i], hi[i], pts) for i in range(d)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        mesh = np.vstack([mesh, best_q[None, :], np.full((1, d), q_crr)])
        vals = _objective_batch(params, unpack(mesh), penalty, claim, fhat, prices)
        vals = np.where(np.isfinite(vals), vals, -np.inf)
        evals += mesh.shape[0]
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val = float(vals[j])
            best_q = mesh[j].copy()
        spacing = (hi - lo) / (pts - 1)
        if np.all(spacing <= q_resolution):
            break
        width = 2.0 * spacing
        lo = np.clip(best_q - width, _Q_EPS, 1.0 - _Q_EPS)
        hi = np.clip(best_q + width, _Q_EPS, 1.0 - _Q_EPS)

    measure = TreeMeasure(n, [a[0] for a in unpack(best_q[None, :])])
    return DualReport(best_val, measure, evals, math.nan)


# ---------------------------------------------------------------------------
# gradient ascent on the tree


def _gradient(params, measure, penalty, claim, fhat, prices):
    """Analytic gradient of the objective in the node probabilities q.

    Adjoint (reverse) accumulation through the two passes that define the
    objective: R propagates expected downstream value backward, D carries
    the accumulated sensitivity of the ancestors' G-terms to the node's
    conditional expectation forward.
    """
    n = params.n
    m = conditional_terminal_expectation(params, measure)

    h = []       # per-slice -G at each internal node
    hp = []      # per-slice -G' at each internal node
    for k in range(n):
        y = m[k] - prices[k]
        h.append(-_G_slice(penalty, k / n, prices[k], y, n))
        hp.append(-_G_prime_slice(penalty, k / n, prices[k], y, n))

    # backward value-to-go
    r = fhat.copy()
    rs = [None] * n
    for k in range(n - 1, -1, -1):
        rs[k] = r
        q = measure.q[k]
        r = h[k] + q * r[1::2] + (1.0 - q) * r[0::2]

    # forward weights and accumulated ancestor sensitivities
    grad = []
    phi = np.ones(1)
    d = hp[0].copy()
    for k in range(n):
        r_next = rs[k]
        grad.append(
            phi * (r_next[1::2] - r_next[0::2])
            + phi * d * (m[k + 1][1::2] - m[k + 1][0::2])
        )
        if k == n - 1:
            break
        q = measure.q[k]
        child_phi = np.empty(2 ** (k + 1))
        child_phi[1::2] = phi * q
        child_phi[0::2] = phi * (1.0 - q)
        child_d = np.repeat(d, 2) + hp[k + 1]
        phi, d = child_phi, child_d
    return grad


def _restore_band(params, measure, penalty, prices, q_crr):
    """Halve the deviation from the martingale measure until G is finite."""
    for _ in range(60):
        m = conditional_terminal_expectation(params, measure)
        ok = True
        for k in range(params.n):
            half = _band_slice(penalty, k / params.n, prices[k], params.n)
            if np.any(np.abs(m[k] - prices[k]) > half * (1.0 - 1e-12)):
                ok = False
                break
        if ok:
            return measure
        measure = TreeMeasure(
            params.n, [q_crr + 0.5 * (q - q_crr) for q in measure.q]
        )
    return crr_measure(params)


def dual_ascent(
    params: MarketParams,
    penalty: Penalty,
    claim: Claim,
    init: TreeMeasure | None = None,
    steps: int = 400,
    step_rule: str = "backtracking",
    starts: int = 5,
    seed: int = 0,
) -> DualReport:
    """Projected gradient ascent on q with multi-start.

    The objective is concave in the terminal weights but not in q, so the
    result is reported as a certified lower bound with the gradient norm as
    the stationarity diagnostic; the primal value is the ground truth the
    caller should compare against.
    """
    n = params.n
    prices = tree_prices(params)
    fhat = terminal_payoffs(params, claim, prices)
    q_crr = crr_probability(params)
    rng = np.random.default_rng(seed)

    inits = []
    if init is not None:
        inits.append(init.copy())
    inits.append(crr_measure(params))
    while len(inits) < max(starts, 1):
        pert = TreeMeasure(n, [
            np.clip(q_crr + rng.normal(0.0, 0.05, size=2**k), _Q_EPS, 1 - _Q_EPS)
            for k in range(n)
        ])
        inits.append(pert)

    best = DualReport(-math.inf, crr_measure(params), 0, math.inf)
    for m0 in inits:
        rep = _ascent_single(params, penalty, claim, m0, steps, step_rule,
                             prices, fhat, q_crr)
        if rep.value > best.value:
            best = rep
    return best


def _ascent_single(params, penalty, claim, measure, steps, step_rule,
                   prices, fhat, q_crr):
    n = params.n
    measure = _restore_band(params, measure, penalty, prices, q_crr)
    val = dual_objective(params, measure, penalty, claim, fhat)
    if math.isnan(val):
        raise FloatingPointError("dual objective is NaN at the initial measure")
    step = 0.5
    gnorm = math.inf
    it = 0
    for it in range(1, steps + 1):
        grad = _gradient(params, measure, penalty, claim, fhat, prices)
        gnorm = math.sqrt(sum(float(np.dot(g, g)) for g in grad))
        if gnorm < 1e-12:
            break
        moved = False
        while step > 1e-14:
            trial = TreeMeasure(n, [
                np.clip(q + step * g, _Q_EPS, 1.0 - _Q_EPS)
                for q, g in zip(measure.q, grad)
            ])
            trial = _restore_band(params, trial, penalty, prices, q_crr)
            tval = dual_objective(params, trial, penalty, claim, fhat)
            if math.isnan(tval):
                raise FloatingPointError("dual objective diverged to NaN")
            if tval > val:
                measure, val = trial, tval
                step *= 1.3
                moved = True
                break
            step *= 0.5
        if not moved:
            break
    return DualReport(val, measure, it, gnorm)


# ---------------------------------------------------------------------------
# perspective (Phi) form: independent evaluator


def phi_from_measure(measure: TreeMeasure) -> PhiWeights:
    measure.validate()
    phi = [np.ones(1)]
    for k in range(measure.n):
        q = measure.q[k]
        child = np.empty(2 ** (k + 1))
        child[1::2] = phi[k] * q
        child[0::2] = phi[k] * (1.0 - q)
        phi.append(child)
    return PhiWeights(measure.n, phi)


def dual_objective_phi(
    params: MarketParams,
    phi: PhiWeights,
    penalty: Penalty,
    claim: Claim,
) -> float:
    """Objective in the perspective form, with the 0/0 = 0 convention.

    The conditional expectation at a node is the Phi-weighted terminal price
    sum divided by the node weight; zero-mass subtrees contribute nothing.
    """
    phi.validate()
    n = params.n
    prices = tree_prices(params)
    fhat = terminal_payoffs(params, claim, prices)

    # weighted terminal sums T(u) = sum_{terminals below u} Phi(w) S(w)
    t = phi.phi[n] * prices[n]
    total = float(np.dot(phi.phi[n], fhat))
    for k in range(n - 1, -1, -1):
        t = t[0::2] + t[1::2]
        w = phi.phi[k]
        pos = w > 0.0
        y = np.zeros_like(w)
        y[pos] = t[pos] / w[pos] - prices[k][pos]
        g = _G_slice(penalty, k / n, prices[k], y, n)
        if np.any(np.isinf(g[pos])):
            return -math.inf
        total -= float(np.dot(w[pos], g[pos]))
    return total


# ---------------------------------------------------------------------------
# Markov-restricted lattice dual (large n)


def crr_lattice_measure(params: MarketParams) -> LatticeMeasure:
    q = crr_probability(params)
    return LatticeMeasure(params.n, [np.full(k + 1, q) for k in range(params.n)])


def _lattice_m(params, measure):
    """Conditional terminal expectation per (slice, level index)."""
    n = params.n
    m = [None] * (n + 1)
    m[n] = slice_prices(params, n)
    for k in range(n - 1, -1, -1):
        q = measure.q[k]
        m[k] = q * m[k + 1][1:] + (1.0 - q) * m[k + 1][:-1]
    return m


def _lattice_phi(params, measure):
    n = params.n
    phi = [np.ones(1)]
    for k in range(n):
        q = measure.q[k]
        nxt = np.zeros(k + 2)
        np.add.at(nxt, np.arange(1, k + 2), phi[k] * q)
        np.add.at(nxt, np.arange(0, k + 1), phi[k] * (1.0 - q))
        phi.append(nxt)
    return phi


def dual_objective_lattice(params, measure: LatticeMeasure, penalty, claim) -> float:
    measure.validate()
    if markov_dimension(claim) != "terminal-price":
        raise ValueError("lattice dual supports terminal-price claims only")
    n = params.n
    m = _lattice_m(params, measure)
    phi = _lattice_phi(params, measure)
    total = float(np.dot(phi[n], payoff_terminal(claim, slice_prices(params, n))))
    for k in range(n):
        s_k = slice_prices(params, k)
        g = _G_slice(penalty, k / n, s_k, m[k] - s_k, n)
        pos = phi[k] > 0.0
        if np.any(np.isinf(g[pos])):
            return -math.inf
        total -= float(np.dot(phi[k][pos], g[pos]))
    return total


def _lattice_gradient(params, measure, penalty, fhat):
    n = params.n
    m = _lattice_m(params, measure)
    phi = _lattice_phi(params, measure)

    h, hp = [], []
    for k in range(n):
        s_k = slice_prices(params, k)
        y = m[k] - s_k
        h.append(-_G_slice(penalty, k / n, s_k, y, n))
        hp.append(-_G_prime_slice(penalty, k / n, s_k, y, n))

    r = fhat.copy()
    rs = [None] * n
    for k in range(n - 1, -1, -1):
        rs[k] = r
        q = measure.q[k]
        r = h[k] + q * r[1:] + (1.0 - q) * r[:-1]

    grad = []
    t = hp[0] * phi[0]
    for k in range(n):
        r_next = rs[k]
        grad.append(
            phi[k] * (r_next[1:] - r_next[:-1])
            + t * (m[k + 1][1:] - m[k + 1][:-1])
        )
        if k == n - 1:
            break
        q = measure.q[k]
        nxt = np.zeros(k + 2)
        np.add.at(nxt, np.arange(1, k + 2), t * q)
        np.add.at(nxt, np.arange(0, k + 1), t * (1.0 - q))
        grad_phi = phi[k + 1]
        t = nxt + grad_phi * hp[k + 1]
    return grad


def _restore_band_lattice(params, measure, penalty, q_crr):
    for _ in range(60):
        m = _lattice_m(params, measure)
        ok = True
        for k in range(params.n):
            s_k = slice_prices(params, k)
            half = _band_slice(penalty, k / params.n, s_k, params.n)
            if np.any(np.abs(m[k] - s_k) > half * (1.0 - 1e-12)):
                ok = False
                break
        if ok:
            return measure
        measure = LatticeMeasure(
            params.n, [q_crr + 0.5 * (q - q_crr) for q in measure.q]
        )
    return crr_lattice_measure(params)


def dual_ascent_lattice(
    params: MarketParams,
    penalty: Penalty,
    claim: Claim,
    steps: int = 200,
    starts: int = 3,
    seed: int = 0,
) -> DualReport:
    """Ascent over Markov measures q(slice, level): a restricted, hence still
    certified, lower bound suitable for convergence-study n."""
    if markov_dimension(claim) != "terminal-price":
        raise ValueError("lattice dual supports terminal-price claims only")
    n = params.n
    fhat = payoff_terminal(claim, slice_prices(params, n))
    q_crr = crr_probability(params)
    rng = np.random.default_rng(seed)

    inits = [crr_lattice_measure(params)]
    while len(inits) < max(starts, 1):
        inits.append(LatticeMeasure(n, [
            np.clip(q_crr + rng.normal(0.0, 0.02, size=k + 1), _Q_EPS, 1 - _Q_EPS)
            for k in range(n)
        ]))

    best = DualReport(-math.inf, inits[0], 0, math.inf)
    for m0 in inits:
        rep = _lattice_ascent_single(params, penalty, claim, m0, steps,
                                     fhat, q_crr)
        if rep.value > best.value:
            best = rep
    return best


def _lattice_ascent_single(params, penalty, claim, measure, steps, fhat, q_crr):
    n = params.n
    measure = _restore_band_lattice(params, measure, penalty, q_crr)
    val = dual_objective_lattice(params, measure, penalty, claim)
    step = 0.5
    gnorm = math.inf
    it = 0
    for it in range(1, steps + 1):
        grad = _lattice_gradient(params, measure, penalty, fhat)
        gnorm = math.sqrt(sum(float(np.dot(g, g)) for g in grad))
        if gnorm < 1e-12:
            break
        moved = False
        while step > 1e-14:
            trial = LatticeMeasure(n, [
                np.clip(q + step * g, _Q_EPS, 1.0 - _Q_EPS)
                for q, g in zip(measure.q, grad)
            ])
            trial = _restore_band_lattice(params, trial, penalty, q_crr)
            tval = dual_objective_lattice(params, trial, penalty, claim)
            if math.isnan(tval):
                raise FloatingPointError("dual objective diverged to NaN")
            if tval > val:
                measure, val = trial, tval
                step *= 1.3
                moved = True
                break
            step *= 0.5
        if not moved:
            break
    return DualReport(val, measure, it, gnorm)


# ---------------------------------------------------------------------------
# explicit exponentially-tilted martingale measure


@dataclass
class KappaProcess:
    """Predictable tilt: values[k] depends only on the first k-1 moves.

    values[k] has shape (2**max(k-1, 0),) for k = 0..n; values[n] must be 0
    so the tilted martingale terminates at the stock price itself.
    """

    n: int
    values: list

    def validate(self):
        if len(self.values) != self.n + 1:
            raise ValueError("kappa needs n+1 slices")
        for k, arr in enumerate(self.values):
            want = 2 ** max(k - 1, 0)
            if np.asarray(arr).shape != (want,):
                raise ValueError(f"kappa slice {k}: expected shape ({want},)")
        if np.any(np.asarray(self.values[self.n]) != 0.0):
            raise ValueError("kappa must vanish at the final step")
        return self


def constant_kappa(params: MarketParams, a: float) -> KappaProcess:
    """Tilt a at every intermediate step, 0 before the first and after the
    last move (so the tilted martingale starts and ends on the stock)."""
    n = params.n
    vals = [np.zeros(1)]
    vals += [np.full(2 ** max(k - 1, 0), a) for k in range(1, n)]
    vals += [np.zeros(2 ** max(n - 1, 0))]
    return KappaProcess(n, vals)


def kappa_bounds_ok(kappa: KappaProcess, c: float, delta: float, L: float,
                    n: int) -> bool:
    """Regularity bounds: |k| < c - delta, k > delta - 1/2, steps <= L/sqrt(n)."""
    kappa.validate()
    sq = math.sqrt(n)
    for k in range(1, n):
        v = np.asarray(kappa.values[k], dtype=float)
        if np.any(np.abs(v) >= c - delta) or np.any(v <= delta - 0.5):
            return False
        prev = np.asarray(kappa.values[k - 1], dtype=float)
        prev = np.repeat(prev, v.size // prev.size)
        if np.any(np.abs(v - prev) > L / sq + 1e-15):
            return False
    return True


def kusuoka_measure(params: MarketParams, kappa: KappaProcess):
    """Measure under which S(k) e^{xi_k kappa(k)/sqrt(n)} is a martingale.

    Returns the tree measure and the tilted martingale per node; raises when
    any branch probability leaves (0, 1), which signals that n is too small
    for the requested tilt.  The one-step martingale identity is asserted to
    1e-12 relative at every node.
    """
    kappa.validate()
    n = params.n
    sq = math.sqrt(n)
    prices = tree_prices(params)

    # tilted martingale per node: M(k, u) = S(k, u) * exp(xi_k kappa(k,u)/sq)
    m = [prices[0].copy()]
    for k in range(1, n + 1):
        sign = np.empty(2**k)
        sign[0::2], sign[1::2] = -1.0, 1.0  # last move of the node's prefix
        kap = np.repeat(np.asarray(kappa.values[k], dtype=float),
                        2**k // 2 ** max(k - 1, 0))
        m.append(prices[k] * np.exp(sign * kap / sq))

    q = []
    for k in range(n):
        # kappa.values[k+1] is indexed by prefixes of length k: one per node
        b = np.exp((params.sigma
                    + np.asarray(kappa.values[k + 1], dtype=float)) / sq)
        # current tilt relative to the node price
        target = m[k] / prices[k]
        qk = (target - 1.0 / b) / (b - 1.0 / b)
        if np.any(qk <= 0.0) or np.any(qk >= 1.0):
            raise ValueError(
                "tilted branch probability left (0,1); n too small for kappa"
            )
        resid = np.abs(qk * m[k + 1][1::2] + (1.0 - qk) * m[k + 1][0::2] - m[k])
        if np.any(resid > 1e-12 * prices[k]):
            raise AssertionError("one-step martingale identity violated")
        q.append(qk)
    return TreeMeasure(n, q), m


def kusuoka_lower_bound(
    params: MarketParams,
    penalty: Penalty,
    claim: Claim,
    a: float,
    cap: int = EXHAUSTIVE_CAP,
) -> float:
    """Dual objective under the constant-tilt martingale measure.

    A certified lower bound on the super-replication price; as n grows it
    approaches the constant-control continuous-time value at volatility
    sqrt(sigma^2 + 2 sigma a).  Uses the full tree for small n and an
    equivalent Markov-chain evaluation in (level, last move) for large n.
    """
    n = params.n
    if n <= cap:
        measure, _ = kusuoka_measure(params, constant_kappa(params, a))
        return dual_objective(params, measure, penalty, claim)
    if markov_dimension(claim) != "terminal-price":
        raise ValueError("large-n tilt bound supports terminal-price claims only")
    return _kusuoka_bound_markov(params, penalty, claim, a)


def kusuoka_residual(params: MarketParams, a: float) -> float:
    """Worst one-step martingale residual of the constant tilt, normalized
    by the node price.

    For a constant tilt the branch probability and the tilted martingale are
    functions of (slice, level, last move) only, so the per-node identity can
    be checked on that Markov state space even for n far beyond the
    exhaustive cap.
    """
    n = params.n
    sq = math.sqrt(n)
    sig = params.sigma
    worst = 0.0
    u = params.up_factor
    for k in range(n):
        kap_cur = a if 1 <= k else 0.0
        kap_next = a if k + 1 < n else 0.0
        b = math.exp((sig + kap_next) / sq)
        for xi in ((-1.0, 1.0) if k > 0 else (0.0,)):
            target = math.exp(xi * kap_cur / sq)  # M(k)/S(k)
            q = (target - 1.0 / b) / (b - 1.0 / b)
            if not 0.0 < q < 1.0:
                raise ValueError("tilted branch probability left (0,1)")
            # children: M(k+1)/S(k) = u^{+-1} e^{+-kap_next/sq}
            m_up = u * math.exp(kap_next / sq)
            m_dn = (1.0 / u) * math.exp(-kap_next / sq)
            worst = max(worst, abs(q * m_up + (1.0 - q) * m_dn - target))
    return worst


def _kusuoka_bound_markov(params, penalty, claim, a):
    """Forward Markov chain over (level, last move): the constant tilt makes
    both the branch probabilities and the G-terms functions of this state."""
    n = params.n
    sq = math.sqrt(n)
    sig = params.sigma

    def q_step(k, xi_prev):
        # tilt at step k+1 (kappa = a except the forced 0 at the last step)
        kap_next = a if k + 1 < n else 0.0
        kap_cur = a if 1 <= k else 0.0
        b = math.exp((sig + kap_next) / sq)
        target = math.exp(xi_prev * kap_cur / sq)
        return (target - 1.0 / b) / (b - 1.0 / b)

    # p[l, j]: probability of (level index l, last move j: 0=down, 1=up)
    p = np.zeros((1, 2))
    p[0, 0] = 1.0  # start: no move yet; treat as "down" with kappa term 1
    gsum = 0.0
    for k in range(n):
        s_k = slice_prices(params, k)
        # G-term at time k: y = S * (e^{xi_k * kappa_k / sq} - 1)
        kap_cur = a if 1 <= k else 0.0
        for j, xi in enumerate((-1.0, 1.0)):
            w = p[:, j]
            if not w.any():
                continue
            y = s_k * (math.exp(xi * kap_cur / sq) - 1.0)
            g = _G_slice(penalty, k / n, s_k, y, n)
            mask = w > 0.0
            if np.any(np.isinf(g[mask])):
                return -math.inf
            gsum += float(np.dot(w[mask], g[mask]))
        q_dn = q_step(k, -1.0)
        q_up = q_step(k, 1.0)
        if not (0.0 < q_dn < 1.0 and 0.0 < q_up < 1.0):
            raise ValueError("tilted branch probability left (0,1)")
        nxt = np.zeros((k + 2, 2))
        for j, qj in enumerate((q_dn, q_up)):
            w = p[:, j]
            nxt[1:, 1] += w * qj
            nxt[:-1, 0] += w * (1.0 - qj)
        p = nxt
    fhat = payoff_terminal(claim, slice_prices(params, n))
    return float(np.dot(p.sum(axis=1), fhat)) - gsum


# ---------------------------------------------------------------------------
# structured-text import/export


def save_measure(measure: TreeMeasure, path) -> None:
    """One record per node: slice, prefix index, up-move probability."""
    measure.validate()
    with open(path, "w") as fh:
        fh.write(f"# frictionlab measure n={measure.n}\n")
        for k, arr in enumerate(measure.q):
            for b, qv in enumerate(arr):
                fh.write(f"{k} {b} {float(qv)!r}\n")


def load_measure(path) -> TreeMeasure:
    with open(path) as fh:
        header = fh.readline().split()
        n = int(header[-1].split("=")[1])
        q = [np.zeros(2**k) for k in range(n)]
        for line in fh:
            k_s, b_s, q_s = line.split()
            q[int(k_s)][int(b_s)] = float(q_s)
    return TreeMeasure(n, q).validate()


def save_kappa(kappa: KappaProcess, path) -> None:
    kappa.validate()
    with open(path, "w") as fh:
        fh.write(f"# frictionlab kappa n={kappa.n}\n")
        for k, arr in enumerate(kappa.values):
            for b, v in enumerate(np.asarray(arr, dtype=float)):
                fh.write(f"{k} {b} {float(v)!r}\n")


def load_kappa(path) -> KappaProcess:
    with open(path) as fh:
        header = fh.readline().split()
        n = int(header[-1].split("=")[1])
        values = [np.zeros(2 ** max(k - 1, 0)) for k in range(n + 1)]
        for line in fh:
            k_s, b_s, v_s = line.split()
            values[int(k_s)][int(b_s)] = float(v_s)
    return KappaProcess(n, values).validate()
