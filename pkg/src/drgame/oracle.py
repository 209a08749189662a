"""Brute-force verifiers for the dual reduction, triality inequalities and equilibria.

Nothing here imports the dual solver: the primal worst case is found either
by a generic SQP solve on the reweighting simplex or by exhaustive search
over ray directions, and nested sup/inf values come from plain enumeration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import softmax

from .divergence import FDivergence
from .errors import DomainError, StructuralError


class PrimalSolution(NamedTuple):
    value: float
    weights: np.ndarray


def _divergence(fam, q, w):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sum(w * fam.f(q / w), axis=-1) - fam.f_at_one


def _point_mass_on_max(losses, w):
    top = losses >= losses.max()
    q = np.where(top, w, 0.0)
    return q / q.sum()


def primal_inner_sup(losses, base_weights, fam: FDivergence, rho: float, method: str = "auto") -> PrimalSolution:
    """``max sum_k q_k l_k`` over distributions ``q`` with ``D_f(q || w) <= rho``.

    ``method`` is ``"sqp"`` (constrained SLSQP from the base weights, pulled
    back onto the ball by bisection if it overshoots), ``"grid"`` (exhaustive
    ray search, at most 4 atoms) or ``"auto"`` (grid for <= 4 atoms).
    Returns the value and the maximizing reweighted distribution.
    """
    if not rho > 0:
        raise DomainError(f"rho must be positive, got {rho}")
    losses = np.asarray(losses, dtype=float)
    w_full = np.asarray(base_weights, dtype=float)
    support = w_full > 0
    if support.sum() > 12:
        raise DomainError("the primal oracle is limited to 12 atoms")
    l, w = losses[support], w_full[support]

    def embed(q):
        out = np.zeros_like(w_full)
        out[support] = q
        return out

    mass = _point_mass_on_max(l, w)
    if _divergence(fam, mass, w) <= rho:
        return PrimalSolution(float(mass @ l), embed(mass))
    if method == "auto":
        method = "grid" if l.size <= 4 else "sqp"
    if method == "grid":
        if l.size > 4:
            raise DomainError("grid search is limited to 4 atoms")
        q = _ray_grid_search(l, w, fam, rho)
    elif method == "sqp":
        q = _sqp_search(l, w, fam, rho)
    else:
        raise ValueError(f"unknown method {method!r}")
    return PrimalSolution(float(q @ l), embed(q))


def _pull_back(q, w, fam, rho):
    """Largest step from ``w`` toward ``q`` staying inside the ball."""
    if _divergence(fam, q, w) <= rho:
        return q
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _divergence(fam, w + mid * (q - w), w) <= rho:
            lo = mid
        else:
            hi = mid
    return w + lo * (q - w)


def _sqp_search(l, w, fam, rho):
    """Best of SLSQP runs in two parametrizations of the reweighting.

    Directly in ``q`` the solver handles optima on a face of the simplex but
    stalls near faces where ``f'`` is singular; through ``q = softmax(theta +
    log w)`` it is the other way round.  Every candidate is pulled back onto
    the ball, so the larger value is always the better certified bound.
    """
    n = l.size
    scale = max(np.abs(l).max(), 1e-300)

    def div_jac(q):
        r = np.maximum(q, 1e-300) / w
        return fam.f_prime(r)

    cons = [
        {"type": "eq", "fun": lambda q: np.sum(q) - 1.0, "jac": lambda q: np.ones(n)},
        {"type": "ineq", "fun": lambda q: rho - _divergence(fam, np.maximum(q, 0.0), w),
         "jac": lambda q: -div_jac(q)},
    ]
    candidates = []
    for q0 in (w.copy(), 0.5 * w + 0.5 * _point_mass_on_max(l, w)):
        res = minimize(lambda q: -(q @ l) / scale, q0, jac=lambda q: -l / scale, method="SLSQP",
                       bounds=[(0.0, 1.0)] * n, constraints=cons,
                       options={"ftol": 1e-15, "maxiter": 2000})
        q = np.clip(res.x, 0.0, None)
        candidates.append(q / q.sum())

    log_w = np.log(w)

    def tilt(theta):
        return softmax(theta + log_w)

    def tilt_div_jac(theta):
        q = tilt(theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = div_jac(q)
        return -(q * (g - q @ g))

    soft_cons = [{"type": "ineq", "fun": lambda th: rho - _divergence(fam, tilt(th), w), "jac": tilt_div_jac}]
    spread = max(float(np.ptp(l)), 1e-12)
    for gain in (0.0, 0.5, 2.0):
        res = minimize(lambda th: -(tilt(th) @ l) / scale, gain * (l - l.mean()) / spread,
                       jac=lambda th: -(tilt(th) * (l - tilt(th) @ l)) / scale, method="SLSQP",
                       constraints=soft_cons, options={"ftol": 1e-15, "maxiter": 2000})
        if np.all(np.isfinite(res.x)):
            candidates.append(tilt(res.x))

    best = None
    for q in candidates:
        q = _pull_back(q, w, fam, rho)
        if best is None or q @ l > best @ l:
            best = q
    return best


def _lattice(n, k):
    pts = [c + (k - sum(c),) for c in itertools.product(range(k + 1), repeat=n - 1) if sum(c) <= k]
    return np.array(pts, dtype=float) / k


def _ray_values(d, l, w, fam, rho, iters=60):
    """Value at the ball boundary along each ray ``w + t d`` (rows of ``d`` sum to 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        caps = np.where(d < 0, w / -d, np.inf)
    tmax = np.min(caps, axis=1)
    lo = np.zeros(len(d))
    hi = tmax.copy()
    inside = _divergence(fam, w + hi[:, None] * d, w) <= rho
    lo[inside] = hi[inside]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ok = _divergence(fam, w + mid[:, None] * d, w) <= rho
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    q = np.clip(w + lo[:, None] * d, 0.0, None)
    return q @ l, q


def _ray_grid_search(l, w, fam, rho, subdivisions=50, max_steps=300):
    """Exhaustive scan of ray directions, then pattern search on the unit sphere.

    Directions first come from ``w`` through every point of the simplex
    lattice with ``subdivisions`` steps per edge.  The best direction is
    refined with a shrinking stencil in the sum-zero plane.
    """
    n = l.size
    if n == 1:
        return np.ones(1)
    dirs = _lattice(n, subdivisions) - w
    dirs -= dirs.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(dirs, axis=1)
    dirs = dirs[norms > 1e-15] / norms[norms > 1e-15, None]
    # coarse boundary location is enough to rank the lattice directions
    vals, _ = _ray_values(dirs, l, w, fam, rho, iters=30)
    center = dirs[int(np.argmax(vals))]
    best_val, best_q = (v[0] for v in _ray_values(center[None, :], l, w, fam, rho))

    basis = np.linalg.svd(np.eye(n) - 1.0 / n)[0][:, : n - 1].T
    offsets = np.array(list(itertools.product(range(-3, 4), repeat=n - 1)), dtype=float) @ basis
    h = 2.0 / subdivisions
    for _ in range(max_steps):
        if h <= 1e-10:
            break
        cand = center + h * offsets
        cand -= cand.mean(axis=1, keepdims=True)
        cand /= np.linalg.norm(cand, axis=1)[:, None]
        vals, qs = _ray_values(cand, l, w, fam, rho)
        k = int(np.argmax(vals))
        if vals[k] > best_val + 1e-14 * max(1.0, abs(best_val)):
            center, best_val, best_q = cand[k], vals[k], qs[k]
        else:
            h /= 3.0
    return best_q


# ---------------------------------------------------------------------------
# triality
# ---------------------------------------------------------------------------


@dataclass
class TrialityReport:
    """The six nested values, axes ordered (a1, a2, a3)."""

    sup2_inf13: float
    inf3_sup2_inf1: float
    inf13_sup2: float
    sup13_inf2: float
    sup3_inf2_sup1: float
    inf2_sup13: float
    tol: float = 0.0

    @property
    def chain_one(self):
        return (self.sup2_inf13, self.inf3_sup2_inf1, self.inf13_sup2)

    @property
    def chain_two(self):
        return (self.sup13_inf2, self.sup3_inf2_sup1, self.inf2_sup13)

    @property
    def margins(self):
        a, b, c = self.chain_one
        d, e, f = self.chain_two
        return (b - a, c - b, e - d, f - e)

    @property
    def passed(self):
        return all(m >= -self.tol for m in self.margins)


def triality_check(tensor, tol=0.0) -> TrialityReport:
    """Evaluate both triality chains for ``l3[a1, a2, a3]`` by enumeration."""
    t = np.asarray(tensor, dtype=float)
    if t.ndim != 3:
        raise StructuralError(f"expected a 3-axis tensor, got shape {t.shape}")
    if 0 in t.shape:
        raise StructuralError("every action grid needs at least one point")
    return TrialityReport(
        sup2_inf13=float(t.min(axis=(0, 2)).max()),
        inf3_sup2_inf1=float(t.min(axis=0).max(axis=0).min()),
        inf13_sup2=float(t.max(axis=1).min()),
        sup13_inf2=float(t.min(axis=1).max()),
        sup3_inf2_sup1=float(t.max(axis=0).min(axis=0).max()),
        inf2_sup13=float(t.max(axis=(0, 2)).min()),
        tol=tol,
    )


# ---------------------------------------------------------------------------
# global grid search
# ---------------------------------------------------------------------------


def grid_global_min(objective, lower, upper, resolution=200, refine=True, vectorized=False):
    """Exhaustive grid minimum over a box, optionally polished by coordinate descent.

    With ``vectorized=True`` the objective receives an ``(M, d)`` array of
    points and returns ``M`` values; otherwise it is called per point.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = lower.size
    if d > 3:
        raise DomainError("grid search is limited to 3 dimensions")
    if resolution < 2:
        raise DomainError("resolution must be at least 2 per axis")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(lower, upper)]
    pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    if vectorized:
        vals = np.asarray(objective(pts), dtype=float)
    else:
        vals = np.array([objective(p) for p in pts], dtype=float)
    vals = np.where(np.isnan(vals), np.inf, vals)
    k = int(np.argmin(vals))
    x, fx = pts[k].copy(), float(vals[k])
    if not refine:
        return x, fx

    def f(p):
        v = objective(p[None, :])[0] if vectorized else objective(p)
        return float(v) if np.isfinite(v) else np.inf

    cell = (upper - lower) / (resolution - 1)
    for _ in range(100):
        moved = 0.0
        for i in range(d):
            lo = max(lower[i], x[i] - cell[i])
            hi = min(upper[i], x[i] + cell[i])
            xs = x.copy()

            def line(t):
                xs[i] = t
                return f(xs)

            t, ft = _golden(line, lo, hi)
            if ft < fx:
                moved = max(moved, abs(t - x[i]))
                x[i], fx = t, ft
        if moved < 1e-12:
            break
    return x, fx


def _golden(fun, a, b, tol=1e-12):
    g = (np.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fun(d)
    return (c, fc) if fc <= fd else (d, fd)
