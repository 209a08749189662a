"""Bregman divergences and the accelerated Bregman dynamics.

The dynamics are integrated in mirror coordinates.  With
``y = z + exp(-alpha) zdot`` and ``w = grad_g(y)``::

    d/dt w = -exp(alpha + beta) grad_l(z)
    zdot   = exp(alpha) (grad_g_inverse(w) - z)

which is equivalent to the second-order system

    zddot + (exp(alpha) - alphadot) zdot
          + exp(2 alpha + beta) hess_g(y)^{-1} grad_l(z) = 0

whenever ``betadot = exp(alpha)``.  Two integrators are provided: classical
RK4 (:func:`bregman_step`), accurate while ``exp(alpha + beta/2) dt`` stays
small, and a proximal implicit step (:func:`implicit_bregman_step`) whose
discrete Lyapunov function is non-increasing for every step size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import softmax, xlogy

from .errors import DomainError, IntegrationError

HORIZON_CAP = 6.0
EXP_LIMIT = 700.0


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Generator:
    """Strictly convex ``g`` with its gradient, mirror map and curvature.

    ``hess_g_inv_apply(x, v)`` applies the inverse Hessian at ``x`` to ``v``
    (restricted to the tangent space for constrained domains).  ``simplex``
    marks generators whose mirror map lands in the probability simplex.
    """

    name: str
    g: Callable
    grad_g: Callable
    grad_g_inverse: Callable
    hess_g: Callable
    hess_g_inv_apply: Callable
    in_domain: Callable = lambda x: bool(np.all(np.isfinite(x)))
    simplex: bool = False


def sq_euclidean() -> Generator:
    return Generator(
        name="sq_euclidean",
        g=lambda x: 0.5 * float(np.dot(x, x)),
        grad_g=lambda x: np.array(x, dtype=float),
        grad_g_inverse=lambda w: np.array(w, dtype=float),
        hess_g=lambda x: np.eye(np.size(x)),
        hess_g_inv_apply=lambda x, v: np.array(v, dtype=float),
    )


def neg_entropy() -> Generator:
    """``g(x) = sum x log x`` on the simplex; mirror map is the softmax."""

    def in_domain(x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x > 0) and abs(x.sum() - 1.0) < 1e-9)

    def inv_apply(x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        return x * v - x * np.dot(x, v)

    return Generator(
        name="neg_entropy",
        g=lambda x: float(np.sum(xlogy(x, x))),
        grad_g=lambda x: np.log(x) + 1.0,
        grad_g_inverse=lambda w: softmax(w),
        hess_g=lambda x: np.diag(1.0 / np.asarray(x, dtype=float)),
        hess_g_inv_apply=inv_apply,
        in_domain=in_domain,
        simplex=True,
    )


def block_generator(blocks) -> Generator:
    """Separable sum of generators over consecutive coordinate blocks.

    ``blocks`` is a sequence of ``(generator, size)`` pairs.
    """
    blocks = [(gen, int(size)) for gen, size in blocks]
    cuts = np.cumsum([0] + [s for _, s in blocks])

    def split(x):
        return [np.asarray(x, dtype=float)[cuts[i]:cuts[i + 1]] for i in range(len(blocks))]

    def cat(fn):
        return lambda x: np.concatenate([fn(gen)(p) for (gen, _), p in zip(blocks, split(x))])

    def hess(x):
        n = cuts[-1]
        out = np.zeros((n, n))
        for i, ((gen, _), p) in enumerate(zip(blocks, split(x))):
            out[cuts[i]:cuts[i + 1], cuts[i]:cuts[i + 1]] = gen.hess_g(p)
        return out

    def inv_apply(x, v):
        return np.concatenate([gen.hess_g_inv_apply(p, q)
                               for (gen, _), p, q in zip(blocks, split(x), split(v))])

    return Generator(
        name="+".join(gen.name for gen, _ in blocks),
        g=lambda x: sum(gen.g(p) for (gen, _), p in zip(blocks, split(x))),
        grad_g=cat(lambda gen: gen.grad_g),
        grad_g_inverse=cat(lambda gen: gen.grad_g_inverse),
        hess_g=hess,
        hess_g_inv_apply=inv_apply,
        in_domain=lambda x: all(gen.in_domain(p) for (gen, _), p in zip(blocks, split(x))),
        simplex=any(gen.simplex for gen, _ in blocks),
    )


GENERATORS = {"sq_euclidean": sq_euclidean, "neg_entropy": neg_entropy}


def bregman_divergence(gen: Generator, y, x) -> float:
    """``g(y) - g(x) - <grad_g(x), y - x>``; ``x`` must lie in the domain interior."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not gen.in_domain(x):
        raise DomainError(f"{gen.name}: base point {x} is not in the domain interior")
    d = gen.g(y) - gen.g(x) - float(np.dot(gen.grad_g(x), y - x))
    return max(d, 0.0) if d > -1e-12 else d


# ---------------------------------------------------------------------------
# time scalings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeScaling:
    """``alpha(t)`` and ``beta(t) = beta0 + int_0^t exp(alpha)``."""

    alpha: Callable[[float], float]
    alpha_dot: Callable[[float], float]
    beta: Callable[[float], float]
    beta0: float = 0.0
    name: str = "custom"

    @classmethod
    def from_alpha(cls, alpha, alpha_dot, beta0=0.0, name="custom"):
        def beta(t):
            return beta0 + quad(lambda s: math.exp(alpha(s)), 0.0, t, epsabs=1e-13, epsrel=1e-13)[0]
        return cls(alpha, alpha_dot, beta, beta0, name)

    def log_drive(self, t):
        """``alpha(t) + beta(t)``, the log of the gradient gain."""
        return self.alpha(t) + self.beta(t)


def ideal_scaling(beta0: float = 0.0) -> TimeScaling:
    """``alpha = t`` and ``beta = beta0 + e^t - 1`` (``beta0 = 1`` gives ``beta = e^t``)."""
    return TimeScaling(
        alpha=lambda t: t,
        alpha_dot=lambda t: 1.0,
        beta=lambda t: beta0 + math.expm1(t),
        beta0=beta0,
        name="ideal",
    )


def constant_scaling(alpha: float = 0.0, beta0: float = 0.0) -> TimeScaling:
    c = float(alpha)
    return TimeScaling(
        alpha=lambda t: c,
        alpha_dot=lambda t: 0.0,
        beta=lambda t: beta0 + math.exp(c) * t,
        beta0=beta0,
        name="constant",
    )


def _exp(x, what):
    if x > EXP_LIMIT or not math.isfinite(x):
        raise IntegrationError(f"{what} overflows (exponent {x:.1f}); shorten the horizon or cap the scaling")
    return math.exp(x)


def convergence_bound(scaling: TimeScaling, c0: float, t: float) -> float:
    """``exp(-beta(t)) c0``, the guaranteed objective gap at time t."""
    if c0 < 0:
        raise DomainError("c0 must be nonnegative")
    return c0 * math.exp(-scaling.beta(t))


def time_to_precision(scaling: TimeScaling, c0: float, eta: float, t_max: float = 50.0) -> float:
    """Smallest t with ``exp(-beta(t)) c0 <= eta``."""
    target = math.log(c0 / eta)
    if scaling.beta(0.0) >= target:
        return 0.0
    lo, hi = 0.0, 1.0
    while scaling.beta(hi) < target:
        hi *= 2.0
        if hi > t_max:
            return math.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if scaling.beta(mid) < target:
            lo = mid
        else:
            hi = mid
    return hi


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


class BregmanState(NamedTuple):
    t: float
    z: np.ndarray
    u: np.ndarray


def mirror_point(gen, scaling, state):
    """``y = z + exp(-alpha(t)) u``."""
    return state.z + math.exp(-scaling.alpha(state.t)) * state.u


def velocity_from_mirror(gen, scaling, t, z, w):
    return math.exp(scaling.alpha(t)) * (gen.grad_g_inverse(w) - z)


def bregman_step(gen: Generator, scaling: TimeScaling, state: BregmanState, grad_objective,
                 dt: float, project=None) -> BregmanState:
    """One classical RK4 step of the mirror-coordinate system.

    ``grad_objective`` is a callable ``z -> gradient`` (RK4 needs it at the
    intermediate stages).  ``project`` optionally maps z back into a box
    after the step.
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    t, z = state.t, np.asarray(state.z, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = gen.grad_g(mirror_point(gen, scaling, state))

    def rhs(s, zz, ww):
        gain = _exp(scaling.log_drive(s), "exp(alpha + beta)")
        zdot = math.exp(scaling.alpha(s)) * (gen.grad_g_inverse(ww) - zz)
        wdot = -gain * np.asarray(grad_objective(zz), dtype=float)
        return zdot, wdot

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        k1z, k1w = rhs(t, z, w)
        k2z, k2w = rhs(t + dt / 2, z + dt / 2 * k1z, w + dt / 2 * k1w)
        k3z, k3w = rhs(t + dt / 2, z + dt / 2 * k2z, w + dt / 2 * k2w)
        k4z, k4w = rhs(t + dt, z + dt * k3z, w + dt * k3w)
        z_new = z + dt / 6 * (k1z + 2 * k2z + 2 * k3z + k4z)
        w_new = w + dt / 6 * (k1w + 2 * k2w + 2 * k3w + k4w)
        if project is not None:
            z_new = project(z_new)
        t_new = t + dt
        u_new = velocity_from_mirror(gen, scaling, t_new, z_new, w_new)
    if not (np.all(np.isfinite(z_new)) and np.all(np.isfinite(u_new))):
        raise IntegrationError(f"non-finite state at t={t_new:.4g}; reduce dt or the horizon", state)
    return BregmanState(t_new, z_new, u_new)


@dataclass
class SmoothObjective:
    """Objective for the implicit step: value, gradient and optional Hessian."""

    value: Callable
    grad: Callable
    hess: Optional[Callable] = None

    def hessian(self, z):
        if self.hess is not None:
            return np.atleast_2d(self.hess(z))
        z = np.asarray(z, dtype=float)
        n = z.size
        out = np.empty((n, n))
        for i in range(n):
            h = 1e-6 * max(abs(z[i]), 1e-3)
            e = np.zeros(n)
            e[i] = h
            out[:, i] = (self.grad(z + e) - self.grad(z - e)) / (2 * h)
        return 0.5 * (out + out.T)


def implicit_bregman_step(gen: Generator, scaling: TimeScaling, state: BregmanState,
                          objective: SmoothObjective, dt: float, lower=None, upper=None,
                          max_newton: int = 60) -> BregmanState:
    """Proximal step of the mirror-coordinate law, stable for any ``dt``.

    With ``A = exp(beta)``, ``r = A_k / A_{k+1}`` the new point solves::

        grad_g(y+) - grad_g(y) = -(A_{k+1} - A_k) grad_l(z+)
        z+ = r z + (1 - r) y+

    equivalently ``z+ = argmin l(z) + d_g(y(z), y) / A_{k+1}`` with
    ``y(z) = (z - r z_k) / (1 - r)``.  For convex ``l`` the Lyapunov value
    ``d_g(z*, y) + A (l(z) - l(z*))`` does not increase across the step.
    Box bounds on z are handled by a projected Newton iteration.
    """
    if gen.simplex:
        raise DomainError("the implicit step supports unconstrained generators; use rk4 on the simplex")
    if not dt > 0:
        raise DomainError("dt must be positive")
    t = state.t
    zk = np.asarray(state.z, dtype=float)
    yk = mirror_point(gen, scaling, state)
    gyk = gen.grad_g(yk)
    b0, b1 = scaling.beta(t), scaling.beta(t + dt)
    r = math.exp(-(b1 - b0))
    one_r = -math.expm1(-(b1 - b0))
    if b1 > 745.0:
        raise IntegrationError("exp(-beta) underflows; shorten the horizon", state)
    kappa = math.exp(-b1)
    lo = np.full(zk.size, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full(zk.size, np.inf) if upper is None else np.asarray(upper, dtype=float)

    def y_of(z):
        return (z - r * zk) / one_r

    def phi(z):
        y = y_of(z)
        if not gen.in_domain(y):
            return math.inf
        v = objective.value(z)
        d = gen.g(y) - gen.g(yk) - float(np.dot(gyk, y - yk))
        out = v + kappa * d
        return out if math.isfinite(out) else math.inf

    def grad_phi(z):
        return np.asarray(objective.grad(z), dtype=float) + (kappa / one_r) * (gen.grad_g(y_of(z)) - gyk)

    def hess_phi(z):
        return objective.hessian(z) + (kappa / one_r ** 2) * gen.hess_g(y_of(z))

    z = np.clip(zk, lo, hi)
    fz = phi(z)
    for _ in range(max_newton):
        g = grad_phi(z)
        if not np.all(np.isfinite(g)):
            break
        at_lo = (z <= lo) & (g > 0)
        at_hi = (z >= hi) & (g < 0)
        free = ~(at_lo | at_hi)
        if not free.any():
            break
        H = hess_phi(z)[np.ix_(free, free)]
        gf = g[free]
        if not np.all(np.isfinite(H)):
            H = np.eye(gf.size)
        evals = np.linalg.eigvalsh(H)
        shift = 0.0
        if evals[0] <= 1e-12 * max(abs(evals[-1]), 1.0):
            shift = -evals[0] + 1e-8 * max(abs(evals[-1]), 1.0)
        d = np.zeros_like(z)
        try:
            d[free] = -np.linalg.solve(H + shift * np.eye(gf.size), gf)
        except np.linalg.LinAlgError:
            d[free] = -gf
        step = 1.0
        accepted = False
        for _ in range(60):
            z_try = np.clip(z + step * d, lo, hi)
            f_try = phi(z_try)
            if f_try <= fz + 1e-4 * float(np.dot(g, z_try - z)) or (
                    f_try <= fz + 4e-16 * abs(fz) and f_try < math.inf):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        delta = np.max(np.abs(z_try - z))
        z, fz = z_try, f_try
        if delta <= 1e-13 * max(np.max(np.abs(z)), 1e-300):
            break

    t_new = t + dt
    y_new = y_of(z)
    u_new = math.exp(scaling.alpha(t_new)) * (y_new - z)
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(u_new))):
        raise IntegrationError(f"non-finite state at t={t_new:.4g}", state)
    return BregmanState(t_new, z, u_new)


# ---------------------------------------------------------------------------
# Lyapunov monitoring and trajectories
# ---------------------------------------------------------------------------


def scaled_gap(beta, gap):
    """``exp(beta) * gap`` computed in log space."""
    if gap == 0:
        return 0.0
    sign = 1.0 if gap > 0 else -1.0
    expo = beta + math.log(abs(gap))
    return sign * (math.exp(expo) if expo < 709.0 else math.inf)


def lyapunov(gen: Generator, scaling: TimeScaling, state: BregmanState, z_star, objective_at) -> float:
    """``d_g(z*, z + exp(-alpha) u) + exp(beta) (l(z) - l(z*))``."""
    y = mirror_point(gen, scaling, state)
    d = gen.g(np.asarray(z_star, dtype=float)) - gen.g(y) - float(np.dot(gen.grad_g(y), z_star - y))
    gap = objective_at(state.z) - objective_at(z_star)
    return d + scaled_gap(scaling.beta(state.t), gap)


@dataclass
class BregmanTrajectory:
    t: list = field(default_factory=list)
    z: list = field(default_factory=list)
    u: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    lyapunov: list = field(default_factory=list)
    bound: list = field(default_factory=list)

    def record(self, t, z, u, objective=math.nan, lyapunov=math.nan, bound=math.nan):
        if self.t and not t > self.t[-1]:
            raise ValueError("trajectory times must increase strictly")
        self.t.append(float(t))
        self.z.append(np.array(z, dtype=float))
        self.u.append(np.array(u, dtype=float))
        self.objective.append(float(objective))
        self.lyapunov.append(float(lyapunov))
        self.bound.append(float(bound))

    def __len__(self):
        return len(self.t)

    def arrays(self):
        return (np.array(self.t), np.array(self.z), np.array(self.u), np.array(self.objective),
                np.array(self.lyapunov), np.array(self.bound))


def integrate(gen: Generator, scaling: TimeScaling, objective: SmoothObjective, z0, u0=None,
              horizon: float = 5.0, dt: float = 1e-3, method: str = "implicit", z_star=None,
              lower=None, upper=None, record_every: int = 1) -> BregmanTrajectory:
    """Run the Bregman dynamics from ``(z0, u0)`` up to ``horizon``.

    When ``z_star`` is given each sample carries the Lyapunov value and the
    bound ``c0 exp(-beta(t))`` with ``c0`` the initial Lyapunov value.
    """
    if horizon > HORIZON_CAP:
        raise DomainError(f"horizon {horizon} exceeds the cap {HORIZON_CAP}")
    if method not in ("implicit", "rk4"):
        raise ValueError(f"unknown integrator {method!r}")
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    u0 = np.zeros_like(z0) if u0 is None else np.atleast_1d(np.asarray(u0, dtype=float))
    state = BregmanState(0.0, z0, u0)
    value = objective.value
    traj = BregmanTrajectory()
    c0 = None

    def record(s):
        nonlocal c0
        obj = value(s.z)
        if z_star is None:
            traj.record(s.t, s.z, s.u, obj)
            return
        v = lyapunov(gen, scaling, s, z_star, value)
        if c0 is None:
            c0 = v
        traj.record(s.t, s.z, s.u, obj, v, convergence_bound(scaling, max(c0, 0.0), s.t))

    record(state)
    n_steps = int(round(horizon / dt))
    project = None
    if lower is not None or upper is not None:
        lo = -np.inf if lower is None else lower
        hi = np.inf if upper is None else upper
        project = lambda z: np.clip(z, lo, hi)
    for k in range(1, n_steps + 1):
        if method == "rk4":
            state = bregman_step(gen, scaling, state, objective.grad, dt, project)
        else:
            state = implicit_bregman_step(gen, scaling, state, objective, dt, lower, upper)
        state = BregmanState(k * dt, state.z, state.u)
        if k % record_every == 0 or k == n_steps:
            record(state)
    return traj
