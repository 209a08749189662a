"""Equilibrium learning on the dual-reduced objectives.

Every player runs the Bregman dynamics on its augmented decision
``z_j = (a_j, lam_j, mu_j)``.  Gradients come from the integrand
``h_j(z, w) = lam (rho + f(1)) + mu + lam f*((l_j - mu) / lam)`` averaged over
the full base measure (deterministic), one draw (single particle) or ``N``
draws (swarm).  All players move simultaneously, each against the others'
state at the start of the step.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bregman import (
    BregmanState,
    BregmanTrajectory,
    Generator,
    SmoothObjective,
    TimeScaling,
    block_generator,
    bregman_step,
    constant_scaling,
    ideal_scaling,
    implicit_bregman_step,
    neg_entropy,
    scaled_gap,
    sq_euclidean,
)
from .errors import DomainError, IntegrationError, StructuralError
from .game import (
    AugmentedDecision,
    Box,
    RobustGame,
    Simplex,
    _actions_of,
    as_profile,
    dual_value,
    robust_value_dual,
)

MODES = ("deterministic", "single_particle", "swarm")
RESAMPLE = ("fresh", "fixed")


@dataclass(frozen=True)
class LearnerConfig:
    mode: str = "swarm"
    swarm_size: int = 1000
    resample: str = "fresh"
    seed: int = 0
    generator: str = "sq_euclidean"
    scaling: str = "ideal"
    alpha: float = 0.0
    beta0: float = 0.0
    dt: float = 1e-2
    horizon: float = 5.0
    integrator: str = "implicit"
    init_actions: Optional[tuple] = None
    init_lambda: float = 1.0
    init_mu: Optional[tuple] = None
    record_every: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}")
        if self.resample not in RESAMPLE:
            raise DomainError(f"resample must be one of {RESAMPLE}")
        if self.swarm_size < 1:
            raise DomainError("swarm_size must be at least 1")
        if not self.horizon > 0 or not self.dt > 0:
            raise DomainError("horizon and dt must be positive")
        if self.integrator not in ("implicit", "rk4"):
            raise DomainError("integrator must be 'implicit' or 'rk4'")
        if not self.init_lambda > 0:
            raise DomainError("init_lambda must be positive")

    def make_scaling(self) -> TimeScaling:
        if self.scaling == "ideal":
            return ideal_scaling(self.beta0)
        if self.scaling == "constant":
            return constant_scaling(self.alpha, self.beta0)
        raise DomainError(f"unknown scaling {self.scaling!r}")

    @property
    def particles(self):
        return 1 if self.mode == "single_particle" else self.swarm_size


@dataclass(frozen=True)
class JointState:
    t: float
    decisions: tuple
    velocities: tuple

    @property
    def actions(self):
        return tuple(z.action for z in self.decisions)


def _decisions(z) -> tuple:
    if isinstance(z, JointState):
        return z.decisions
    return tuple(z)


# ---------------------------------------------------------------------------
# gradients of the integrand
# ---------------------------------------------------------------------------


def _integrand_grads(game: RobustGame, j, actions, lam, mu, omegas):
    """Per-scenario gradient of ``h_j`` in ``(a_j, lam, mu)``, shape ``(N, dim_j + 2)``."""
    if lam < game.lambda_min:
        raise DomainError(f"lambda={lam} below lambda_min={game.lambda_min}")
    fam = game.divergence
    losses = game.loss_values(j, actions, omegas)
    grads = game.loss_gradient(j, actions, omegas)
    xi = (losses - mu) / lam
    with np.errstate(over="ignore", invalid="ignore"):
        fp = fam.conj_prime(xi)
        fs = fam.conj(xi)
        d_lam = (game.rho + fam.f_at_one) + fs - xi * fp
    d_lam = np.where(fp == 0, (game.rho + fam.f_at_one) + fs, d_lam)
    return np.column_stack([fp[:, None] * grads, d_lam, 1.0 - fp])


def integrand_gradient(game: RobustGame, j: int, z, omega) -> np.ndarray:
    """Gradient of player j's integrand at one realized scenario."""
    zs = _decisions(z)
    omega = np.atleast_1d(np.asarray(omega, dtype=float)).reshape(1, -1)
    return _integrand_grads(game, j, _actions_of(zs), zs[j].lam, zs[j].mu, omega)[0]


def swarm_gradient(game: RobustGame, j: int, z, particles) -> np.ndarray:
    """Mean integrand gradient over the particles (rows of scenario points)."""
    particles = np.asarray(particles, dtype=float)
    if particles.size == 0:
        raise StructuralError("the particle set is empty")
    if particles.ndim == 1:
        particles = particles.reshape(-1, game.base_scenarios.points.shape[1])
    zs = _decisions(z)
    g = _integrand_grads(game, j, _actions_of(zs), zs[j].lam, zs[j].mu, particles)
    return g.mean(axis=0)


def dual_gradient(game: RobustGame, j: int, z) -> np.ndarray:
    """Gradient of player j's dual objective over the full base measure."""
    zs = _decisions(z)
    base = game.base_scenarios
    g = _integrand_grads(game, j, _actions_of(zs), zs[j].lam, zs[j].mu, base.points)
    return base.weights @ g


def player_objective(game: RobustGame, j: int, actions, omegas=None, weights=None) -> SmoothObjective:
    """Player j's dual objective in ``z_j`` with the others' actions frozen.

    Evaluated on the given scenario rows and weights (the base measure by
    default).  Infeasible points (``lam`` below the floor) evaluate to inf.
    """
    base = game.base_scenarios
    omegas = base.points if omegas is None else omegas
    weights = base.weights if weights is None else weights
    actions = list(as_profile(actions))
    dim = actions[j].size
    fam, rho = game.divergence, game.rho

    def split(zj):
        trial = list(actions)
        trial[j] = zj[:dim]
        return tuple(trial), zj[dim], zj[dim + 1]

    def value(zj):
        acts, lam, mu = split(zj)
        if not lam >= game.lambda_min:
            return math.inf
        return dual_value(fam, rho, game.loss_values(j, acts, omegas), weights, lam, mu)

    def grad(zj):
        acts, lam, mu = split(zj)
        return weights @ _integrand_grads(game, j, acts, max(lam, game.lambda_min), mu, omegas)

    def hess(zj):
        lam = zj[dim]
        n = zj.size
        out = np.empty((n, n))
        for i in range(n):
            if i == dim:
                h = 1e-4 * lam
            else:
                h = 1e-5 * min(lam, 1.0) * max(abs(zj[i]), 1.0)
            e = np.zeros(n)
            e[i] = h
            out[:, i] = (grad(zj + e) - grad(zj - e)) / (2 * h)
        return 0.5 * (out + out.T)

    return SmoothObjective(value, grad, hess)


# ---------------------------------------------------------------------------
# learning runs
# ---------------------------------------------------------------------------


@dataclass
class LearningResult:
    trajectories: list
    final: JointState
    method: str = "bregman"
    error: Optional[str] = None


def _player_generator(config: LearnerConfig, dset) -> Generator:
    if isinstance(dset, Simplex):
        return block_generator([(neg_entropy(), dset.dim), (sq_euclidean(), 2)])
    if config.generator != "sq_euclidean":
        raise DomainError(f"generator {config.generator!r} needs a simplex decision set")
    return sq_euclidean()


def _bounds(game, j):
    dset = game.decision_sets[j]
    if isinstance(dset, Box):
        lo = np.concatenate([dset.lower, [game.lambda_min, -np.inf]])
        hi = np.concatenate([dset.upper, [np.inf, np.inf]])
    else:
        lo = np.concatenate([np.full(dset.dim, -np.inf), [game.lambda_min, -np.inf]])
        hi = np.full(dset.dim + 2, np.inf)
    return lo, hi


def _default_action(dset):
    if isinstance(dset, Box):
        return 0.5 * (dset.lower + dset.upper)
    return np.full(dset.dim, 1.0 / dset.dim)


def initial_state(game: RobustGame, init_actions=None, init_lambda=1.0, init_mu=None) -> JointState:
    """Start at the given actions with ``lam = init_lambda`` and ``mu`` the mean loss."""
    if init_actions is None:
        actions = tuple(_default_action(d) for d in game.decision_sets)
    else:
        actions = as_profile(init_actions)
        if len(actions) != game.n_players:
            raise StructuralError(f"{len(actions)} initial actions for {game.n_players} players")
    decisions = []
    for j, dset in enumerate(game.decision_sets):
        a = dset.project(actions[j])
        if init_mu is None:
            mu = float(game.base_scenarios.weights @ game.loss_values(j, actions))
        else:
            mu = float(init_mu[j])
        decisions.append(AugmentedDecision(a, init_lambda, mu))
    velocities = tuple(np.zeros(z.as_vector().size) for z in decisions)
    return JointState(0.0, tuple(decisions), velocities)


def _reference_decisions(game: RobustGame, reference):
    """Augmented reference profile and each player's objective value there."""
    if reference is None:
        return None
    if isinstance(reference[0], AugmentedDecision):
        zs = tuple(reference)
    else:
        acts = as_profile(reference)
        zs = []
        for j in range(game.n_players):
            sol = robust_value_dual(game, j, acts)
            zs.append(AugmentedDecision(acts[j], sol.lambda_star, sol.mu_star))
        zs = tuple(zs)
    values = [player_objective(game, j, _actions_of(zs)).value(zs[j].as_vector())
              for j in range(game.n_players)]
    return zs, values


def _lyapunov_record(gen, scaling, t, zj, uj, z_star, obj_now, obj_star):
    y = zj + math.exp(-scaling.alpha(t)) * uj
    d = gen.g(z_star) - gen.g(y) - float(np.dot(gen.grad_g(y), z_star - y))
    return d + scaled_gap(scaling.beta(t), obj_now - obj_star)


def run_learning(game: RobustGame, config: LearnerConfig, reference=None,
                 on_divergence: str = "raise") -> LearningResult:
    """Synchronous Bregman learning for every player.

    ``reference`` (actions or augmented decisions) enables Lyapunov and
    bound monitoring against that profile.  On a non-finite state the run
    raises :class:`IntegrationError` carrying the last finite JointState, or
    with ``on_divergence="stop"`` returns the partial result with ``error``
    set.
    """
    scaling = config.make_scaling()
    n = game.n_players
    gens = [_player_generator(config, d) for d in game.decision_sets]
    if any(g.simplex for g in gens) and config.integrator != "rk4":
        raise DomainError("simplex decision sets require integrator='rk4'")
    bounds = [_bounds(game, j) for j in range(n)]
    state = initial_state(game, config.init_actions, config.init_lambda, config.init_mu)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(n)]
    base = game.base_scenarios
    fixed = None
    if config.mode != "deterministic" and config.resample == "fixed":
        fixed = [base.points[base.sample(rng, config.particles)] for rng in streams]

    ref = _reference_decisions(game, reference)
    trajs = [BregmanTrajectory() for _ in range(n)]
    c0 = [None] * n

    def record(st):
        acts = st.actions
        for j in range(n):
            zj = st.decisions[j].as_vector()
            obj = player_objective(game, j, acts).value(zj)
            if ref is None:
                trajs[j].record(st.t, zj, st.velocities[j], obj)
                continue
            v = _lyapunov_record(gens[j], scaling, st.t, zj, st.velocities[j],
                                 ref[0][j].as_vector(), obj, ref[1][j])
            if c0[j] is None:
                c0[j] = max(v, 0.0)
            trajs[j].record(st.t, zj, st.velocities[j], obj, v, c0[j] * math.exp(-scaling.beta(st.t)))

    record(state)
    n_steps = int(round(config.horizon / config.dt))
    for k in range(1, n_steps + 1):
        acts = state.actions
        new_z, new_u = [], []
        for j in range(n):
            if config.mode == "deterministic":
                omegas, weights = base.points, base.weights
            else:
                omegas = fixed[j] if fixed is not None else base.points[base.sample(streams[j], config.particles)]
                weights = np.full(len(omegas), 1.0 / len(omegas))
            obj = player_objective(game, j, acts, omegas, weights)
            st = BregmanState(state.t, state.decisions[j].as_vector(), state.velocities[j])
            lo, hi = bounds[j]
            try:
                if config.integrator == "implicit":
                    nxt = implicit_bregman_step(gens[j], scaling, st, obj, config.dt, lo, hi)
                else:
                    nxt = bregman_step(gens[j], scaling, st, obj.grad, config.dt,
                                       project=lambda z, lo=lo, hi=hi: np.clip(z, lo, hi))
            except (IntegrationError, FloatingPointError, DomainError) as exc:
                if on_divergence == "stop":
                    return LearningResult(trajs, state, "bregman", f"player {j}: {exc}")
                raise IntegrationError(f"player {j}: {exc}", state) from exc
            new_z.append(AugmentedDecision.from_vector(nxt.z))
            new_u.append(nxt.u)
        state = JointState(k * config.dt, tuple(new_z), tuple(new_u))
        if k % config.record_every == 0 or k == n_steps:
            record(state)
    return LearningResult(trajs, state, "bregman")


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def gradient_descent(grad, z0, step, iters, project=None) -> np.ndarray:
    """Plain projected gradient descent; returns all ``iters + 1`` iterates."""
    if not step > 0:
        raise DomainError("step must be positive")
    z = np.atleast_1d(np.asarray(z0, dtype=float))
    out = [z.copy()]
    for _ in range(iters):
        z = z - step * np.asarray(grad(z), dtype=float)
        if project is not None:
            z = project(z)
        out.append(z.copy())
    return np.array(out)


def nesterov_descent(grad, z0, step, iters, project=None) -> np.ndarray:
    """Nesterov's accelerated descent with momentum ``(k - 1) / (k + 2)``."""
    if not step > 0:
        raise DomainError("step must be positive")
    z = np.atleast_1d(np.asarray(z0, dtype=float))
    prev = z.copy()
    out = [z.copy()]
    for k in range(1, iters + 1):
        y = z + (k - 1) / (k + 2) * (z - prev)
        nxt = y - step * np.asarray(grad(y), dtype=float)
        if project is not None:
            nxt = project(nxt)
        prev, z = z, nxt
        out.append(z.copy())
    return np.array(out)


def run_baseline(game: RobustGame, method: str, step: float, iters: int, init_actions=None,
                 init_lambda: float = 1.0, reference=None, record_every: int = 1,
                 on_divergence: str = "raise") -> LearningResult:
    """Simultaneous projected gradient (or Nesterov) descent on every player's dual objective.

    Sample times are ``k * step``.  The recorded velocity is the last
    displacement divided by ``step``.  Divergence is handled as in
    :func:`run_learning`.
    """
    if method not in ("gradient", "nesterov"):
        raise DomainError(f"unknown baseline {method!r}")
    if not step > 0:
        raise DomainError("step must be positive")
    n = game.n_players
    bounds = [_bounds(game, j) for j in range(n)]
    state = initial_state(game, init_actions, init_lambda)
    z = [d.as_vector() for d in state.decisions]
    prev = [v.copy() for v in z]
    ref = _reference_decisions(game, reference)
    trajs = [BregmanTrajectory() for _ in range(n)]

    def record(k, zs, prevs):
        decs = [AugmentedDecision.from_vector(v) for v in zs]
        acts = tuple(d.action for d in decs)
        for j in range(n):
            obj = player_objective(game, j, acts).value(zs[j])
            vel = (zs[j] - prevs[j]) / step
            if ref is None:
                trajs[j].record(k * step, zs[j], vel, obj)
            else:
                trajs[j].record(k * step, zs[j], vel, obj, math.nan, math.nan)

    record(0, z, prev)
    for k in range(1, iters + 1):
        if method == "nesterov":
            y = [v + (k - 1) / (k + 2) * (v - p) for v, p in zip(z, prev)]
        else:
            y = z
        decs = tuple(AugmentedDecision.from_vector(v) for v in y)
        acts = tuple(d.action for d in decs)
        nxt = []
        for j in range(n):
            g = player_objective(game, j, acts).grad(y[j])
            lo, hi = bounds[j]
            v = np.clip(y[j] - step * g, lo, hi)
            if isinstance(game.decision_sets[j], Simplex):
                dim = game.decision_sets[j].dim
                v[:dim] = game.decision_sets[j].project(v[:dim])
            if not (np.all(np.isfinite(v)) and np.all(np.isfinite(g))):
                last = JointState((k - 1) * step, tuple(AugmentedDecision.from_vector(w) for w in z),
                                  tuple((w - p) / step for w, p in zip(z, prev)))
                msg = f"player {j}: non-finite iterate at step {k}"
                if on_divergence == "stop":
                    return LearningResult(trajs, last, method, msg)
                raise IntegrationError(msg, last)
            nxt.append(v)
        prev, z = z, nxt
        if k % record_every == 0 or k == iters:
            record(k, z, prev)
    final = JointState(iters * step, tuple(AugmentedDecision.from_vector(v) for v in z),
                       tuple((v - p) / step for v, p in zip(z, prev)))
    return LearningResult(trajs, final, method)


def hitting_index(trajectories: Sequence[BregmanTrajectory], targets: Sequence[float], eta: float,
                  diverged: bool = False):
    """First sample index from which every player stays within eta of its target.

    Returns None if the final sample is outside the band or the run
    ``diverged`` (a truncated run cannot certify that it stays).
    """
    if diverged:
        return None
    objs = np.array([tr.objective for tr in trajectories])
    gaps = np.abs(objs - np.asarray(targets, dtype=float)[:, None])
    ok = np.all(gaps <= eta, axis=0)
    if ok.size == 0 or not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    return int(bad[-1] + 1) if bad.size else 0


# ---------------------------------------------------------------------------
# pseudo-potential
# ---------------------------------------------------------------------------


def pseudo_potential_check(game: RobustGame, candidate_potential, probe_grid, tol: float = 1e-6,
                           player_value=None) -> bool:
    """Check that the candidate's per-coordinate grid argmins are best responses.

    ``probe_grid[j]`` lists player j's probe actions.  For every combination
    of the other players' probes, each grid argmin of ``candidate_potential``
    over player j's probes must also be a grid argmin of player j's robust
    value.  ``player_value(j, actions)`` overrides the robust value.
    """
    grids = [np.asarray(g, dtype=float).reshape(len(g), -1) for g in probe_grid]
    if player_value is None:
        player_value = lambda j, acts: robust_value_dual(game, j, acts).value
    n = game.n_players
    for j in range(n):
        others = [range(len(grids[i])) for i in range(n) if i != j]
        for combo in itertools.product(*others):
            combo = list(combo)
            pot, val = [], []
            for a in grids[j]:
                acts = []
                it = iter(combo)
                for i in range(n):
                    acts.append(a if i == j else grids[i][next(it)])
                acts = tuple(acts)
                pot.append(candidate_potential(acts))
                val.append(player_value(j, acts))
            pot, val = np.array(pot), np.array(val)
            pot_arg = pot <= pot.min() + tol
            val_arg = val <= val.min() + tol
            if np.any(pot_arg & ~val_arg):
                return False
    return True
