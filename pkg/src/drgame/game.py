"""Distributionally robust games and their finite-dimensional dual reduction.

Each player j minimizes the worst-case expected loss

    sup { E_mt[l_j(a, w)] : D_f(mt || m) <= rho }

over its own action.  For fixed actions the inner supremum equals

    min_{lam >= 0, mu}  lam (rho + f(1)) + mu + E_m[lam f*((l_j - mu) / lam)]

which is what :func:`dual_objective` evaluates and :func:`robust_value_dual`
minimizes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from ._numerics import golden_section
from .divergence import KL, DiscreteMeasure, FDivergence, divergence_from_weights, get_family
from .errors import ConsistencyError, DomainError, StructuralError

LAMBDA_MIN = 1e-8
LAMBDA_CAP = 1e8
DEFAULT_PROBE_RESOLUTION = 200


# ---------------------------------------------------------------------------
# decision sets and scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise StructuralError("box bounds must have equal shapes")
        if np.any(lo > hi):
            raise DomainError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    def project(self, x):
        return np.clip(x, self.lower, self.upper)

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def grid(self, resolution):
        axes = [np.linspace(l, h, resolution) for l, h in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class Simplex:
    dim: int

    def project(self, x):
        return project_simplex(x)

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(x.shape == (self.dim,) and np.all(x >= -tol) and abs(x.sum() - 1.0) <= tol)

    def grid(self, resolution):
        """Lattice points with coordinates in multiples of ``1 / (resolution - 1)``."""
        k = max(resolution - 1, 1)
        pts = [
            np.array(c + (k - sum(c),), dtype=float) / k
            for c in itertools.product(range(k + 1), repeat=self.dim - 1)
            if sum(c) <= k
        ]
        return np.array(pts) if pts else np.ones((1, 1))


def project_simplex(y):
    """Euclidean projection onto the probability simplex (sort-based)."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


class ScenarioSet(DiscreteMeasure):
    """Finite weighted scenario points, the base measure ``m`` of a game."""

    @property
    def points(self):
        return self.support

    @classmethod
    def empirical(cls, points):
        return cls(points)

    def sample(self, rng, n):
        """Indices of ``n`` i.i.d. draws from the weights."""
        return rng.choice(len(self), size=n, p=self.weights)


@dataclass(frozen=True)
class AugmentedDecision:
    """A player's action together with its two dual multipliers."""

    action: np.ndarray
    lam: float
    mu: float

    def __post_init__(self):
        object.__setattr__(self, "action", np.atleast_1d(np.asarray(self.action, dtype=float)))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "mu", float(self.mu))

    def as_vector(self):
        return np.concatenate([self.action, [self.lam, self.mu]])

    @classmethod
    def from_vector(cls, z):
        z = np.asarray(z, dtype=float)
        return cls(z[:-2], z[-2], z[-1])


# ---------------------------------------------------------------------------
# the game
# ---------------------------------------------------------------------------

LossFn = Callable[[tuple, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RobustGame:
    """n-player game with f-divergence uncertainty around ``base_scenarios``.

    ``losses[j](actions, omegas)`` returns player j's loss for every row of
    ``omegas`` (shape ``(N, d)``) at the action profile ``actions`` (a tuple
    of 1-D arrays, one per player).  ``loss_grads[j]`` optionally returns
    the ``(N, dim_j)`` gradient with respect to player j's own action;
    central differences are used when it is missing.
    """

    decision_sets: tuple
    losses: tuple
    divergence: FDivergence
    rho: float
    base_scenarios: ScenarioSet
    loss_grads: Optional[tuple] = None
    name: str = "custom"
    reference_profile: Optional[tuple] = None
    lambda_min: float = LAMBDA_MIN

    def __post_init__(self):
        object.__setattr__(self, "decision_sets", tuple(self.decision_sets))
        object.__setattr__(self, "losses", tuple(self.losses))
        n = len(self.decision_sets)
        if n < 2:
            raise DomainError("a game needs at least two players")
        if len(self.losses) != n:
            raise StructuralError(f"{len(self.losses)} loss functions for {n} players")
        if self.loss_grads is not None:
            object.__setattr__(self, "loss_grads", tuple(self.loss_grads))
            if len(self.loss_grads) != n:
                raise StructuralError("one loss gradient per player is required")
        if not self.rho > 0:
            raise DomainError(f"rho must be positive, got {self.rho}")
        if not isinstance(self.base_scenarios, DiscreteMeasure):
            raise StructuralError("base_scenarios must be a ScenarioSet")

    @property
    def n_players(self):
        return len(self.decision_sets)

    def action_dims(self):
        return [s.dim for s in self.decision_sets]

    def loss_values(self, j, actions, omegas=None):
        if omegas is None:
            omegas = self.base_scenarios.points
        return np.asarray(self.losses[j](as_profile(actions), omegas), dtype=float)

    def loss_gradient(self, j, actions, omegas=None):
        """``(N, dim_j)`` gradient of player j's loss in its own action."""
        if omegas is None:
            omegas = self.base_scenarios.points
        actions = as_profile(actions)
        if self.loss_grads is not None and self.loss_grads[j] is not None:
            return np.asarray(self.loss_grads[j](actions, omegas), dtype=float).reshape(len(omegas), -1)
        a = actions[j]
        out = np.empty((len(omegas), a.size))
        for i in range(a.size):
            h = 1e-6 * max(1.0, abs(a[i]))
            up = list(actions)
            dn = list(actions)
            up[j] = a.copy()
            dn[j] = a.copy()
            up[j][i] += h
            dn[j][i] -= h
            out[:, i] = (self.losses[j](tuple(up), omegas) - self.losses[j](tuple(dn), omegas)) / (2 * h)
        return out


def as_profile(actions):
    return tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in actions)


def _actions_of(profile):
    if profile and isinstance(profile[0], AugmentedDecision):
        return tuple(z.action for z in profile)
    return as_profile(profile)


# ---------------------------------------------------------------------------
# dual objective and inner solve
# ---------------------------------------------------------------------------


def dual_value(fam: FDivergence, rho, losses, weights, lam, mu):
    """``lam (rho + f(1)) + mu + sum_k w_k lam f*((l_k - mu) / lam)``."""
    losses = np.asarray(losses, dtype=float)
    weights = np.asarray(weights, dtype=float)
    xi = (losses - mu) / lam
    if fam is KL:
        with np.errstate(over="ignore"):
            tail = lam * np.exp(logsumexp(xi, b=weights))
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            tail = lam * float(np.sum(weights * fam.conj(xi)))
    value = lam * (rho + fam.f_at_one) + mu + tail
    return float(value) if np.isfinite(value) else math.inf


def dual_objective(game: RobustGame, j: int, profile: Sequence[AugmentedDecision]) -> float:
    """Player j's reduced objective at an augmented profile, over the base measure."""
    z = profile[j]
    if z.lam < game.lambda_min:
        raise DomainError(f"lambda={z.lam} below lambda_min={game.lambda_min}")
    losses = game.loss_values(j, _actions_of(profile))
    return dual_value(game.divergence, game.rho, losses, game.base_scenarios.weights, z.lam, z.mu)


class DualSolution(NamedTuple):
    value: float
    lambda_star: float
    mu_star: float
    clamped: bool


def _optimal_mu(fam, losses, weights, lam):
    """Root of ``1 - sum_k w_k f*'((l_k - mu)/lam)``, nondecreasing in mu."""
    if fam is KL:
        return float(lam * logsumexp(losses / lam, b=weights))

    def g(mu):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            s = float(np.sum(weights * fam.conj_prime((losses - mu) / lam)))
        if not np.isfinite(s):
            return -1e300
        return 1.0 - s

    top = float(np.max(losses))
    bottom = float(np.min(losses))
    step = max(lam, 1e-12)
    hi = top + step
    while g(hi) <= 0:
        step *= 2.0
        hi = top + step
        if step > 1e300:
            raise ConsistencyError("could not bracket the normalization multiplier")
    step = max(lam, 1e-12)
    lo = bottom - step
    while g(lo) >= 0:
        step *= 2.0
        lo = bottom - step
        if step > 1e300:
            raise ConsistencyError("could not bracket the normalization multiplier")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def inner_dual(losses, weights, fam: FDivergence = KL, rho: float = 0.1,
               lambda_min: float = LAMBDA_MIN) -> DualSolution:
    """Minimize the dual objective over ``(lam, mu)`` for fixed losses.

    ``mu`` is profiled out (closed form for KL, 1-D root otherwise) and the
    remaining convex function of ``lam`` is minimized by golden section in
    ``log lam``.  The upper bracket doubles until the slope turns positive.
    ``clamped`` marks solutions pinned at ``lambda_min`` with positive slope,
    i.e. the divergence budget suffices to move all mass to the worst atoms.
    """
    losses = np.asarray(losses, dtype=float)
    weights = np.asarray(weights, dtype=float)
    keep = weights > 0
    losses, weights = losses[keep], weights[keep]
    if not rho > 0:
        raise DomainError(f"rho must be positive, got {rho}")

    spread = float(np.max(losses) - np.min(losses))
    if spread == 0.0:
        # constant loss: value c for every lam, infimum approached as lam -> 0
        c = float(losses[0])
        return DualSolution(c, lambda_min, c, True)

    def profiled(log_lam):
        lam = math.exp(log_lam)
        mu = _optimal_mu(fam, losses, weights, lam)
        return dual_value(fam, rho, losses, weights, lam, mu)

    def slope(log_lam, h=1e-6):
        return profiled(log_lam + h) - profiled(log_lam - h)

    lo = math.log(lambda_min)
    hi = math.log(max(spread, 1e-6))
    while slope(hi) <= 0 and hi < math.log(LAMBDA_CAP):
        hi += math.log(2.0)
    hi = min(hi, math.log(LAMBDA_CAP))
    log_lam, value = golden_section(profiled, lo, hi, tol=1e-12)
    lam = math.exp(log_lam)
    clamped = bool(log_lam - lo < 1e-6 and slope(lo) > 0)
    mu = _optimal_mu(fam, losses, weights, lam)
    if clamped and fam is KL:
        # the profiled KL objective tends to max(l) as lam -> 0
        value = min(value, float(np.max(losses)))
    return DualSolution(float(value), lam, float(mu), clamped)


def robust_value_dual(game: RobustGame, j: int, action_profile) -> DualSolution:
    """Worst-case expected loss of player j at a fixed action profile."""
    losses = game.loss_values(j, _actions_of(action_profile))
    return inner_dual(losses, game.base_scenarios.weights, game.divergence, game.rho, game.lambda_min)


def worst_case_distribution(game: RobustGame, j: int, action_profile) -> DiscreteMeasure:
    """Adversarial reweighting ``w_k L*_k`` recovered from the dual optimum.

    ``L*`` is the conjugate derivative at the optimal multipliers, which is
    the inverse of ``f'`` wherever that inverse is defined and the boundary
    likelihood (0) where it is not.
    """
    sol = robust_value_dual(game, j, action_profile)
    losses = game.loss_values(j, _actions_of(action_profile))
    return likelihood_measure(game.divergence, losses, game.base_scenarios, sol)


def likelihood_measure(fam, losses, base: DiscreteMeasure, sol: DualSolution) -> DiscreteMeasure:
    w = base.weights
    losses = np.asarray(losses, dtype=float)
    if np.ptp(losses[w > 0]) == 0:
        return DiscreteMeasure(base.support, w)
    xi = (losses - sol.mu_star) / sol.lambda_star
    with np.errstate(over="ignore"):
        lik = np.where(w > 0, fam.conj_prime(xi), 0.0)
    q = w * lik
    total = float(q.sum())
    if not abs(total - 1.0) <= 1e-6:
        raise ConsistencyError(f"recovered likelihood integrates to {total}, not 1")
    return DiscreteMeasure(base.support, q / total)


def variance_approximation(game: RobustGame, j: int, action_profile, rho_n: float) -> float:
    """``E_m[l_j] + sqrt(rho_n var_m[l_j])``, the small-radius robust value."""
    losses = game.loss_values(j, _actions_of(action_profile))
    return variance_approximation_from_losses(losses, game.base_scenarios.weights, rho_n)


def variance_approximation_from_losses(losses, weights, rho_n):
    losses = np.asarray(losses, dtype=float)
    weights = np.asarray(weights, dtype=float)
    mean = float(np.dot(weights, losses))
    var = float(np.dot(weights, (losses - mean) ** 2))
    return mean + math.sqrt(max(rho_n, 0.0) * var)


# ---------------------------------------------------------------------------
# equilibrium certificates
# ---------------------------------------------------------------------------


@dataclass
class EquilibriumCertificate:
    is_equilibrium: bool
    eta: float
    gaps: list
    values: list
    best_deviations: list
    grid_limited: bool

    @property
    def worst_player(self):
        return int(np.argmax(self.gaps))

    @property
    def worst_gap(self):
        return float(max(self.gaps))


def is_robust_equilibrium(game: RobustGame, action_profile, eta: float = 1e-6,
                          probe_grid: int = DEFAULT_PROBE_RESOLUTION, probes=None):
    """Check that no probed unilateral deviation lowers any robust value by more than eta.

    ``probes`` may give, per player, an array of candidate actions; otherwise
    each decision set is gridded at ``probe_grid`` points per axis (boxes up
    to dimension 2, simplices up to dimension 3).
    """
    actions = as_profile(_actions_of(action_profile))
    gaps, values, best = [], [], []
    grid_limited = probes is not None or probe_grid < DEFAULT_PROBE_RESOLUTION
    for j, dset in enumerate(game.decision_sets):
        if probes is not None:
            cand = np.atleast_2d(np.asarray(probes[j], dtype=float))
            if cand.shape[1] != dset.dim:
                cand = cand.reshape(-1, dset.dim)
        else:
            if (isinstance(dset, Box) and dset.dim > 2) or (isinstance(dset, Simplex) and dset.dim > 3):
                raise DomainError(f"player {j}: grid probing needs a box of dim <= 2; pass probes")
            cand = dset.grid(probe_grid)
        v = robust_value_dual(game, j, actions).value
        dev_best, dev_val = actions[j], v
        for a in cand:
            trial = list(actions)
            trial[j] = a
            val = robust_value_dual(game, j, tuple(trial)).value
            if val < dev_val:
                dev_best, dev_val = a, val
        gaps.append(max(v - dev_val, 0.0))
        values.append(v)
        best.append(np.array(dev_best))
    ok = all(g <= eta for g in gaps)
    return EquilibriumCertificate(ok, eta, gaps, values, best, grid_limited)


# ---------------------------------------------------------------------------
# mixed extension of finite games
# ---------------------------------------------------------------------------


def mixed_extension(matrix_losses, divergence="kl", rho=0.1, scenario_weights=None) -> RobustGame:
    """Lift a finite game to mixed strategies on simplices.

    ``matrix_losses[j]`` has one axis per player (scenario-independent) or a
    leading scenario axis of length ``len(scenario_weights)``.  Scenario
    points of the lifted game are the scenario indices.
    """
    fam = get_family(divergence) if isinstance(divergence, str) else divergence
    tensors = [np.asarray(t, dtype=float) for t in matrix_losses]
    n = len(tensors)
    if n < 2:
        raise DomainError("a game needs at least two players")
    n_scen = None if scenario_weights is None else len(scenario_weights)
    shapes = []
    for j, t in enumerate(tensors):
        if t.ndim == n:
            shapes.append(t.shape)
        elif t.ndim == n + 1 and n_scen is not None and t.shape[0] == n_scen:
            shapes.append(t.shape[1:])
        else:
            raise StructuralError(f"player {j}: tensor of shape {t.shape} does not match {n} players")
    if any(s != shapes[0] for s in shapes):
        raise StructuralError(f"action counts disagree across players: {shapes}")
    counts = shapes[0]
    if n_scen is None:
        n_scen = 1
        weights = np.ones(1)
    else:
        weights = np.asarray(scenario_weights, dtype=float)
    stacked = [t if t.ndim == n + 1 else np.broadcast_to(t, (n_scen,) + counts) for t in tensors]
    letters = "abcdefghijklmnopqrstuvwxyz"[:n]

    def make_loss(j):
        tensor = stacked[j]

        def loss(actions, omegas):
            idx = np.asarray(omegas, dtype=float).reshape(len(omegas), -1)[:, 0].astype(int)
            expr = "s" + letters + "," + ",".join(letters) + "->s"
            return np.einsum(expr, tensor[idx], *actions)

        def grad(actions, omegas):
            idx = np.asarray(omegas, dtype=float).reshape(len(omegas), -1)[:, 0].astype(int)
            others = [a for i, a in enumerate(actions) if i != j]
            expr = "s" + letters + "," + ",".join(letters[i] for i in range(n) if i != j) + "->s" + letters[j]
            return np.einsum(expr, tensor[idx], *others)

        return loss, grad

    pairs = [make_loss(j) for j in range(n)]
    return RobustGame(
        decision_sets=tuple(Simplex(c) for c in counts),
        losses=tuple(p[0] for p in pairs),
        loss_grads=tuple(p[1] for p in pairs),
        divergence=fam,
        rho=rho,
        base_scenarios=ScenarioSet(np.arange(n_scen, dtype=float)[:, None], weights),
        name="mixed_extension",
    )


# ---------------------------------------------------------------------------
# built-in games
# ---------------------------------------------------------------------------


def _normal_scenarios(n, dim, seed):
    rng = np.random.default_rng(seed)
    return ScenarioSet.empirical(rng.standard_normal((n, dim)))


def log_quadratic_game(rho=0.1, scenarios: Optional[ScenarioSet] = None, n_scenarios=1000,
                       seed=0, bound=10.0, divergence="kl") -> RobustGame:
    """Two players sharing ``l(a, w) = log(1 + w1^2 a1^2 + w2^2 a2^2)``.

    Every scenario's loss is minimized at ``a = 0``, which is therefore the
    robust equilibrium.  The box ``[-bound, bound]`` only serves projection
    and grid probing.
    """
    if scenarios is None:
        scenarios = _normal_scenarios(n_scenarios, 2, seed)

    def loss(actions, omegas):
        a1, a2 = actions[0][0], actions[1][0]
        return np.log1p(omegas[:, 0] ** 2 * a1 ** 2 + omegas[:, 1] ** 2 * a2 ** 2)

    def make_grad(j):
        def grad(actions, omegas):
            a1, a2 = actions[0][0], actions[1][0]
            inner = 1.0 + omegas[:, 0] ** 2 * a1 ** 2 + omegas[:, 1] ** 2 * a2 ** 2
            return (2.0 * omegas[:, j] ** 2 * actions[j][0] / inner)[:, None]
        return grad

    box = Box([-bound], [bound])
    return RobustGame(
        decision_sets=(box, box),
        losses=(loss, loss),
        loss_grads=(make_grad(0), make_grad(1)),
        divergence=get_family(divergence),
        rho=rho,
        base_scenarios=scenarios,
        name="log_quadratic",
        reference_profile=(np.zeros(1), np.zeros(1)),
    )


def multimodal_term(a1, a2):
    """``sin(a1) sin(a2) sqrt(a1 a2)``, the action-dependent part of the multimodal loss."""
    return np.sin(a1) * np.sin(a2) * np.sqrt(np.maximum(a1 * a2, 0.0))


def _h(x):
    return np.sin(x) * np.sqrt(np.maximum(x, 0.0))


def _h_prime(x):
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.maximum(x, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = np.where(x > 0, np.sin(x) / (2.0 * np.where(x > 0, r, 1.0)), 0.0)
    return np.cos(x) * r + tail


def multimodal_game(rho=0.1, scenarios: Optional[ScenarioSet] = None, n_scenarios=1000,
                    seed=0, divergence="kl") -> RobustGame:
    """Two players sharing ``log(20 + w^2 - sin(a1) sin(a2) sqrt(a1 a2))`` on ``[0, 10]^2``."""
    if scenarios is None:
        scenarios = _normal_scenarios(n_scenarios, 1, seed)

    def loss(actions, omegas):
        s = multimodal_term(actions[0][0], actions[1][0])
        return np.log(20.0 + omegas[:, 0] ** 2 - s)

    def make_grad(j):
        def grad(actions, omegas):
            a = (actions[0][0], actions[1][0])
            s = multimodal_term(*a)
            ds = _h_prime(a[j]) * _h(a[1 - j])
            return (-ds / (20.0 + omegas[:, 0] ** 2 - s))[:, None]
        return grad

    box = Box([0.0], [10.0])
    return RobustGame(
        decision_sets=(box, box),
        losses=(loss, loss),
        loss_grads=(make_grad(0), make_grad(1)),
        divergence=get_family(divergence),
        rho=rho,
        base_scenarios=scenarios,
        name="multimodal",
    )


GAMES = {
    "log_quadratic": log_quadratic_game,
    "multimodal": multimodal_game,
}
