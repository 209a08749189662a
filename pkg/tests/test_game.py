import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from drgame.divergence import KL, divergence_from_weights
from drgame.errors import ConsistencyError, DomainError, StructuralError
from drgame.game import (
    AugmentedDecision,
    Box,
    DualSolution,
    RobustGame,
    ScenarioSet,
    Simplex,
    dual_objective,
    inner_dual,
    is_robust_equilibrium,
    likelihood_measure,
    log_quadratic_game,
    mixed_extension,
    multimodal_game,
    project_simplex,
    robust_value_dual,
    variance_approximation,
    variance_approximation_from_losses,
    worst_case_distribution,
)
from drgame.oracle import primal_inner_sup

# min over lam of 0.1 lam + lam log((1 + e^{1/lam} + e^{2/lam}) / 3), solved with mpmath
ROBUST_012 = 1.36052315533498750
LAMBDA_012 = 1.75573508014594423
# 1 + sqrt(0.01 * 2/3)
VARIANCE_012 = 1.08164965809277260


def finite_game(losses, weights=None, rho=0.1):
    """Two-player game whose player-0 loss ignores actions: one atom per loss value."""
    losses = np.asarray(losses, dtype=float)
    scen = ScenarioSet(np.arange(losses.size, dtype=float)[:, None], weights)

    def loss(actions, omegas):
        return losses[omegas[:, 0].astype(int)]

    box = Box([0.0], [1.0])
    return RobustGame((box, box), (loss, loss), KL, rho, scen)


losses_st = st.lists(st.floats(min_value=-3, max_value=3), min_size=2, max_size=6).map(np.array)


def test_dual_objective_matches_log_quadratic_closed_form():
    game = log_quadratic_game(n_scenarios=50, seed=3)
    a1, a2, lam, mu = 0.7, -0.4, 0.8, 0.3
    prof = [AugmentedDecision([a1], lam, mu), AugmentedDecision([a2], 1.0, 0.0)]
    w = game.base_scenarios.points
    base = 1 + w[:, 0] ** 2 * a1 ** 2 + w[:, 1] ** 2 * a2 ** 2
    expected = lam * (0.1 - 1) + mu + lam * np.mean(base ** (1 / lam) * math.exp(-mu / lam))
    assert dual_objective(game, 0, prof) == pytest.approx(expected, rel=1e-12)


def test_dual_objective_constant_loss_and_single_scenario():
    game = finite_game([2.5, 2.5, 2.5])
    for lam in [0.01, 1.0, 5.0]:
        prof = [AugmentedDecision([0.0], lam, 2.5), AugmentedDecision([0.0], 1.0, 0.0)]
        assert dual_objective(game, 0, prof) == pytest.approx(lam * 0.1 + 2.5, rel=1e-12)
    single = finite_game([1.7])
    prof = [AugmentedDecision([0.0], 0.5, 1.7), AugmentedDecision([0.0], 1.0, 0.0)]
    assert dual_objective(single, 0, prof) == pytest.approx(0.5 * (0.1 - 1) + 1.7 + 0.5, rel=1e-12)


def test_dual_objective_rejects_small_lambda():
    game = finite_game([0.0, 1.0])
    with pytest.raises(DomainError):
        dual_objective(game, 0, [AugmentedDecision([0.0], 1e-9, 0.0), AugmentedDecision([0.0], 1.0, 0.0)])


def test_robust_value_three_atoms():
    sol = robust_value_dual(finite_game([0.0, 1.0, 2.0]), 0, ([0.0], [0.0]))
    assert sol.value == pytest.approx(ROBUST_012, abs=1e-9)
    assert sol.lambda_star == pytest.approx(LAMBDA_012, rel=1e-5)
    assert not sol.clamped
    primal = primal_inner_sup([0.0, 1.0, 2.0], np.full(3, 1 / 3), KL, 0.1)
    assert sol.value == pytest.approx(primal.value, abs=1e-4)


def test_robust_value_large_budget_and_constant_loss():
    sol = inner_dual([0.3, -1.0, 2.2, 0.5], np.full(4, 0.25), KL, 1e3)
    assert sol.value == pytest.approx(2.2, abs=1e-3)
    for rho in [0.01, 1.0, 100.0]:
        assert inner_dual([4.0, 4.0, 4.0], np.full(3, 1 / 3), KL, rho).value == pytest.approx(4.0, abs=1e-6)


def test_clamped_flag_when_budget_covers_point_mass():
    # KL ball of radius log 4 around uniform on 4 atoms contains the point mass
    sol = inner_dual([0.0, 1.0, 2.0, 3.0], np.full(4, 0.25), KL, 2.0)
    assert sol.clamped
    assert sol.value == pytest.approx(3.0, abs=1e-6)


@given(losses=losses_st, rho=st.floats(min_value=0.01, max_value=2.0))
def test_value_sandwich(losses, rho):
    w = np.full(losses.size, 1 / losses.size)
    v = inner_dual(losses, w, KL, rho).value
    assert losses.mean() - 1e-9 <= v <= losses.max() + 1e-9


@given(losses=losses_st)
def test_value_monotone_in_budget(losses):
    w = np.full(losses.size, 1 / losses.size)
    vals = [inner_dual(losses, w, KL, rho).value for rho in (0.01, 0.05, 0.2, 0.5, 1.0)]
    assert all(b >= a - 1e-8 for a, b in zip(vals, vals[1:]))


def test_worst_case_distribution_three_atoms():
    game = finite_game([0.0, 1.0, 2.0])
    wc = worst_case_distribution(game, 0, ([0.0], [0.0]))
    assert wc.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert wc.weights[2] > wc.weights[1] > wc.weights[0]
    assert divergence_from_weights(KL, wc.weights, np.full(3, 1 / 3)) == pytest.approx(0.1, abs=1e-4)
    oracle = primal_inner_sup([0.0, 1.0, 2.0], np.full(3, 1 / 3), KL, 0.1)
    assert np.allclose(wc.weights, oracle.weights, atol=1e-3)


def test_worst_case_distribution_constant_loss_is_base():
    game = finite_game([1.0, 1.0, 1.0], weights=[0.2, 0.3, 0.5])
    assert np.allclose(worst_case_distribution(game, 0, ([0.0], [0.0])).weights, [0.2, 0.3, 0.5])


def test_inconsistent_multipliers_raise():
    base = ScenarioSet(np.arange(3.0)[:, None])
    bad = DualSolution(1.0, 1.0, -5.0, False)
    with pytest.raises(ConsistencyError):
        likelihood_measure(KL, [0.0, 1.0, 2.0], base, bad)


def test_variance_approximation_examples():
    assert variance_approximation_from_losses([0.0, 1.0, 2.0], np.full(3, 1 / 3), 0.01) == pytest.approx(
        VARIANCE_012, abs=1e-14)
    assert variance_approximation(finite_game([3.0, 3.0]), 0, ([0.0], [0.0]), 0.5) == pytest.approx(3.0)


def test_variance_approximation_gap_shrinks(rng):
    for _ in range(5):
        losses = rng.normal(size=5)
        w = np.full(5, 0.2)
        gaps = [abs(inner_dual(losses, w, KL, r).value - variance_approximation_from_losses(losses, w, r))
                for r in (1e-2, 1e-3, 1e-4)]
        assert gaps[0] > gaps[1] > gaps[2]


def test_log_quadratic_equilibrium_certificate():
    game = log_quadratic_game(n_scenarios=200)
    cert = is_robust_equilibrium(game, ([0.0], [0.0]), eta=1e-6)
    assert cert.is_equilibrium and not cert.grid_limited
    off = is_robust_equilibrium(game, ([1.0], [0.0]), eta=1e-6, probe_grid=41)
    assert not off.is_equilibrium and off.worst_player == 0 and off.grid_limited


def test_multimodal_equilibrium_certificate():
    game = multimodal_game(n_scenarios=200)
    cert = is_robust_equilibrium(game, ([7.917], [7.917]), eta=1e-2)
    assert cert.is_equilibrium


def test_mixed_extension_matching_pennies():
    pennies = np.array([[1.0, -1.0], [-1.0, 1.0]])
    game = mixed_extension([pennies, -pennies])
    half = (np.array([0.5, 0.5]), np.array([0.5, 0.5]))
    assert is_robust_equilibrium(game, half, eta=1e-9, probe_grid=21).is_equilibrium
    pure = (np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    assert not is_robust_equilibrium(game, pure, eta=1e-3, probe_grid=21).is_equilibrium


def test_mixed_extension_trivial_and_mismatch():
    game = mixed_extension([np.array([[2.0]]), np.array([[3.0]])])
    assert game.decision_sets[0].dim == 1
    assert robust_value_dual(game, 1, (np.ones(1), np.ones(1))).value == pytest.approx(3.0, abs=1e-6)
    with pytest.raises(StructuralError):
        mixed_extension([np.zeros((2, 2)), np.zeros((3, 2))])
    with pytest.raises(StructuralError):
        mixed_extension([np.zeros((2, 2, 2)), np.zeros((2, 2))])


def test_mixed_extension_with_scenario_noise():
    nominal = np.array([[0.0, 1.0], [1.0, 0.5]])
    noisy = np.stack([nominal, nominal, nominal])
    noisy[:, 1, 1] = [0.5, -0.5, 1.5]
    game = mixed_extension([noisy, -noisy], scenario_weights=[0.4, 0.3, 0.3])
    prof = (np.array([0.3, 0.7]), np.array([0.2, 0.8]))
    losses = game.loss_values(0, prof)
    robust = robust_value_dual(game, 0, prof).value
    assert robust >= float(game.base_scenarios.weights @ losses) - 1e-12
    assert robust == pytest.approx(primal_inner_sup(losses, [0.4, 0.3, 0.3], KL, 0.1).value, abs=1e-4)


def test_game_validation():
    box = Box([0.0], [1.0])
    scen = ScenarioSet([[0.0]])
    loss = lambda a, w: np.zeros(len(w))
    with pytest.raises(DomainError):
        RobustGame((box,), (loss,), KL, 0.1, scen)
    with pytest.raises(DomainError):
        RobustGame((box, box), (loss, loss), KL, 0.0, scen)
    with pytest.raises(StructuralError):
        RobustGame((box, box), (loss,), KL, 0.1, scen)
    with pytest.raises(DomainError):
        Box([1.0], [0.0])


def test_finite_difference_gradient_fallback():
    game = log_quadratic_game(n_scenarios=20)
    plain = RobustGame(game.decision_sets, game.losses, KL, 0.1, game.base_scenarios)
    acts = ([0.8], [-0.3])
    assert np.allclose(plain.loss_gradient(0, acts), game.loss_gradient(0, acts), atol=1e-7)


@given(st.lists(st.floats(min_value=-5, max_value=5), min_size=1, max_size=6))
def test_simplex_projection(y):
    p = project_simplex(np.array(y))
    assert Simplex(len(y)).contains(p)
