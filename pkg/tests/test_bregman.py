import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from drgame.bregman import (
    BregmanState,
    Generator,
    SmoothObjective,
    TimeScaling,
    block_generator,
    bregman_divergence,
    bregman_step,
    constant_scaling,
    convergence_bound,
    ideal_scaling,
    implicit_bregman_step,
    integrate,
    lyapunov,
    mirror_point,
    neg_entropy,
    sq_euclidean,
    time_to_precision,
)
from drgame.errors import DomainError, IntegrationError

KL_THREE_QUARTERS = 0.130812035941136959
# exp(-e^2), mpmath at 30 digits
EXP_NEG_E2 = 6.17978989331093499e-4


def cosh_generator():
    return Generator(
        name="cosh",
        g=lambda x: float(np.sum(np.cosh(x))),
        grad_g=np.sinh,
        grad_g_inverse=np.arcsinh,
        hess_g=lambda x: np.diag(np.cosh(x)),
        hess_g_inv_apply=lambda x, v: np.asarray(v) / np.cosh(x),
    )


def quadratic(h=1.0):
    return SmoothObjective(lambda z: 0.5 * h * float(z @ z), lambda z: h * np.asarray(z, dtype=float),
                           lambda z: h * np.eye(np.size(z)))


points2 = st.lists(st.floats(min_value=-3, max_value=3), min_size=2, max_size=2).map(np.array)
simplex3 = st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=3, max_size=3).map(
    lambda v: np.array(v) / sum(v))


def test_divergence_examples():
    assert bregman_divergence(sq_euclidean(), [1.0, 1.0], [0.0, 0.0]) == pytest.approx(1.0)
    for gen, x in [(sq_euclidean(), np.array([0.3, -2.0])), (neg_entropy(), np.array([0.2, 0.8]))]:
        assert bregman_divergence(gen, x, x) == pytest.approx(0.0, abs=1e-15)
    d = bregman_divergence(neg_entropy(), [0.75, 0.25], [0.5, 0.5])
    assert d == pytest.approx(KL_THREE_QUARTERS, abs=1e-14)


def test_entropy_divergence_rejects_boundary_base():
    with pytest.raises(DomainError):
        bregman_divergence(neg_entropy(), [0.5, 0.5], [1.0, 0.0])


@given(x=points2, y=points2)
def test_generators_strictly_monotone_gradient(x, y):
    for gen in (sq_euclidean(), cosh_generator()):
        if np.allclose(x, y):
            continue
        assert float(np.dot(gen.grad_g(y) - gen.grad_g(x), y - x)) > 0


@given(x=simplex3, y=simplex3)
def test_entropy_generator_invariants(x, y):
    gen = neg_entropy()
    assert np.allclose(gen.grad_g_inverse(gen.grad_g(x)), x, atol=1e-10)
    if not np.allclose(x, y):
        assert float(np.dot(gen.grad_g(y) - gen.grad_g(x), y - x)) > 0
    assert bregman_divergence(gen, y, x) >= 0


@given(x=points2)
def test_mirror_round_trip(x):
    for gen in (sq_euclidean(), cosh_generator()):
        assert np.allclose(gen.grad_g_inverse(gen.grad_g(x)), x, atol=1e-10)


@pytest.mark.parametrize("scaling", [
    ideal_scaling(0.0), ideal_scaling(1.0), constant_scaling(0.5, 0.2),
    TimeScaling.from_alpha(lambda t: math.log1p(t), lambda t: 1.0 / (1.0 + t), beta0=0.3),
], ids=["ideal0", "ideal1", "constant", "log"])
def test_scaling_beta_rate(scaling):
    for t in [0.0, 0.5, 1.3, 2.0]:
        h = 1e-5
        rate = (scaling.beta(t + h) - scaling.beta(t - h)) / (2 * h)
        assert rate == pytest.approx(math.exp(scaling.alpha(t)), rel=1e-8, abs=1e-8)
    assert scaling.beta(0.0) == pytest.approx(scaling.beta0)


def test_convergence_bound_examples():
    assert convergence_bound(ideal_scaling(1.0), 1.0, 2.0) == pytest.approx(EXP_NEG_E2, rel=1e-12)
    assert convergence_bound(ideal_scaling(0.0), 3.5, 0.0) == 3.5
    with pytest.raises(DomainError):
        convergence_bound(ideal_scaling(), -1.0, 1.0)


@pytest.mark.parametrize("c0,eta", [(1.0, 1e-3), (50.0, 1e-8), (2.0, 0.5)])
def test_time_to_precision_log_log(c0, eta):
    t = time_to_precision(ideal_scaling(1.0), c0, eta)
    assert t == pytest.approx(math.log(math.log(c0 / eta)), abs=1e-9)


def test_zero_gradient_is_stationary():
    state = BregmanState(0.0, np.array([0.4, -1.2]), np.zeros(2))
    for _ in range(20):
        state = bregman_step(sq_euclidean(), ideal_scaling(), state, lambda z: np.zeros_like(z), 0.01)
    assert np.array_equal(state.z, [0.4, -1.2])
    assert np.allclose(state.u, 0.0)


def test_single_step_consistency_order():
    moves = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        s = bregman_step(sq_euclidean(), ideal_scaling(), BregmanState(0.0, np.ones(1), np.zeros(1)),
                         lambda z: z, dt)
        moves.append(abs(s.z[0] - 1.0))
    assert moves[0] / moves[1] == pytest.approx(4.0, rel=0.05)
    assert moves[1] / moves[2] == pytest.approx(4.0, rel=0.05)


def _second_order_reference(gen, scaling, grad, t0, z0, u0, dt):
    """Integrate zddot = -(e^a - a') zdot - e^{2a+b} H_g(y)^{-1} grad_l(z) to tight tolerance."""
    d = z0.size

    def rhs(t, s):
        z, zd = s[:d], s[d:]
        a = scaling.alpha(t)
        y = z + math.exp(-a) * zd
        acc = -(math.exp(a) - scaling.alpha_dot(t)) * zd
        acc -= math.exp(2 * a + scaling.beta(t)) * gen.hess_g_inv_apply(y, grad(z))
        return np.concatenate([zd, acc])

    sol = solve_ivp(rhs, (t0, t0 + dt), np.concatenate([z0, u0]), method="DOP853", rtol=1e-13, atol=1e-15)
    return sol.y[:d, -1], sol.y[d:, -1]


@settings(max_examples=10)
@given(seed=st.integers(0, 10_000))
def test_euler_lagrange_consistency(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.5, 2.0, 2)
    c = rng.uniform(-0.5, 0.5)
    grad = lambda z: np.array([a * z[0] + c * z[1] + 0.3 * math.sin(z[0]), b * z[1] + c * z[0]])
    z0 = rng.uniform(-1, 1, 2)
    u0 = rng.uniform(-0.5, 0.5, 2)
    t0 = rng.uniform(0.0, 0.5)
    for gen in (sq_euclidean(), cosh_generator()):
        scaling = ideal_scaling(0.0)
        errs = []
        for dt in (0.02, 0.01):
            st_ = bregman_step(gen, scaling, BregmanState(t0, z0, u0), grad, dt)
            z_ref, u_ref = _second_order_reference(gen, scaling, grad, t0, z0, u0, dt)
            errs.append(np.max(np.abs(np.concatenate([st_.z - z_ref, st_.u - u_ref]))))
        order = math.log2(errs[0] / errs[1])
        assert order >= 3.5, (errs, order)


def test_rk4_quadratic_bound_and_lyapunov():
    dt = 1e-3
    tr = integrate(sq_euclidean(), ideal_scaling(), quadratic(), [1.0], horizon=2.0, dt=dt,
                   method="rk4", z_star=np.zeros(1))
    t, _, _, err, lyap, bound = tr.arrays()
    assert np.all(err <= bound * (1 + 1e-3))
    assert np.all(np.diff(lyap) <= 1e-6 * dt)


def test_implicit_quadratic_bound_and_decay():
    dt = 1e-2
    tr = integrate(sq_euclidean(), ideal_scaling(), quadratic(), [1.0], horizon=5.0, dt=dt, z_star=np.zeros(1))
    t, _, _, err, lyap, bound = tr.arrays()
    assert np.all(np.diff(t) > 0) and np.all(bound >= 0)
    assert np.all(err <= bound * (1 + 1e-3))
    assert np.all(np.diff(lyap) <= 1e-6 * dt)
    assert err[np.argmin(np.abs(t - 3.0))] < 1e-8


@settings(max_examples=20)
@given(h=st.lists(st.floats(min_value=0.1, max_value=5.0), min_size=2, max_size=2),
       z0=points2, shift=points2)
def test_implicit_lyapunov_monotone_on_convex(h, z0, shift):
    H = np.diag(h)
    obj = SmoothObjective(lambda z: 0.5 * float((z - shift) @ H @ (z - shift)), lambda z: H @ (z - shift),
                          lambda z: H)
    dt = 0.02
    tr = integrate(sq_euclidean(), ideal_scaling(), obj, z0, horizon=3.0, dt=dt, z_star=shift)
    _, _, _, err, lyap, bound = tr.arrays()
    assert np.all(np.diff(lyap) <= 1e-6 * dt + 1e-12 * np.abs(lyap[:-1]))
    assert np.all(err <= bound * (1 + 1e-3) + 1e-15)


def test_implicit_respects_box():
    obj = SmoothObjective(lambda z: float(z[0]), lambda z: np.ones(1), lambda z: np.zeros((1, 1)))
    tr = integrate(sq_euclidean(), ideal_scaling(), obj, [0.5], horizon=2.0, dt=0.01, lower=[0.0], upper=[1.0])
    z = np.array(tr.z)
    assert np.all(z >= 0.0) and z[-1, 0] == pytest.approx(0.0, abs=1e-12)


def test_lyapunov_zero_at_optimum_and_initial_value():
    gen, sc = sq_euclidean(), ideal_scaling(0.0)
    obj = quadratic()
    assert lyapunov(gen, sc, BregmanState(0.0, np.zeros(1), np.zeros(1)), np.zeros(1), obj.value) == 0.0
    z0, u0 = np.array([1.5]), np.array([0.4])
    v = lyapunov(gen, sc, BregmanState(0.0, z0, u0), np.zeros(1), obj.value)
    y = z0 + u0
    assert v == pytest.approx(0.5 * float(y @ y) + math.exp(0.0) * 0.5 * 1.5 ** 2)


def test_entropy_trajectory_stays_in_open_simplex():
    gen = neg_entropy()
    c = np.array([1.0, 0.2, -0.5])
    state = BregmanState(0.0, np.array([0.5, 0.3, 0.2]), np.zeros(3))
    # t = 1: later the losing coordinates underflow double-exponentially
    for _ in range(200):
        state = bregman_step(gen, ideal_scaling(), state, lambda z: c, 5e-3)
        assert np.all(state.z > 0) and state.z.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.argmax(state.z) == 2


def test_block_generator_combines():
    gen = block_generator([(neg_entropy(), 2), (sq_euclidean(), 2)])
    x = np.array([0.3, 0.7, 1.0, -2.0])
    assert np.allclose(gen.grad_g_inverse(gen.grad_g(x)), x)
    assert gen.simplex
    y = np.array([0.6, 0.4, 0.0, 0.0])
    expected = bregman_divergence(neg_entropy(), y[:2], x[:2]) + bregman_divergence(sq_euclidean(), y[2:], x[2:])
    assert bregman_divergence(gen, y, x) == pytest.approx(expected)


def test_failure_modes():
    with pytest.raises(DomainError):
        integrate(sq_euclidean(), ideal_scaling(), quadratic(), [1.0], horizon=6.5)
    with pytest.raises(DomainError):
        implicit_bregman_step(neg_entropy(), ideal_scaling(), BregmanState(0.0, np.full(2, 0.5), np.zeros(2)),
                              quadratic(), 0.01)
    with pytest.raises(IntegrationError) as info:
        state = BregmanState(0.0, np.ones(1), np.zeros(1))
        for _ in range(10_000):
            state = bregman_step(sq_euclidean(), ideal_scaling(), state, lambda z: z, 0.05)
    assert info.value.last_state is not None
    with pytest.raises(DomainError):
        bregman_step(sq_euclidean(), ideal_scaling(), BregmanState(0.0, np.ones(1), np.zeros(1)), lambda z: z, 0.0)


def test_mirror_point():
    s = BregmanState(1.0, np.array([2.0]), np.array([math.e]))
    assert mirror_point(sq_euclidean(), ideal_scaling(), s)[0] == pytest.approx(3.0)
