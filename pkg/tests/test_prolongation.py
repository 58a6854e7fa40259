import numpy as np
import pytest

from varlag.dynamics import IntegratorSpec, integrate
from varlag.identities import random_extended_state, relative_difference
from varlag.models import BUILTINS, LagrangianModel, builtin
from varlag.prolongation import (
    DegeneracyError,
    ExtendedState,
    el_accel,
    el_accel_on_gamma,
    eval_gamma,
    gamma_derivative_identities,
    hessian_w,
    homogeneity_residual,
    linearize_accel_oracle,
    prolong,
    total_derivative_identity,
    total_derivative_series,
    variational_accel,
    variational_matrices,
)

AUTONOMOUS = sorted(name for name, spec in BUILTINS.items() if not spec.time_dependent)


def S(q, qdot, eps, epsdot, t=0.0):
    return ExtendedState(t, q, qdot, eps, epsdot)


# ExtendedState ---------------------------------------------------------------


def test_extended_state_validates():
    with pytest.raises(ValueError):
        S([1.0, 2.0], [0.0], [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        S([np.nan], [0.0], [0.0], [0.0])
    s = S([1.0], [2.0], [3.0], [4.0], 0.5)
    assert ExtendedState.from_vector(0.5, s.vector()) == s
    with pytest.raises(ValueError):
        s.q[0] = 2.0


# gamma -----------------------------------------------------------------------


def test_gamma_examples():
    ho = builtin("harmonic_oscillator")
    assert eval_gamma(ho, S([1.0], [0.0], [0.5], [0.25])) == -0.5
    assert eval_gamma(builtin("free_particle"), S([0.0], [2.0], [0.0], [3.0])) == 6.0
    for name in BUILTINS:
        model = builtin(name)
        n = model.dimension
        assert eval_gamma(model, S([0.9] * n, [0.3] * n, [0.0] * n, [0.0] * n, 1.0)) == 0.0


def test_prolonged_model_has_doubled_dimension():
    gamma = prolong(builtin("kepler_polar"))
    assert gamma.dimension == 4
    s = S([1.2, 0.3], [0.1, 0.8], [0.2, -0.1], [0.3, 0.05])
    assert gamma([*s.q, *s.eps], [*s.qdot, *s.epsdot], 0.0) == pytest.approx(
        eval_gamma(builtin("kepler_polar"), s), rel=1e-15)


def test_derivative_identities_examples():
    rng = np.random.default_rng(3)
    ho = builtin("harmonic_oscillator")
    r = gamma_derivative_identities(ho, random_extended_state(ho, rng))
    assert max(r) <= 1e-14
    for name in ("double_pendulum", "driven_oscillator"):
        model = builtin(name)
        assert max(gamma_derivative_identities(model, random_extended_state(model, rng))) < 1e-12


def test_homogeneity_examples():
    rng = np.random.default_rng(4)
    ho = builtin("harmonic_oscillator")
    assert homogeneity_residual(ho, S([1.0], [0.4], [0.0], [0.0])) == 0.0
    assert homogeneity_residual(ho, random_extended_state(ho, rng)) < 1e-13
    model = builtin("double_pendulum")
    s = random_extended_state(model, rng)
    scaled = S(s.q, s.qdot, 2.5 * s.eps, 2.5 * s.epsdot, s.t)
    assert eval_gamma(model, scaled) == pytest.approx(2.5 * eval_gamma(model, s), rel=1e-12)


# accelerations and matrices ------------------------------------------------


def test_el_accel_examples():
    assert el_accel(builtin("harmonic_oscillator"), [1.0], [0.0])[0] == -1.0
    assert el_accel(builtin("free_particle"), [3.0], [2.0])[0] == 0.0
    assert el_accel(builtin("pendulum"), [np.pi / 2], [0.0])[0] == pytest.approx(-1.0, abs=1e-15)


def test_el_accel_driven_oscillator_uses_time():
    m = builtin("driven_oscillator", A=2.0, omega=3.0)
    assert el_accel(m, [0.5], [0.1], 0.4)[0] == pytest.approx(-0.5 + 2 * np.cos(1.2), rel=1e-14)


def test_degenerate_mass_matrix_raises_with_condition():
    flat = LagrangianModel("no_kinetic", 1, lambda q, qd, t: -0.5 * q[0] * q[0])
    with pytest.raises(DegeneracyError) as info:
        el_accel(flat, [1.0], [0.0])
    assert info.value.condition >= 1e12
    kepler = builtin("kepler_polar")
    with pytest.raises(DegeneracyError):
        el_accel(kepler, [1e-7, 0.0], [0.0, 0.0])


def test_matrices_harmonic_oscillator():
    m = variational_matrices(builtin("harmonic_oscillator"), [0.3], [0.7], [-0.3])
    np.testing.assert_array_equal(m.M, [[1.0]])
    np.testing.assert_array_equal(m.C, [[0.0]])
    np.testing.assert_array_equal(m.K, [[1.0]])


def test_matrices_free_particle():
    m = variational_matrices(builtin("free_particle", m=2.5), [0.3], [0.7], [0.0])
    np.testing.assert_array_equal(m.M, [[2.5]])
    np.testing.assert_array_equal(m.C, [[0.0]])
    np.testing.assert_array_equal(m.K, [[0.0]])


def test_matrices_kepler_by_hand():
    # r=1, rdot=0, thetadot=1: the radial equation has r thetadot^2 - mu/r^2 = 0
    model = builtin("kepler_polar")
    q, qdot = [1.0, 0.0], [0.0, 1.0]
    qddot = el_accel(model, q, qdot)
    np.testing.assert_allclose(qddot, [0.0, 0.0], atol=1e-15)
    m = variational_matrices(model, q, qdot, qddot)
    np.testing.assert_array_equal(m.M, np.eye(2))
    # B = d2L/dqdot dq = [[0, 0], [2 r thetadot, 0]]
    np.testing.assert_allclose(m.C, [[0.0, -2.0], [2.0, 0.0]], atol=1e-15)
    # K = dB/dt - Lqq with Lqq = [[thetadot^2 - 2 mu / r^3, 0], [0, 0]]
    np.testing.assert_allclose(m.K, [[-3.0, 0.0], [0.0, 0.0]], atol=1e-15)


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_matrix_structure(name):
    """M symmetric; the antisymmetric part of C is twice that of B."""
    model = builtin(name)
    n = model.dimension
    rng = np.random.default_rng(8)
    from varlag.derivtower import hessian

    for _ in range(20):
        s = random_extended_state(model, rng)
        qdd = el_accel(model, s.q, s.qdot, s.t)
        m = variational_matrices(model, s.q, s.qdot, qdd, s.t)
        assert np.max(np.abs(m.M - m.M.T)) < 1e-12
        H = hessian(lambda x: model(x[:n], x[n:2 * n], x[2 * n]), [*s.q, *s.qdot, s.t])
        B = H[n:2 * n, :n]
        np.testing.assert_allclose((m.C - m.C.T) / 2, B - B.T, atol=1e-12)


def test_variational_accel_examples():
    ho = builtin("harmonic_oscillator")
    m = variational_matrices(ho, [1.0], [0.0], [-1.0])
    assert variational_accel(m, [1.0], [0.0])[0] == -1.0
    assert variational_accel(m, [0.0], [0.0])[0] == 0.0
    fp = builtin("free_particle")
    mf = variational_matrices(fp, [1.0], [2.0], [0.0])
    assert variational_accel(mf, [0.3], [-0.7])[0] == 0.0


def test_linearization_oracle_examples():
    Jq, Jv = linearize_accel_oracle(builtin("harmonic_oscillator"), [0.4], [0.2])
    np.testing.assert_array_equal(Jq, [[-1.0]])
    np.testing.assert_array_equal(Jv, [[0.0]])
    Jq, Jv = linearize_accel_oracle(builtin("pendulum", g=9.81, l=2.0), [0.0], [0.0])
    np.testing.assert_allclose(Jq, [[-9.81 / 2.0]], rtol=1e-15)
    np.testing.assert_array_equal(Jv, [[0.0]])


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_linearization_oracle_agrees_with_matrices(name):
    model = builtin(name)
    rng = np.random.default_rng(9)
    for _ in range(20):
        s = random_extended_state(model, rng)
        qdd = el_accel(model, s.q, s.qdot, s.t)
        epsdd = variational_accel(variational_matrices(model, s.q, s.qdot, qdd, s.t), s.eps, s.epsdot)
        Jq, Jv = linearize_accel_oracle(model, s.q, s.qdot, s.t)
        assert relative_difference(epsdd, Jq @ s.eps + Jv @ s.epsdot) < 1e-8


# Euler-Lagrange equations of gamma ---------------------------------------------


def test_el_on_gamma_examples():
    ho = builtin("harmonic_oscillator")
    qdd, epsdd = el_accel_on_gamma(ho, S([1.0], [0.0], [1.0], [0.0]))
    assert (qdd[0], epsdd[0]) == (-1.0, -1.0)
    dp = builtin("double_pendulum")
    s = S([0.3, -0.2], [0.1, 0.4], [0.0, 0.0], [0.0, 0.0])
    qdd, epsdd = el_accel_on_gamma(dp, s)
    np.testing.assert_array_equal(epsdd, [0.0, 0.0])
    np.testing.assert_allclose(qdd, el_accel(dp, s.q, s.qdot), rtol=1e-14)


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_el_on_gamma_matches_matrix_route(name):
    model = builtin(name)
    rng = np.random.default_rng(10)
    for _ in range(20):
        s = random_extended_state(model, rng)
        qdd = el_accel(model, s.q, s.qdot, s.t)
        epsdd = variational_accel(variational_matrices(model, s.q, s.qdot, qdd, s.t), s.eps, s.epsdot)
        got = np.concatenate(el_accel_on_gamma(model, s))
        assert relative_difference(got, np.concatenate([qdd, epsdd])) < 1e-9


@pytest.mark.parametrize("name", AUTONOMOUS)
def test_matrices_of_autonomous_models_ignore_time(name):
    model = builtin(name)
    rng = np.random.default_rng(12)
    s = random_extended_state(model, rng)
    qdd = el_accel(model, s.q, s.qdot, 0.0)
    np.testing.assert_array_equal(qdd, el_accel(model, s.q, s.qdot, 17.3))
    a = variational_matrices(model, s.q, s.qdot, qdd, 0.0)
    b = variational_matrices(model, s.q, s.qdot, qdd, 17.3)
    for x, y in ((a.M, b.M), (a.C, b.C), (a.K, b.K)):
        np.testing.assert_array_equal(x, y)


def test_driven_matrices_are_time_independent_but_force_is_not():
    # the drive enters L linearly in q, so M, C, K do not see it
    m = builtin("driven_oscillator")
    a = el_accel(m, [0.1], [0.2], 0.0)
    b = el_accel(m, [0.1], [0.2], 1.0)
    assert a[0] != b[0]


# Hessian W -----------------------------------------------------------------------


def test_hessian_w_examples():
    w = hessian_w(builtin("free_particle"), S([0.0], [1.0], [0.0], [2.0]))
    assert (w.value, w.operator_form) == (2.0, 2.0)
    w = hessian_w(builtin("harmonic_oscillator"), S([0.3], [0.2], [1.0], [0.0]))
    assert (w.value, w.operator_form) == (-0.5, -0.5)
    w = hessian_w(builtin("pendulum"), S([0.3], [0.2], [0.0], [0.0]))
    assert (w.value, w.operator_form) == (0.0, 0.0)


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_hessian_w_routes_agree(name):
    model = builtin(name)
    rng = np.random.default_rng(13)
    for _ in range(20):
        assert hessian_w(model, random_extended_state(model, rng)).relative_gap < 1e-10


# total-derivative identity ---------------------------------------------------


def test_total_derivative_identity_free_particle_is_exact():
    model = builtin("free_particle")
    traj = integrate(model, S([0.0], [1.5], [0.3], [0.7]),
                     IntegratorSpec("rk4_fixed", (0.0, 1.0), step=0.1))
    assert total_derivative_identity(model, traj.samples) < 1e-13


def test_total_derivative_identity_zero_variation():
    model = builtin("pendulum")
    traj = integrate(model, S([0.4], [0.0], [0.0], [0.0]),
                     IntegratorSpec("rk4_fixed", (0.0, 1.0), step=0.1))
    assert total_derivative_identity(model, traj.samples) == 0.0


def test_total_derivative_identity_is_second_order_in_step():
    model = builtin("harmonic_oscillator")
    start = S([1.0], [0.0], [0.3], [0.5])
    residual = {}
    for h in (1e-3, 5e-4):
        traj = integrate(model, start, IntegratorSpec("rk4_fixed", (0.0, 0.01), step=h))
        t, r = total_derivative_series(model, traj.samples)
        residual[h] = dict(zip(np.round(t, 12), np.abs(r)))
    shared = sorted(set(residual[1e-3]) & set(residual[5e-4]))
    coarse = max(residual[1e-3][t] for t in shared)
    fine = max(residual[5e-4][t] for t in shared)
    assert coarse / fine >= 3.5


def test_total_derivative_identity_needs_three_samples():
    model = builtin("pendulum")
    with pytest.raises(ValueError):
        total_derivative_identity(model, [S([0.1], [0.0], [0.0], [0.0])] * 2)
