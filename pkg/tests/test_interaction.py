import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from imprsl import interaction as itx
from imprsl.datamodel import ValidationError

I3 = np.eye(3)


def critically_damped(t, step, omega):
    """Closed-form response of x'' + 2 w x' + w^2 x = w^2 step from rest."""
    return step * (1 - (1 + omega * t) * np.exp(-omega * t))


def test_step_response_matches_closed_form():
    dt, n = 1e-3, 2001
    x_d = np.tile([0.1, 0.0, 0.0], (n, 1))
    params = itx.ImpedanceParams(I3, 20 * I3, 100 * I3)
    traj = itx.simulate_impedance(x_d, params, np.zeros((n, 3)), dt, itx.CartesianState(np.zeros(3), np.zeros(3)))
    t = np.arange(n) * dt
    assert_allclose(traj.x[:, 0], critically_damped(t, 0.1, 10.0), atol=1e-9)
    assert traj.x[:, 0].max() <= 0.1
    assert np.all(np.abs(traj.x[t >= 1.5, 0] - 0.1) < 1e-4)


def test_equilibrium_is_constant():
    n = 200
    x0 = np.array([0.3, -0.1, 1.0])
    traj = itx.simulate_impedance(np.tile(x0, (n, 1)), itx.ImpedanceParams(I3, 20 * I3, 100 * I3),
                                  np.zeros((n, 3)), 0.01, itx.CartesianState(x0, np.zeros(3)))
    assert np.array_equal(traj.x, np.tile(x0, (n, 1)))


def test_static_force_balance():
    n = 500
    traj = itx.simulate_impedance(np.zeros((n, 3)), itx.ImpedanceParams(I3, 20 * I3, 100 * I3),
                                  np.tile([10.0, 0, 0], (n, 1)), 0.01, itx.CartesianState(np.zeros(3), np.zeros(3)))
    assert_allclose(traj.x[-1], [0.1, 0, 0], atol=1e-8)


def test_recover_reference_static():
    xd = itx.recover_reference(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 3)), 100 * I3, 20 * I3,
                               np.array([[10.0, 0, 0]]))
    assert_allclose(xd, [[-0.1, 0, 0]])


def test_recover_reference_free_space():
    x = np.random.default_rng(0).normal(size=(10, 3))
    z = np.zeros_like(x)
    assert_allclose(itx.recover_reference(x, z, z, 100 * I3, 20 * I3, z), x)


def test_recover_reference_ill_conditioned():
    K = np.diag([1e9, 1.0, 1.0])
    z = np.zeros((4, 3))
    with pytest.raises(itx.IllConditionedStiffnessError) as exc:
        itx.recover_reference(z, z, z, K, I3, z)
    assert exc.value.steps == [0, 1, 2, 3]


def smooth_reference(n, dt):
    t = np.arange(n) * dt
    return np.column_stack([0.1 * np.sin(0.8 * t), 0.05 * np.cos(1.3 * t), 0.02 * np.sin(0.4 * t + 1)])


def test_round_trip_identity():
    dt, n = 1e-3, 10001
    x_ref = smooth_reference(n, dt)
    t = np.arange(n) * dt
    f = np.column_stack([np.sin(t), 0.5 * np.cos(2 * t), np.zeros(n)])
    K = np.diag([300.0, 200.0, 400.0])
    D = 2 * np.sqrt(K)
    traj = itx.simulate_impedance(x_ref, itx.ImpedanceParams(I3, D, K), f, dt, itx.CartesianState(x_ref[0], np.zeros(3)))
    rec = itx.recover_reference(traj.x, traj.v, traj.a, K, D, f)
    assert np.sqrt(np.mean((rec - x_ref) ** 2)) < 1e-5
    sampled = itx.recover_reference_from_samples(traj.x, f, K, D, dt)
    assert np.sqrt(np.mean((sampled - x_ref) ** 2)) < 1e-5


def test_non_spd_and_blowup():
    with pytest.raises(ValidationError):
        itx.ImpedanceParams(I3, I3, -I3)
    n = 50
    with pytest.raises(itx.IntegrationBlowupError), np.errstate(all="ignore"):
        itx.simulate_impedance(np.zeros((n, 3)), itx.ImpedanceParams(1e-300 * I3, I3, I3),
                               np.ones((n, 3)), 0.01, itx.CartesianState(np.zeros(3), np.zeros(3)), substeps=1)


def test_differentiate_polynomials():
    dt = 0.01
    t = np.arange(50) * dt
    assert_allclose(itx.differentiate(t ** 2, dt, order=2), 2.0, atol=1e-9)
    assert np.all(itx.differentiate(np.full(10, 3.0), dt) == 0)
    with pytest.raises(ValidationError):
        itx.differentiate(np.zeros(4), dt)


@pytest.mark.parametrize("dt", [0.01, 0.005])
def test_differentiate_sine_second_order(dt):
    t = np.arange(int(2 / dt)) * dt
    err = np.abs(itx.differentiate(np.sin(t), dt)[1:-1] - np.cos(t[1:-1]))
    # central-difference truncation error is dt^2/6 * max|f'''|
    assert err.max() < dt ** 2 / 6 * 1.0001


@settings(max_examples=20, deadline=None)
@given(st.floats(10, 500), st.floats(0.5, 40), st.floats(0.5, 3),
       st.lists(st.floats(-0.2, 0.2), min_size=6, max_size=6))
def test_storage_non_increasing(k, d, m, init):
    n = 200
    params = itx.ImpedanceParams(m * I3, d * I3, k * I3)
    traj = itx.simulate_impedance(np.zeros((n, 3)), params, np.zeros((n, 3)), 0.01,
                                  itx.CartesianState(np.array(init[:3]), np.array(init[3:])))
    assert np.all(np.diff(traj.storage) <= 1e-6)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_translation_equivariance(shift):
    shift = np.array(shift)
    n = 100
    x_d = smooth_reference(n, 0.01)
    f = np.tile([1.0, -2.0, 0.5], (n, 1))
    params = itx.ImpedanceParams(I3, 20 * I3, 100 * I3)
    x0 = itx.CartesianState(np.array([0.01, 0.0, 0.0]), np.zeros(3))
    a = itx.simulate_impedance(x_d, params, f, 0.01, x0)
    b = itx.simulate_impedance(x_d + shift, params, f, 0.01, itx.CartesianState(x0.x + shift, x0.v))
    assert_allclose(b.x, a.x + shift, atol=1e-9)
