import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from imprsl import wbc
from imprsl.datamodel import ImpedanceSchedule, Timebase, ValidationError
from imprsl.harness.plant import Plant, build_robot, home_configuration


def random_configurations(model, count, seed):
    rng = np.random.default_rng(seed)
    lo = np.maximum(model.q_min, -np.pi)
    hi = np.minimum(model.q_max, np.pi)
    return rng.uniform(lo, hi, (count, model.n))


def constant_schedule(n, k=300.0, d=35.0, dt=0.01):
    return ImpedanceSchedule(Timebase(dt, n), np.tile([0, 0, 0, 1.0, 0, 0, 0], (n, 1)),
                             np.tile(k * np.eye(3), (n, 1, 1)), np.tile(d * np.eye(3), (n, 1, 1)))


# ---------------------------------------------------------------- task torque

def test_task_torque_equilibrium_is_zero():
    J = np.random.default_rng(0).normal(size=(3, 6))
    x = np.array([0.3, 0.1, 1.0])
    assert_array_equal(wbc.task_torque(J, x, x, np.zeros(3), 100 * np.eye(3), 20 * np.eye(3)), np.zeros(6))


def test_task_torque_linear_law():
    J = np.eye(3)
    tau = wbc.task_torque(J, np.array([0.01, 0, 0]), np.zeros(3), np.zeros(3), 100 * np.eye(3), np.eye(3))
    assert_allclose(tau, [-1.0, 0, 0], atol=1e-14)
    J6 = np.vstack([np.eye(3), np.zeros((3, 3))])
    assert_allclose(wbc.task_torque(J6, np.array([0.01, 0, 0]), np.zeros(3), np.zeros(3), 100 * np.eye(3),
                                    np.eye(3)), [-1.0, 0, 0], atol=1e-14)


def test_task_torque_doubles_with_stiffness():
    rng = np.random.default_rng(1)
    J, x = rng.normal(size=(3, 7)), rng.normal(size=3)
    K = np.diag([100.0, 200.0, 50.0])
    t1 = wbc.task_torque(J, x, np.zeros(3), np.zeros(3), K, np.eye(3))
    t2 = wbc.task_torque(J, x, np.zeros(3), np.zeros(3), 2 * K, np.eye(3))
    assert_allclose(t2, 2 * t1, rtol=1e-14)


def test_task_torque_dimension_errors():
    with pytest.raises(ValidationError):
        wbc.task_torque(np.eye(4), np.zeros(3), np.zeros(3), np.zeros(3), np.eye(3), np.eye(3))
    with pytest.raises(ValidationError):
        wbc.task_torque(np.eye(3), np.zeros(2), np.zeros(3), np.zeros(3), np.eye(3), np.eye(3))


# ---------------------------------------------------------------- projector

def test_projector_identities_random_full_rank():
    rng = np.random.default_rng(2)
    for _ in range(50):
        J = rng.normal(size=(6, 10))
        p = wbc.nullspace_projector(J)
        tau0 = rng.normal(size=10)
        assert not p.damped
        assert np.linalg.norm(p.J_pinv.T @ p.N @ tau0) < 1e-8 * np.linalg.norm(tau0)
        assert_allclose(p.N @ p.N, p.N, atol=1e-8)


def test_projector_identities_over_plant_configurations():
    model = build_robot("full")
    plant = Plant(model)
    worst_idem = worst_annih = 0.0
    for q in random_configurations(model, 1000, seed=3):
        for which in range(2):
            _, J = plant.chain_jacobian(q, which)
            p = wbc.nullspace_projector(J)
            if p.damped:
                continue
            worst_idem = max(worst_idem, np.abs(p.N @ p.N - p.N).max())
            worst_annih = max(worst_annih, np.abs(p.J_pinv.T @ p.N).max())
    assert worst_idem < 1e-8 and worst_annih < 1e-8


def test_square_invertible_jacobian_has_empty_null_space():
    J = np.random.default_rng(4).normal(size=(6, 6)) + 3 * np.eye(6)
    assert_allclose(wbc.nullspace_projector(J).N, np.zeros((6, 6)), atol=1e-10)


def test_singular_jacobian_is_damped_and_flagged():
    J = np.zeros((3, 5))
    J[0, 0] = J[1, 1] = 1.0
    J[2, 2] = 1e-6
    p = wbc.nullspace_projector(J)
    assert p.damped and np.all(np.isfinite(p.N))


def test_inertia_weighted_projector_is_dynamically_consistent():
    rng = np.random.default_rng(5)
    J = rng.normal(size=(3, 7))
    A = rng.normal(size=(7, 7))
    M = A @ A.T + 7 * np.eye(7)
    p = wbc.nullspace_projector(J, M, weighting="inertia")
    # torques through N produce no task acceleration: J M^-1 N = 0
    assert_allclose(J @ np.linalg.solve(M, p.N), 0.0, atol=1e-10)
    with pytest.raises(ValidationError):
        wbc.nullspace_projector(J, weighting="inertia")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_null_space_torque_does_not_change_task_wrench(seed):
    rng = np.random.default_rng(seed)
    J = rng.normal(size=(3, 6))
    p = wbc.nullspace_projector(J)
    tau_task, tau0 = rng.normal(size=6), rng.normal(size=6)
    w0 = p.J_pinv.T @ tau_task
    w1 = p.J_pinv.T @ (tau_task + p.N @ tau0)
    assert np.linalg.norm(w1 - w0) < 1e-8 * max(1.0, np.linalg.norm(w0))


# ---------------------------------------------------------------- follower

def test_follower_tau0_examples():
    assert_array_equal(wbc.follower_tau0([1, 2, 3], 7), [1, 2, 3, 0, 0, 0, 0, 0, 0, 0])
    assert_array_equal(wbc.follower_tau0(np.zeros(3), 7), np.zeros(10))


# ---------------------------------------------------------------- admittance

def test_admittance_free_decay_matches_closed_form():
    M, D = np.diag([20.0, 10.0, 5.0]), np.diag([300.0, 100.0, 50.0])
    v0 = np.array([0.1, -0.2, 0.05])
    adm = wbc.TorsoAdmittance(M, D, qd=v0)
    dt, steps = 1e-4, 500
    for _ in range(steps):
        adm, qd, _ = wbc.torso_admittance_step(adm, np.zeros(3), np.zeros(3), dt)
    exact = v0 * np.exp(-np.diag(D) / np.diag(M) * dt * steps)
    assert_allclose(qd, exact, rtol=0.01, atol=1e-6)


def test_admittance_steady_state():
    adm = wbc.TorsoAdmittance.default()
    tau = np.array([30.0, -15.0, 60.0])
    tc = np.max(np.diag(adm.M_adm) / np.diag(adm.D_adm))
    dt = 1e-3
    for _ in range(int(5 * tc / dt) + 1):
        adm, qd, sat = wbc.torso_admittance_step(adm, tau, np.zeros(3), dt)
    assert_allclose(qd, np.linalg.solve(adm.D_adm, tau), rtol=0.01)
    assert not sat


def test_admittance_saturates():
    adm = wbc.TorsoAdmittance.default()
    adm, qd, sat = wbc.torso_admittance_step(adm, np.full(3, 1e6), np.zeros(3), 1e-3)
    assert sat and np.all(qd == adm.qd_max)


def test_admittance_rejects_indefinite_and_bad_dt():
    with pytest.raises(ValidationError):
        wbc.TorsoAdmittance(-np.eye(3), np.eye(3))
    with pytest.raises(ValidationError):
        wbc.torso_admittance_step(wbc.TorsoAdmittance.default(), np.zeros(3), np.zeros(3), 0.0)


# ---------------------------------------------------------------- hybrid force

def test_hybrid_zero_error_zero_correction():
    h = wbc.HybridForceController()
    assert h.update(10.0, 10.0, 1e-3) == 0.0 and h.integral == 0.0


def test_hybrid_step_disturbance_no_large_overshoot():
    # point contact with a first-order force lag and a 2 N bias the loop must cancel
    h = wbc.HybridForceController()
    dt, lag, bias, target = 1e-3, 0.05, 2.0, 10.0
    f, corr = target, []
    for _ in range(10000):
        c = h.update(f, target, dt)
        corr.append(c)
        f += dt / lag * (target + c - bias - f)
    corr = np.array(corr)
    assert abs(corr[-1] - bias) < 0.01 * bias
    assert corr.max() <= 1.2 * bias


def test_hybrid_contact_loss_clamps_integrator():
    h = wbc.HybridForceController()
    for _ in range(20000):
        h.update(0.0, 10.0, 1e-3)
    assert h.integral == h.i_limit and h.saturated
    with pytest.raises(ValidationError):
        h.update(0.0, np.nan, 1e-3)


# ---------------------------------------------------------------- passivity

def test_constant_schedule_passes():
    r = wbc.passivity_check(constant_schedule(50))
    assert r.passed and r.first_violation is None


def test_ramp_schedule_fails_at_ramp_step():
    n, ramp = 20, 8
    k = np.full(n, 100.0)
    k[ramp] = 0.5 * (100.0 + 1e5)
    k[ramp + 1:] = 1e5
    s = ImpedanceSchedule(Timebase(0.01, n), np.tile([0, 0, 0, 1.0, 0, 0, 0], (n, 1)),
                          k[:, None, None] * np.eye(3), np.tile(0.5 * np.eye(3), (n, 1, 1)))
    r = wbc.passivity_check(s)
    assert not r.passed and r.first_violation == ramp


def test_decreasing_stiffness_passes():
    n = 30
    k = np.linspace(600.0, 100.0, n)
    s = ImpedanceSchedule(Timebase(0.01, n), np.tile([0, 0, 0, 1.0, 0, 0, 0], (n, 1)),
                          k[:, None, None] * np.eye(3), 2 * np.sqrt(k)[:, None, None] * np.eye(3))
    assert wbc.passivity_check(s).passed


@settings(max_examples=60, deadline=None)
@given(st.floats(50, 1000), st.floats(50, 5000), st.floats(0.5, 5.0))
def test_rate_limit_never_violates_bound(k0, k1, delta):
    K0, D0 = k0 * np.eye(3), delta * np.sqrt(k0) * np.eye(3)
    K1, D1 = k1 * np.diag([1.0, 0.7, 1.3]), delta * np.sqrt(k1) * np.eye(3)
    K, D, s = wbc.rate_limit(K0, D0, K1, D1, 1e-3)
    assert 0.0 <= s <= 1.0
    assert wbc.passivity_margin(K0, D0, K, D, 1e-3) >= -1e-9 * k1
    if wbc.passivity_margin(K0, D0, K1, D1, 1e-3) >= 0:
        assert s == 1.0


# ---------------------------------------------------------------- controller

@pytest.fixture(scope="module")
def robot():
    model = build_robot("reduced")
    return model, Plant(model)


def controller_inputs(model, plant, q, qd=None, hand_forces=None, offset=np.zeros(3)):
    qd = np.zeros(model.n) if qd is None else qd
    chains, refs = [], []
    for e in range(2):
        x, J = plant.chain_jacobian(q, e)
        chains.append(wbc.ChainFeedback(x, J[:3] @ qd[model.chains[e]], J[:3]))
        refs.append(wbc.ChainReference(x + offset, 300 * np.eye(3), 35 * np.eye(3)))
    hf = np.zeros((2, 3)) if hand_forces is None else hand_forces
    fb = wbc.Feedback(0.0, q, qd, plant.G(q), tuple(chains), hf, q[:model.n_torso].copy())
    return fb, refs


def test_equilibrium_torque_is_gravity(robot):
    model, plant = robot
    for q in [home_configuration(model)] + list(random_configurations(model, 20, seed=6)):
        ctrl = wbc.WholeBodyController(model.chains, model.n_torso)
        fb, refs = controller_inputs(model, plant, q)
        cmd = ctrl.control_step(fb, refs, 1.0, 1e-3)
        assert not cmd.fallback
        assert np.max(np.abs(cmd.tau - plant.G(q))) < 1e-9


def test_follower_torque_is_projected_leader_torso_torque(robot):
    model, plant = robot
    nt = model.n_torso
    q = home_configuration(model)
    q[:nt] = [0.02, -0.01, 0.03]
    fb, refs = controller_inputs(model, plant, q)
    fb = wbc.Feedback(fb.t, fb.q, fb.qd, fb.G, fb.chains, fb.hand_forces, np.zeros(nt))
    cfg = wbc.WbcConfig()
    cmd = wbc.WholeBodyController(model.chains, nt, cfg).control_step(fb, refs, 1.0, 1e-3)
    N_l = wbc.nullspace_projector(fb.chains[0].J).N
    tau_l = N_l @ np.concatenate([cfg.torso_kp * (fb.torso_ref - q[:nt]), np.zeros(len(model.chains[0]) - nt)])
    N_r = wbc.nullspace_projector(fb.chains[1].J).N
    tau_r = N_r @ wbc.follower_tau0(tau_l[:nt], len(model.chains[1]) - nt)
    right_arm = model.chains[1][nt:]
    assert_allclose(cmd.tau[right_arm] - plant.G(q)[right_arm], tau_r[nt:], atol=1e-10)


def test_push_on_leader_leaves_arm_torques_alone(robot):
    model, plant = robot
    q = home_configuration(model)
    fb0, refs = controller_inputs(model, plant, q, offset=np.array([0.01, 0, -0.01]))
    push = np.array([[5.0, -3.0, 2.0], [0, 0, 0]])
    fb1, _ = controller_inputs(model, plant, q, hand_forces=push, offset=np.array([0.01, 0, -0.01]))
    c0 = wbc.WholeBodyController(model.chains, model.n_torso).control_step(fb0, refs, 1.0, 1e-3)
    c1 = wbc.WholeBodyController(model.chains, model.n_torso).control_step(fb1, refs, 1.0, 1e-3)
    assert_array_equal(c0.tau, c1.tau)
    assert not np.allclose(c0.qd_torso, c1.qd_torso)


def test_unit_rho_is_bit_identical_to_ablation(robot):
    model, plant = robot
    rng = np.random.default_rng(7)
    a = wbc.WholeBodyController(model.chains, model.n_torso, wbc.WbcConfig(relative_velocity=True))
    b = wbc.WholeBodyController(model.chains, model.n_torso, wbc.WbcConfig(relative_velocity=True))
    q = home_configuration(model)
    for k in range(50):
        qk = q + 0.01 * rng.normal(size=model.n)
        qd = 0.1 * rng.normal(size=model.n)
        fb, refs = controller_inputs(model, plant, qk, qd, rng.normal(size=(2, 3)), offset=rng.normal(size=3) * 0.01)
        refs = [wbc.ChainReference(r.x_d, r.K * (1 + k / 50), r.D) for r in refs]
        ca = a.control_step(fb, refs, 1.0, 1e-3)
        cb = b.control_step(fb, refs, 1, 1e-3)
        assert_array_equal(ca.tau, cb.tau)
        assert_array_equal(ca.qd_torso, cb.qd_torso)


def test_rho_jumps_are_rate_limited(robot):
    model, plant = robot
    ctrl = wbc.WholeBodyController(model.chains, model.n_torso)
    q = home_configuration(model)
    fb, refs = controller_inputs(model, plant, q, offset=np.array([0.0, 0.0, 0.01]))
    ctrl.reset_gains(refs)
    for k in range(200):
        rho = 1.8 if (k // 10) % 2 else 0.5
        ctrl.control_step(fb, refs, rho, 1e-3)
    margins = np.array([row[wbc.LOG_COLUMNS.index("passivity_margin")] for row in ctrl.log])
    fracs = np.array([row[wbc.LOG_COLUMNS.index("rate_fraction")] for row in ctrl.log])
    assert margins.min() >= -1e-6
    assert fracs.min() < 1.0   # the upward jumps were actually limited


def test_bad_rho_falls_back_to_zero_torque(robot, tmp_path):
    model, plant = robot
    ctrl = wbc.WholeBodyController(model.chains, model.n_torso)
    fb, refs = controller_inputs(model, plant, home_configuration(model))
    cmd = ctrl.control_step(fb, refs, np.nan, 1e-3)
    assert cmd.fallback and not np.any(cmd.tau)
    ctrl.write_log(tmp_path / "log.csv")
    header = (tmp_path / "log.csv").read_text().splitlines()[0].split(",")
    assert header == wbc.LOG_COLUMNS
