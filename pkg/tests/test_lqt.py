import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from imprsl import lqt
from imprsl.datamodel import ValidationError
from imprsl.tpgmm import GaussianSeq

DT = 0.01


def dense_oracle(problem):
    """Independent solve: impulse-response lifting by rollout, then lstsq on the stacked square roots."""
    T, d = problem.T, problem.d
    m = (T - 1) * d
    free = lqt.rollout(problem.x0, np.zeros((T - 1, d)), problem.dt)[:, :d].reshape(-1)
    cols = []
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        cols.append(lqt.rollout(np.zeros(2 * d), e.reshape(T - 1, d), problem.dt)[:, :d].reshape(-1))
    G = np.column_stack(cols)
    rows, rhs = [], []
    for p in range(problem.targets.shape[0]):
        for t in range(T):
            w, U = np.linalg.eigh(problem.precisions[p, t])
            W = (U * np.sqrt(np.maximum(w, 0))) @ U.T
            rows.append(W @ G[t * d:(t + 1) * d])
            rhs.append(W @ (problem.targets[p, t] - free[t * d:(t + 1) * d]))
    Lr = np.linalg.cholesky(problem.R).T
    A = np.vstack(rows + [Lr])
    b = np.concatenate(rhs + [np.zeros(m)])
    return np.linalg.lstsq(A, b, rcond=None)[0]


def via_point_problem(T=50, r=1e-6):
    targets = np.zeros((T, 1))
    prec = np.zeros((T, 1, 1))
    targets[T // 2] = 1.0
    prec[T // 2] = 1e6
    return lqt.single_frame(targets, prec, R=r, dt=DT, x0=np.zeros(2))


def random_problem(seed, T=50, P=2, d=1, r=1e-3):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, T)
    targets = np.stack([np.sin(2 * np.pi * t + p)[:, None] * np.ones(d) + 0.1 * rng.normal(size=(T, d)) for p in range(P)])
    precs = rng.uniform(0.5, 50, size=(P, T, d))[..., None] * np.eye(d)
    return lqt.LqtProblem(DT, targets, precs, r * np.eye((T - 1) * d), np.zeros(2 * d))


def test_via_point_and_dense_oracle():
    prob = via_point_problem()
    sol = lqt.solve(prob)
    assert abs(sol.position[25, 0] - 1.0) < 1e-3
    assert sol.kkt_residual < 1e-8
    U = dense_oracle(prob)
    assert np.linalg.norm(sol.u.reshape(-1) - U) / np.linalg.norm(U) < 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_random_problems_match_oracle(seed):
    prob = random_problem(seed)
    sol = lqt.solve(prob)
    U = dense_oracle(prob)
    assert sol.kkt_residual < 1e-8
    assert np.linalg.norm(sol.u.reshape(-1) - U) / np.linalg.norm(U) < 1e-8


def test_large_r_kills_control():
    prob = random_problem(0, r=1e9)
    sol = lqt.solve(prob)
    assert np.linalg.norm(sol.u) < 1e-6 * np.linalg.norm(prob.targets)
    norms = [np.linalg.norm(lqt.solve(random_problem(0, r=r)).u) for r in (1e-3, 1e-1, 1e1, 1e3)]
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_constant_targets_at_rest():
    T = 30
    x0 = np.array([0.4, 0.0])
    prob = lqt.single_frame(np.full((T, 1), 0.4), np.ones((T, 1, 1)), R=1e-4, dt=DT, x0=x0)
    sol = lqt.solve(prob)
    assert np.max(np.abs(sol.u)) < 1e-12
    assert_allclose(sol.position, 0.4)


def test_perturbations_never_decrease_cost():
    prob = random_problem(1)
    sol = lqt.solve(prob)
    Sx, Su = lqt.lifted(DT, 1, prob.T)
    rng = np.random.default_rng(0)
    for _ in range(100):
        delta = rng.normal(size=sol.u.size)
        delta *= 1e-3 / np.linalg.norm(delta)
        U = sol.u.reshape(-1) + delta
        X = (Sx @ prob.x0 + Su @ U).reshape(prob.T, 2)
        assert lqt.tracking_cost(prob, X, U.reshape(-1, 1)) >= sol.cost


def test_rollout_reproduces_trajectory():
    prob = random_problem(2, d=3)
    sol = lqt.solve(prob)
    assert np.max(np.abs(lqt.rollout(prob.x0, sol.u, DT) - sol.x)) < 1e-10


def seqs(T=20, same=True, zero_second=False):
    rng = np.random.default_rng(5)
    m1 = rng.normal(size=(T, 4))
    c = np.broadcast_to(np.eye(4) * 0.01, (T, 4, 4)).copy()
    m2 = m1.copy() if same else rng.normal(size=(T, 4))
    c2 = c * (1e12 if zero_second else 1)
    return [GaussianSeq(m1, c), GaussianSeq(m2, c2)]


def test_build_problem_identical_frames_double_precision():
    prob = lqt.build_problem(seqs(), dims=slice(0, 3))
    single = lqt.build_problem(seqs()[:1], dims=slice(0, 3))
    assert_allclose(prob.precisions.sum(axis=0), 2 * single.precisions[0])
    assert_allclose(lqt.solve(prob).position, lqt.solve(lqt.build_problem(seqs()[:1], R=5e-5)).position, atol=1e-9)


def test_build_problem_vanishing_frame():
    two = lqt.solve(lqt.build_problem(seqs(same=False, zero_second=True)))
    one = lqt.solve(lqt.build_problem(seqs()[:1]))
    assert_allclose(two.position, one.position, atol=1e-6)


def test_build_problem_rejects_mismatch():
    a, b = seqs()
    with pytest.raises(ValidationError, match="timebase"):
        lqt.build_problem([a, GaussianSeq(b.mean[:-1], b.cov[:-1])])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(1.5, 100))
def test_scaling_precision_never_increases_tracking_error(seed, c):
    prob = random_problem(seed, T=25)
    scaled = lqt.LqtProblem(prob.dt, prob.targets, c * prob.precisions, prob.R, prob.x0)

    def track(sol):
        diff = prob.targets - sol.position[None]
        return np.einsum("pti,ptij,ptj->", diff, prob.precisions, diff)

    assert track(lqt.solve(scaled)) <= track(lqt.solve(prob)) * (1 + 1e-9)


def test_schedule_examples():
    T = 10
    sol = lqt.solve(random_problem(3, T=T, d=3))
    k = np.linspace(100, 300, T)[:, None] * np.array([1.0, 2.0, 0.5])
    sched = lqt.schedule(sol, k, np.eye(3))
    assert_allclose(np.einsum("tii->ti", sched.K), k)
    assert sched.timebase.dt == DT
    const = lqt.schedule(sol, np.full((T, 3), 300.0), np.eye(3))
    assert_allclose(const.D, np.broadcast_to(2 * np.sqrt(300) * np.eye(3), (T, 3, 3)))
    with pytest.raises(ValidationError):
        lqt.schedule(sol, -k, np.eye(3))


def test_near_singular_normal_equations_get_ridge(caplog):
    T = 40
    targets = np.ones((T, 1))
    prec = np.zeros((T, 1, 1))
    prec[-1] = 1.0
    prob = lqt.single_frame(targets, prec, R=1e-30, dt=DT, x0=np.zeros(2))
    sol = lqt.solve(prob)
    assert sol.regularized
    assert "ridge" in caplog.text
    assert np.all(np.isfinite(sol.x))
    assert not lqt.solve(via_point_problem()).regularized


def test_factored_lifting_matches_full():
    T, d = 9, 3
    Sx, Su = lqt.lifted(DT, d, T)
    sx, lp, lv = lqt.lifted_scalar(DT, T)
    full = np.einsum("ats,ij->taisj", np.stack([lp, lv]), np.eye(d))
    assert_allclose(Su, full.reshape(T * 2 * d, (T - 1) * d), atol=0)
    assert_allclose(Sx.reshape(T, 2 * d, 2 * d), np.einsum("tab,ij->taibj", sx, np.eye(d)).reshape(T, 2 * d, 2 * d), atol=0)
