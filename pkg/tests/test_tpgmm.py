import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.spatial.transform import Rotation

from imprsl import tpgmm
from imprsl.datamodel import TaskFrame, ValidationError


def random_frame(rng, dim=4):
    A = rng.normal(size=(dim, dim)) + 3 * np.eye(dim)
    return TaskFrame(A, rng.normal(size=dim))


def test_to_frame_identity_and_origin():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(20, 4))
    assert_allclose(tpgmm.to_frame(z, TaskFrame.identity(4)), z)
    assert_allclose(tpgmm.to_frame(z, TaskFrame(np.eye(4), z[0]))[0], 0)


def test_frame_round_trip_random():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(30, 4))
    for _ in range(100):
        f = random_frame(rng)
        assert np.max(np.abs(tpgmm.from_frame(tpgmm.to_frame(z, f), f) - z)) < 1e-10


def planted_mixture(n=5000, seed=0):
    rng = np.random.default_rng(seed)
    mu = np.array([[0.0, 0.0], [3.0, 2.0]])
    lab = rng.random(n) < 0.4
    X = np.where(lab[:, None], rng.normal(mu[0], 0.5, (n, 2)), rng.normal(mu[1], 0.7, (n, 2)))
    return X, mu


def test_em_recovers_planted_means_and_is_monotone():
    X, mu = planted_mixture()
    model = tpgmm.em_fit(X, 2, seed=0, reg=1e-6)
    est = model.means[0]
    order = np.argsort(est[:, 0])
    assert np.max(np.abs(est[order] - mu)) < 0.05
    assert np.all(np.diff(model.objective_trace) >= -1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_em_trace_non_decreasing_two_frames(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(2, 600, 3)) + rng.integers(0, 3, 600)[None, :, None]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", tpgmm.DegenerateComponentWarning)
        model = tpgmm.em_fit(X, 4, seed=seed, reg=1e-4)
    assert np.all(np.diff(model.objective_trace) >= -1e-9 * abs(model.objective_trace[-1]))


def test_em_single_component_is_sample_moments():
    X, _ = planted_mixture(2000)
    with pytest.warns(tpgmm.DegenerateComponentWarning):
        model = tpgmm.em_fit(X, 1, reg=0.0)
    assert_allclose(model.means[0, 0], X.mean(axis=0), atol=1e-9)
    assert_allclose(model.covs[0, 0], np.cov(X.T, bias=True), atol=1e-9)


def test_em_rejects_small_data():
    with pytest.raises(ValidationError, match="need >="):
        tpgmm.em_fit(np.zeros((10, 3)), 2)


def _toy_model(D=3):
    rng = np.random.default_rng(3)
    covs = np.stack([np.eye(D) * (j + 1) for j in range(2)])
    return tpgmm.TPGMMModel(np.array([0.5, 0.5]), rng.normal(size=(1, 2, D)), covs[None])


def test_transport_examples():
    m = _toy_model()
    means, covs = tpgmm.transport(m, [TaskFrame.identity(3)])
    assert_allclose(means, m.means)
    assert_allclose(covs, m.covs)
    R = Rotation.from_euler("xyz", [0.3, -0.5, 1.1]).as_matrix()
    _, covs = tpgmm.transport(m, [TaskFrame(R, np.ones(3))])
    assert_allclose(np.linalg.eigvalsh(covs[0]), np.linalg.eigvalsh(m.covs[0]))
    _, covs = tpgmm.transport(m, [TaskFrame(2 * np.eye(3), np.zeros(3))])
    assert_allclose(covs, 4 * m.covs)


def test_poe_examples():
    mean, cov, _ = tpgmm.poe([np.zeros(2), 2 * np.ones(2)], [np.eye(2), np.eye(2)])
    assert_allclose(mean, 1.0)
    assert_allclose(cov, 0.5 * np.eye(2))
    mean, cov, _ = tpgmm.poe([np.ones(2), np.ones(2)], [3 * np.eye(2), 3 * np.eye(2)])
    assert_allclose(mean, 1.0)
    assert_allclose(cov, 1.5 * np.eye(2))
    mean, cov, _ = tpgmm.poe([np.array([0.3, -0.2]), np.zeros(2)], [np.diag([0.2, 0.5]), 1e9 * np.eye(2)])
    assert_allclose(mean, [0.3, -0.2], atol=1e-6)
    assert_allclose(cov, np.diag([0.2, 0.5]), atol=1e-6)


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.floats(0.01, 100), st.floats(0.01, 100))
def test_poe_isotropic_mean_on_segment(a, b, va, vb):
    a, b = np.array(a), np.array(b)
    mean, cov, _ = tpgmm.poe([a, b], [va * np.eye(3), vb * np.eye(3)])
    w = vb / (va + vb)
    assert_allclose(mean, w * a + (1 - w) * b, atol=1e-9)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_gmr_single_component_linear_regression():
    rng = np.random.default_rng(4)
    M = rng.normal(size=(4, 4))
    S = M @ M.T + np.eye(4)
    mu = rng.normal(size=4)
    x = np.linspace(-1, 1, 9)
    mean, cov = tpgmm.gmr(np.ones(1), mu[None], S[None], x)
    slope = S[1:, 0] / S[0, 0]
    assert_allclose(mean, mu[1:] + np.outer(x - mu[0], slope), atol=1e-12)
    assert_allclose(cov, np.broadcast_to(S[1:, 1:] - np.outer(S[1:, 0], S[0, 1:]) / S[0, 0], (9, 3, 3)), atol=1e-12)


def toy_demos(n_demos=6, T=100, seed=0):
    """Straight-line reaches with a bump, stiffness rising mid-motion."""
    rng = np.random.default_rng(seed)
    s = np.linspace(0, 1, T)
    demos, frames = [], []
    for _ in range(n_demos):
        start = np.array([0.4, 0.0, 1.0]) + rng.uniform(-0.05, 0.05, 3)
        goal = start + np.array([0.3, 0.2, 0.0]) + rng.uniform(-0.05, 0.05, 3)
        blend = 3 * s ** 2 - 2 * s ** 3
        pos = start + np.outer(blend, goal - start) + np.outer(np.sin(np.pi * s), [0, 0, 0.05])
        pos += 0.002 * rng.standard_normal(pos.shape)
        quat = np.tile([1.0, 0, 0, 0], (T, 1))
        k = 200 + 100 * np.sin(np.pi * s)[:, None] * np.array([1.0, 0.5, 2.0])
        demos.append(tpgmm.joint_features(s, pos, quat, k))
        frames.append([tpgmm.pose_frame(start), tpgmm.pose_frame(goal)])
    return demos, frames


@pytest.fixture(scope="module")
def toy_fit():
    demos, frames = toy_demos()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", tpgmm.DegenerateComponentWarning)
        model = tpgmm.em_fit(tpgmm.project_demos(demos, frames), 5, seed=0, reg=1e-6)
    return demos, frames, model


def test_reproduce_training_frames(toy_fit):
    demos, frames, model = toy_fit
    rep = tpgmm.reproduce(model, frames[0], 100)
    pos = [d[:, 1:4] for d in demos]
    spread = np.mean([np.sqrt(np.mean((a - b) ** 2)) for i, a in enumerate(pos) for b in pos[i + 1:]])
    assert np.sqrt(np.mean((rep.position - pos[0]) ** 2)) < spread
    assert np.all(rep.stiffness > 0)
    assert_allclose(np.linalg.norm(rep.quaternion, axis=1), 1.0)


def test_reproduce_follows_goal_shift(toy_fit):
    _, frames, model = toy_fit
    start = frames[0][0].b[1:4]
    goal = frames[0][1].b[1:4]
    base = tpgmm.reproduce(model, [tpgmm.pose_frame(start), tpgmm.pose_frame(goal)], 100)
    moved = tpgmm.reproduce(model, [tpgmm.pose_frame(start), tpgmm.pose_frame(goal + [0.1, 0, 0])], 100)
    assert_allclose(moved.position[-1] - base.position[-1], [0.1, 0, 0], atol=0.02)


def test_fit_equivariant_under_rigid_transform(toy_fit):
    demos, frames, model = toy_fit
    R = Rotation.from_euler("z", 0.7).as_matrix()
    t = np.array([1.0, -2.0, 0.5])
    L = tpgmm.quat_multiply_matrix(tpgmm.quat_from_matrix(R))
    moved_demos, moved_frames = [], []
    for d, fr in zip(demos, frames):
        d2 = d.copy()
        d2[:, 1:4] = d[:, 1:4] @ R.T + t
        d2[:, 4:8] = d[:, 4:8] @ L.T
        moved_demos.append(d2)
        moved_frames.append([tpgmm.pose_frame(f.b[1:4] @ R.T + t, R) for f in fr])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", tpgmm.DegenerateComponentWarning)
        moved = tpgmm.em_fit(tpgmm.project_demos(moved_demos, moved_frames), 5, seed=0, reg=1e-6)
    assert_allclose(moved.means, model.means, atol=1e-8)
    assert_allclose(moved.covs, model.covs, atol=1e-8)


def test_reproduce_warns_outside_support(toy_fit):
    _, frames, model = toy_fit
    narrow = tpgmm.TPGMMModel(model.priors, model.means, model.covs, meta={"phase_range": [0.1, 0.9]})
    with pytest.warns(tpgmm.ExtrapolationWarning):
        tpgmm.reproduce(narrow, frames[0], 10)


def test_model_round_trip(tmp_path, toy_fit):
    _, _, model = toy_fit
    tpgmm.save_model(model, tmp_path / "m.json")
    back = tpgmm.load_model(tmp_path / "m.json")
    assert np.array_equal(back.means, model.means)
    assert np.array_equal(back.covs, model.covs)


def test_bic_sweep_prefers_planted_count():
    X, _ = planted_mixture(1500)
    scores = tpgmm.bic_sweep(X, [1, 2, 3])
    assert min(scores, key=scores.get) == 2
