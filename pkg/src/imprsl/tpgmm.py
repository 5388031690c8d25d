"""Task-parameterized GMM over joint pose + stiffness features.

Feature layout used by the pipeline (``FEATURE_DIM`` = 11)::

    [phase, px, py, pz, qw, qx, qy, qz, log k1, log k2, log k3]

The generic functions (``em_fit``, ``transport``, ``poe``, ``gmr``) work on
any dimension; only ``pose_frame`` and ``reproduce`` assume this layout.
Stiffness enters in log space so reproduced values stay positive.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .datamodel import TaskFrame, ValidationError, canonical_quaternion

log = logging.getLogger(__name__)

PHASE = slice(0, 1)
POS = slice(1, 4)
QUAT = slice(4, 8)
LOGK = slice(8, 11)
FEATURE_DIM = 11
MODEL_VERSION = 1


class ExtrapolationWarning(UserWarning):
    pass


class DegenerateComponentWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TPGMMModel:
    priors: np.ndarray   # (J,)
    means: np.ndarray    # (P, J, D), expressed in each frame
    covs: np.ndarray     # (P, J, D, D)
    objective_trace: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if abs(self.priors.sum() - 1) > 1e-9:
            raise ValidationError("mixing weights must sum to 1")

    @property
    def n_components(self) -> int:
        return self.priors.shape[0]

    @property
    def n_frames(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[2]


@dataclass(frozen=True)
class GaussianSeq:
    mean: np.ndarray  # (T, D)
    cov: np.ndarray   # (T, D, D)


# ---------------------------------------------------------------- quaternions

def quat_multiply_matrix(r) -> np.ndarray:
    """Matrix L(r) with L(r) q = r * q for (w, x, y, z) quaternions."""
    w, x, y, z = r
    return np.array([[w, -x, -y, -z],
                     [x, w, -z, y],
                     [y, z, w, -x],
                     [z, -y, x, w]])


def quat_from_matrix(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2 * np.sqrt(tr + 1)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2 * np.sqrt(1 + R[i, i] - R[j, j] - R[k, k])
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return canonical_quaternion(q)


def pose_frame(position, rotation=None) -> TaskFrame:
    """Task frame on the joint feature: rotates/shifts position, rotates the
    quaternion, leaves phase and stiffness untouched."""
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
    A = np.eye(FEATURE_DIM)
    A[POS, POS] = R
    A[QUAT, QUAT] = quat_multiply_matrix(quat_from_matrix(R))
    b = np.zeros(FEATURE_DIM)
    b[POS] = position
    return TaskFrame(A, b)


# ---------------------------------------------------------------- frames

def to_frame(zeta, frame: TaskFrame) -> np.ndarray:
    z = np.asarray(zeta, dtype=float)
    return np.linalg.solve(frame.A, (z - frame.b).T).T


def from_frame(X, frame: TaskFrame) -> np.ndarray:
    return np.asarray(X, dtype=float) @ frame.A.T + frame.b


def project_demos(demos, frames_per_demo) -> np.ndarray:
    """Stack demos seen from each frame: returns (P, N_total, D)."""
    P = len(frames_per_demo[0])
    return np.stack([np.concatenate([to_frame(d, fr[p]) for d, fr in zip(demos, frames_per_demo)])
                     for p in range(P)])


def transport(model: TPGMMModel, frames) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame components in world coordinates: (P, J, D) and (P, J, D, D)."""
    if len(frames) != model.n_frames:
        raise ValidationError(f"model has {model.n_frames} frames, got {len(frames)}")
    means = np.stack([model.means[p] @ f.A.T + f.b for p, f in enumerate(frames)])
    covs = np.stack([f.A @ model.covs[p] @ f.A.T for p, f in enumerate(frames)])
    return means, 0.5 * (covs + np.swapaxes(covs, -1, -2))


def poe(means, covs, ridge: float = 1e-9):
    """Product of Gaussian experts. Returns (mean, cov, regularized flag)."""
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    precs = np.linalg.inv(covs)
    lam = precs.sum(axis=0)
    flagged = False
    if np.linalg.cond(lam) > 1e12:
        lam = lam + ridge * np.eye(lam.shape[0])
        flagged = True
    cov = np.linalg.inv(lam)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ np.einsum("pij,pj->i", precs, means)
    return mean, cov, flagged


# ---------------------------------------------------------------- EM

def _log_gauss(X, mu, cov) -> np.ndarray:
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, (X - mu).T)
    logdet = 2 * np.log(np.diag(L)).sum()
    return -0.5 * (np.sum(z * z, axis=0) + logdet + X.shape[1] * np.log(2 * np.pi))


def _kmeanspp(Z: np.ndarray, J: int, rng: np.random.Generator, iters: int = 10) -> np.ndarray:
    mu = Z.mean(axis=0)
    sd = Z.std(axis=0)
    Zs = (Z - mu) / np.where(sd > 0, sd, 1.0)
    centers = [Zs[rng.integers(len(Zs))]]
    for _ in range(1, J):
        d2 = np.min([np.sum((Zs - c) ** 2, axis=1) for c in centers], axis=0)
        p = d2 / d2.sum() if d2.sum() > 0 else np.full(len(Zs), 1 / len(Zs))
        centers.append(Zs[rng.choice(len(Zs), p=p)])
    C = np.array(centers)
    for _ in range(iters):
        labels = np.argmin(((Zs[:, None, :] - C[None]) ** 2).sum(-1), axis=1)
        for j in range(J):
            if np.any(labels == j):
                C[j] = Zs[labels == j].mean(axis=0)
    return np.argmin(((Zs[:, None, :] - C[None]) ** 2).sum(-1), axis=1)


def _mstep(data, H, psi):
    P, N, D = data.shape
    Nk = H.sum(axis=1)
    priors = Nk / N
    means = np.einsum("jn,pnd->pjd", H, data) / Nk[None, :, None]
    covs = np.empty((P, len(Nk), D, D))
    for p in range(P):
        for j in range(len(Nk)):
            diff = data[p] - means[p, j]
            covs[p, j] = (diff.T * H[j]) @ diff / Nk[j] + (psi / Nk[j]) * np.eye(D)
            covs[p, j] = 0.5 * (covs[p, j] + covs[p, j].T)
    return priors, means, covs


def _estep(data, priors, means, covs, psi):
    P, N, D = data.shape
    J = len(priors)
    logp = np.tile(np.log(priors)[:, None], (1, N))
    for p in range(P):
        for j in range(J):
            logp[j] += _log_gauss(data[p], means[p, j], covs[p, j])
    norm = logsumexp(logp, axis=0)
    H = np.exp(logp - norm)
    # MAP objective: the penalty makes the regularized M-step an exact maximizer.
    penalty = 0.5 * psi * sum(np.trace(np.linalg.inv(covs[p, j])) for p in range(P) for j in range(J))
    return H, float(norm.sum()) - penalty


def em_fit(data, J: int = 6, seed: int = 0, reg: float = 1e-6, max_iter: int = 200,
           tol: float = 1e-6, meta: dict | None = None) -> TPGMMModel:
    """Fit a TP-GMM to ``data`` of shape (P, N, D) (frames, samples, dims).

    Covariances are regularized as ``S_j + (psi / N_j) I`` with
    ``psi = reg * N / J``, the maximizer of the log-likelihood minus
    ``psi/2 * sum tr(Sigma^-1)``; that penalized objective is what the trace
    records and it is non-decreasing. Converges when the per-sample change
    drops below ``tol``.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim == 2:
        data = data[None]
    P, N, D = data.shape
    if J < 1:
        raise ValidationError("J must be >= 1")
    if N < 10 * J * D:
        raise ValidationError(f"need >= {10 * J * D} samples for J={J}, D={D}; got {N}")
    if J == 1:
        warnings.warn("single component", DegenerateComponentWarning, stacklevel=2)
    rng = np.random.default_rng(seed)
    psi = reg * N / J
    labels = _kmeanspp(data.transpose(1, 0, 2).reshape(N, P * D), J, rng) if J > 1 else np.zeros(N, int)
    H = np.zeros((J, N))
    H[labels, np.arange(N)] = 1.0
    H = np.maximum(H, 1e-12)
    H /= H.sum(axis=0)
    trace = []
    for it in range(max_iter):
        priors, means, covs = _mstep(data, H, psi)
        keep = priors >= 1e-6
        if not np.all(keep):
            warnings.warn(f"pruned {np.sum(~keep)} degenerate component(s)",
                          DegenerateComponentWarning, stacklevel=2)
            priors, means, covs = priors[keep] / priors[keep].sum(), means[:, keep], covs[:, keep]
            psi = reg * N / len(priors)
            trace = []  # objective changes with the component set
        H, obj = _estep(data, priors, means, covs, psi)
        trace.append(obj)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) / N < tol:
            break
    priors, means, covs = _mstep(data, H, psi)
    _, obj = _estep(data, priors, means, covs, psi)
    trace.append(obj)
    info = dict(meta or {})
    info.setdefault("phase_range", [float(data[0, :, 0].min()), float(data[0, :, 0].max())])
    info["n_samples"] = N
    info["iterations"] = it + 1
    log.info("EM: J=%d, %d iterations, objective %.6g", len(priors), it + 1, obj)
    return TPGMMModel(priors=priors / priors.sum(), means=means, covs=covs,
                      objective_trace=tuple(trace), meta=info)


def log_likelihood(model: TPGMMModel, data) -> float:
    data = np.asarray(data, dtype=float)
    if data.ndim == 2:
        data = data[None]
    _, obj = _estep(data, model.priors, model.means, model.covs, 0.0)
    return obj


def bic(model: TPGMMModel, data) -> float:
    data = np.asarray(data, dtype=float)
    if data.ndim == 2:
        data = data[None]
    P, N, D = data.shape
    J = model.n_components
    n_params = (J - 1) + P * J * (D + D * (D + 1) / 2)
    return -2 * log_likelihood(model, data) + n_params * np.log(N)


def bic_sweep(data, J_values, seed: int = 0, reg: float = 1e-6) -> dict[int, float]:
    """BIC for each candidate J; informative only, never applied automatically."""
    out = {}
    for J in J_values:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateComponentWarning)
            out[int(J)] = bic(em_fit(data, J, seed=seed, reg=reg), data)
    return out


# ---------------------------------------------------------------- reproduction

def gmr(priors, means, covs, x_in, in_idx=(0,)):
    """Gaussian mixture regression of the remaining dims on ``in_idx``."""
    x_in = np.atleast_2d(np.asarray(x_in, dtype=float).T).T
    i = np.asarray(in_idx)
    o = np.setdiff1d(np.arange(means.shape[1]), i)
    J = len(priors)
    T = x_in.shape[0]
    logw = np.empty((J, T))
    cond_mean = np.empty((J, T, len(o)))
    cond_cov = np.empty((J, len(o), len(o)))
    for j in range(J):
        S_ii = covs[j][np.ix_(i, i)]
        S_oi = covs[j][np.ix_(o, i)]
        gain = np.linalg.solve(S_ii, S_oi.T).T
        logw[j] = np.log(priors[j]) + _log_gauss(x_in, means[j, i], S_ii)
        cond_mean[j] = means[j, o] + (x_in - means[j, i]) @ gain.T
        cond_cov[j] = covs[j][np.ix_(o, o)] - gain @ S_oi.T
    w = np.exp(logw - logsumexp(logw, axis=0))
    mean = np.einsum("jt,jtd->td", w, cond_mean)
    dev = cond_mean - mean[None]
    cov = np.einsum("jt,jde->tde", w, cond_cov) + np.einsum("jt,jtd,jte->tde", w, dev, dev)
    return mean, 0.5 * (cov + np.swapaxes(cov, -1, -2))


@dataclass(frozen=True)
class Reproduction:
    phase: np.ndarray           # (T,)
    combined: GaussianSeq       # over the 10 output dims
    per_frame: tuple            # GaussianSeq per frame, world coordinates
    position: np.ndarray        # (T, 3)
    quaternion: np.ndarray      # (T, 4), unit, w >= 0
    stiffness: np.ndarray       # (T, 3), N/m, positive


def reproduce(model: TPGMMModel, frames, T: int) -> Reproduction:
    if T < 2:
        raise ValidationError("T must be >= 2")
    phase = np.linspace(0.0, 1.0, T)
    lo, hi = model.meta.get("phase_range", (0.0, 1.0))
    if phase[0] < lo - 1e-9 or phase[-1] > hi + 1e-9:
        warnings.warn(f"phase [0, 1] outside training support [{lo:.3g}, {hi:.3g}]",
                      ExtrapolationWarning, stacklevel=2)
    w_means, w_covs = transport(model, frames)
    J = model.n_components
    comb_means = np.empty((J, model.dim))
    comb_covs = np.empty((J, model.dim, model.dim))
    for j in range(J):
        comb_means[j], comb_covs[j], flagged = poe(w_means[:, j], w_covs[:, j])
        if flagged:
            log.warning("component %d: near-singular precision sum regularized", j)
    mean, cov = gmr(model.priors, comb_means, comb_covs, phase)
    per_frame = []
    for p, f in enumerate(frames):
        m_loc, c_loc = gmr(model.priors, model.means[p], model.covs[p], phase)
        A = f.A[1:, 1:]
        per_frame.append(GaussianSeq(m_loc @ A.T + f.b[1:], A @ c_loc @ A.T))
    out = lambda s: (s.start - 1, s.stop - 1)
    pa, pb = out(POS)
    qa, qb = out(QUAT)
    ka, kb = out(LOGK)
    return Reproduction(
        phase=phase,
        combined=GaussianSeq(mean, cov),
        per_frame=tuple(per_frame),
        position=mean[:, pa:pb].copy(),
        quaternion=canonical_quaternion(mean[:, qa:qb]),
        stiffness=np.exp(mean[:, ka:kb]),
    )


def joint_features(phase, position, quaternion, stiffness_diag) -> np.ndarray:
    """Assemble (T, 11) features; stiffness must be positive."""
    stiffness_diag = np.asarray(stiffness_diag, dtype=float)
    if np.any(stiffness_diag <= 0):
        raise ValidationError("stiffness_diag must be positive")
    return np.column_stack([np.asarray(phase, dtype=float), position,
                            canonical_quaternion(quaternion), np.log(stiffness_diag)])


# ---------------------------------------------------------------- serialization

def save_model(model: TPGMMModel, path) -> None:
    doc = {
        "format": "imprsl-tpgmm",
        "format_version": MODEL_VERSION,
        "priors": model.priors.tolist(),
        "means": model.means.tolist(),
        "covs": model.covs.tolist(),
        "objective_trace": list(model.objective_trace),
        "meta": model.meta,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_model(path) -> TPGMMModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "imprsl-tpgmm" or doc.get("format_version") != MODEL_VERSION:
        raise ValidationError(f"{path}: not a version-{MODEL_VERSION} TP-GMM model file")
    return TPGMMModel(np.array(doc["priors"]), np.array(doc["means"]), np.array(doc["covs"]),
                      tuple(doc["objective_trace"]), doc["meta"])
