"""EMG-driven endpoint stiffness of the human arm.

The ellipsoid axes come from the shoulder/elbow/wrist triangle, the
eigenvalues from the co-contraction level:

    K = V diag(1, a1/d1, a2*d2) V^T * (b1*A + b2)

Also here: subject calibration against perturbation-measured stiffness, the
damping law ``D = delta * sqrt(K)`` and an EKF observer for diagonal
stiffness/damping from interaction force.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .datamodel import ArmPose, SubjectParams, ValidationError

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-9


class DegenerateGeometryError(ValidationError):
    pass


class RankDeficiencyError(ValidationError):
    pass


@dataclass(frozen=True)
class ArmGeometry:
    l1: np.ndarray  # shoulder -> elbow
    l2: np.ndarray  # shoulder -> wrist
    l3: np.ndarray  # elbow -> its foot point on l2
    l4: np.ndarray  # unit normal of the arm plane, along l2 x l1
    d1: float
    d2: float


@dataclass(frozen=True)
class StiffnessEllipsoid:
    K: np.ndarray
    V: np.ndarray
    H: np.ndarray

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.diag(self.H).copy()


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    n = np.linalg.norm(v)
    if n <= 1e-12:
        raise DegenerateGeometryError(f"degenerate configuration: {what} has zero length")
    return v / n


def arm_geometry(pose: ArmPose) -> ArmGeometry:
    l1 = pose.elbow - pose.shoulder
    l2 = pose.wrist - pose.shoulder
    n = np.cross(l2, l1)
    if np.linalg.norm(n) <= 1e-9:
        raise DegenerateGeometryError("degenerate configuration: shoulder, elbow and wrist are collinear")
    u2 = _unit(np.cross(n, l2), "(l2 x l1) x l2")
    along = float(l1 @ u2)
    return ArmGeometry(
        l1=l1, l2=l2,
        l3=-along * u2,
        l4=_unit(n, "l2 x l1"),
        d1=float(np.linalg.norm(l2)),
        d2=abs(along),
    )


def eigen_axes(geom: ArmGeometry) -> np.ndarray:
    """Columns: along the forearm-to-shoulder line, in-plane normal, plane normal."""
    n = np.cross(geom.l2, geom.l1)
    c1 = _unit(geom.l2, "l2")
    c2 = _unit(np.cross(n, geom.l2), "(l2 x l1) x l2")
    c3 = _unit(n, "l2 x l1")
    return np.column_stack([c1, c2, c3])


def alpha(A, params: SubjectParams):
    """Synergistic contribution of co-contraction, N/m."""
    A = np.asarray(A, dtype=float)
    if np.any(A < 0) or np.any(A > 1):
        raise ValidationError("co-contraction must lie in [0, 1]")
    out = params.b1 * A + params.b2
    if np.any(out <= 0):
        raise ValidationError("alpha(A) must be positive")
    return out if out.ndim else float(out)


def shape_eigenvalues(geom: ArmGeometry, params: SubjectParams) -> np.ndarray:
    return np.array([1.0, params.a1 / geom.d1, params.a2 * geom.d2])


def endpoint_stiffness(pose: ArmPose, A: float, params: SubjectParams) -> StiffnessEllipsoid:
    geom = arm_geometry(pose)
    V = eigen_axes(geom)
    H = np.diag(alpha(A, params) * shape_eigenvalues(geom, params))
    K = V @ H @ V.T
    return StiffnessEllipsoid(K=0.5 * (K + K.T), V=V, H=H)


def check_spd(K, name: str = "K", tol: float = 0.0) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValidationError(f"{name} must be square, got {K.shape}")
    if not np.all(np.isfinite(K)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.max(np.abs(K - K.T)) > 1e-8 * max(1.0, np.max(np.abs(K))):
        raise ValidationError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(K).min() <= tol:
        raise ValidationError(f"{name} is not positive definite")
    return K


def spd_sqrt(K) -> np.ndarray:
    """Principal square root of an SPD matrix, eigenvalues floored at 1e-9."""
    w, U = np.linalg.eigh(0.5 * (K + np.swapaxes(K, -1, -2)))
    r = np.sqrt(np.maximum(w, EIG_FLOOR))
    return (U * r[..., None, :]) @ np.swapaxes(U, -1, -2)


def damping_from_stiffness(K, delta: float = 2.0) -> np.ndarray:
    check_spd(K)
    return delta * spd_sqrt(K)


# ---------------------------------------------------------------- calibration

@dataclass(frozen=True)
class CalibrationResult:
    params: SubjectParams
    residual: float  # sum of squared Frobenius errors, (N/m)^2
    per_observation: np.ndarray  # Frobenius error per observation, N/m
    starts: int


def _design_blocks(geoms, Vs, A, a1, a2):
    """Stacked vec(A*M) and vec(M) columns for the (b1, b2) linear step."""
    cols_b1, cols_b2 = [], []
    for g, V, a in zip(geoms, Vs, A):
        M = (V * np.array([1.0, a1 / g.d1, a2 * g.d2])) @ V.T
        cols_b1.append((a * M).ravel())
        cols_b2.append(M.ravel())
    return np.column_stack([np.concatenate(cols_b1), np.concatenate(cols_b2)])


def calibrate(observations, seed: int = 0, n_starts: int = 5,
              bounds=(1e-4, 50.0), delta: float = 2.0) -> CalibrationResult:
    """Fit (a1, a2, b1, b2) to measured stiffness matrices.

    ``observations`` is a sequence of ``(ArmPose, A, K_measured)``. For fixed
    (a1, a2) the model is linear in (b1, b2), which are solved by
    non-negative least squares; (a1, a2) are searched by bounded
    Nelder-Mead from ``n_starts`` seeded points.
    """
    obs = list(observations)
    if len(obs) < 4:
        raise RankDeficiencyError(f"need >= 4 observations, got {len(obs)}")
    A = np.array([float(o[1]) for o in obs])
    levels = np.unique(np.round(A, 9))
    poses = {tuple(np.round(o[0].as_array().ravel(), 9)) for o in obs}
    if len(levels) < 2:
        raise RankDeficiencyError("all observations share one co-contraction level; b1 and b2 are not separable")
    if len(poses) < 2:
        raise RankDeficiencyError("need >= 2 distinct arm poses")
    geoms = [arm_geometry(o[0]) for o in obs]
    Vs = [eigen_axes(g) for g in geoms]
    Kms = np.array([check_spd(o[2], "K_measured", tol=-np.inf) for o in obs])
    y = Kms.reshape(-1)
    scale = float(y @ y)

    def solve_b(a):
        X = _design_blocks(geoms, Vs, A, a[0], a[1])
        b, rnorm = optimize.nnls(X, y)
        return b, rnorm ** 2

    def objective(a):
        return solve_b(a)[1] / scale

    rng = np.random.default_rng(seed)
    lo, hi = bounds
    starts = np.exp(rng.uniform(np.log(0.05), np.log(10.0), size=(n_starts, 2)))
    best = None
    for x0 in starts:
        res = optimize.minimize(objective, x0, method="Nelder-Mead", bounds=[bounds, bounds],
                                options={"xatol": 1e-6, "fatol": 1e-12, "maxfev": 1500, "adaptive": True})
        if best is None or res.fun < best.fun:
            best = res
    # polish only the winning start
    best = optimize.minimize(objective, best.x, method="Nelder-Mead", bounds=[bounds, bounds],
                             options={"xatol": 1e-13, "fatol": 1e-30, "maxfev": 4000, "adaptive": True})
    a1, a2 = np.clip(best.x, lo, hi)
    b, sse = solve_b((a1, a2))
    X = _design_blocks(geoms, Vs, A, a1, a2)
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0] or np.any(b <= 0):
        raise RankDeficiencyError("observations do not identify b1 and b2")
    params = SubjectParams(float(a1), float(a2), float(b[0]), float(b[1]), delta)
    model = (X @ b).reshape(len(obs), 3, 3)
    per = np.linalg.norm((model - Kms).reshape(len(obs), -1), axis=1)
    return CalibrationResult(params=params, residual=float(sse), per_observation=per, starts=n_starts)


def perturbation_stiffness(displacements, forces) -> np.ndarray:
    """Least-squares stiffness from ``F = K x`` perturbation samples, symmetrized."""
    X = np.asarray(displacements, dtype=float)
    F = np.asarray(forces, dtype=float)
    if X.shape != F.shape or X.ndim != 2 or X.shape[1] != 3:
        raise ValidationError(f"expected matching (m, 3) arrays, got {X.shape} and {F.shape}")
    if X.shape[0] < 6:
        raise RankDeficiencyError(f"need >= 6 perturbation samples, got {X.shape[0]}")
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= 1e-9 * sv[0]:
        raise RankDeficiencyError("perturbations do not span three independent directions")
    Kt, *_ = np.linalg.lstsq(X, F, rcond=None)
    K = Kt.T
    return 0.5 * (K + K.T)


# ---------------------------------------------------------------- EKF observer

@dataclass(frozen=True)
class EkfNoise:
    q_k: float = 1.0    # stiffness random-walk variance per step, (N/m)^2
    q_d: float = 0.01   # damping random-walk variance per step, (N s/m)^2
    r: float = 0.01     # force measurement variance, N^2

    @property
    def Q(self) -> np.ndarray:
        return np.diag([self.q_k] * 3 + [self.q_d] * 3)

    @property
    def R(self) -> np.ndarray:
        return self.r * np.eye(3)


@dataclass(frozen=True)
class EkfState:
    k_hat: np.ndarray
    d_hat: np.ndarray
    P: np.ndarray
    nis: float = float("nan")
    reconditioned: bool = False

    @property
    def s(self) -> np.ndarray:
        return np.concatenate([self.k_hat, self.d_hat])

    @classmethod
    def initial(cls, k0=100.0, d0=10.0, var_k=1e4, var_d=1e2) -> "EkfState":
        return cls(np.full(3, float(k0)), np.full(3, float(d0)),
                   np.diag([var_k] * 3 + [var_d] * 3))


def measurement(s: np.ndarray, err: np.ndarray, vel: np.ndarray) -> np.ndarray:
    """Quasi-static force balance F = K (x_d - x) - D xdot, per axis."""
    return s[:3] * err - s[3:] * vel


def ekf_step(state: EkfState, err, vel, f_meas, dt: float,
             noise: EkfNoise = EkfNoise()) -> EkfState:
    """One predict/update cycle with a random-walk process model.

    ``err`` is x_d - x, ``vel`` the TCP velocity and ``f_meas`` the measured
    external force. ``dt`` only validates the cycle; the random-walk noise
    is specified per step.
    """
    if not dt > 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    err = np.asarray(err, dtype=float)
    vel = np.asarray(vel, dtype=float)
    z = np.asarray(f_meas, dtype=float)
    s = state.s
    P = state.P + noise.Q
    H = np.hstack([np.diag(err), -np.diag(vel)])
    S = H @ P @ H.T + noise.R
    S_inv = np.linalg.inv(S)
    innov = z - measurement(s, err, vel)
    G = P @ H.T @ S_inv
    s = s + G @ innov
    I_GH = np.eye(6) - G @ H
    P = I_GH @ P @ I_GH.T + G @ noise.R @ G.T
    P = 0.5 * (P + P.T)
    reconditioned = False
    w, U = np.linalg.eigh(P)
    if w.min() < 0:
        P = (U * np.maximum(w, 1e-12)) @ U.T
        reconditioned = True
        log.debug("EKF covariance reconditioned (min eig %.3g)", w.min())
    s = np.maximum(s, 0.0)
    return EkfState(s[:3], s[3:], P, nis=float(innov @ S_inv @ innov), reconditioned=reconditioned)
