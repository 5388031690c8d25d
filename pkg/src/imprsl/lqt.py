"""Batch linear-quadratic tracking on a per-axis double integrator.

Targets from both task frames enter as a sum of quadratic tracking terms;
the control effort is penalized by ``R``. The lifted system
``X = Sx x0 + Su U`` turns the problem into one linear least-squares
solve. The optimal trajectory then shapes the impedance schedule together
with the reproduced stiffness.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lapack

from .datamodel import ImpedanceSchedule, Timebase, ValidationError, canonical_quaternion
from .stiffness import spd_sqrt

log = logging.getLogger(__name__)

DEFAULT_R = 1e-4


@dataclass(frozen=True)
class LqtProblem:
    dt: float
    targets: np.ndarray     # (P, T, d) position targets per frame
    precisions: np.ndarray  # (P, T, d, d) PSD
    R: np.ndarray           # ((T-1) d, (T-1) d) SPD
    x0: np.ndarray          # (2d,) initial position and velocity

    @property
    def T(self) -> int:
        return self.targets.shape[1]

    @property
    def d(self) -> int:
        return self.targets.shape[2]


@dataclass(frozen=True)
class LqtSolution:
    dt: float
    x: np.ndarray   # (T, 2d) positions then velocities
    u: np.ndarray   # (T-1, d) accelerations
    cost: float
    kkt_residual: float
    regularized: bool

    @property
    def position(self) -> np.ndarray:
        return self.x[:, : self.u.shape[1]]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[:, self.u.shape[1]:]


def double_integrator(dt: float, d: int) -> tuple[np.ndarray, np.ndarray]:
    I = np.eye(d)
    A = np.block([[I, dt * I], [np.zeros((d, d)), I]])
    B = np.vstack([0.5 * dt ** 2 * I, dt * I])
    return A, B


def lifted(dt: float, d: int, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Sx (T*2d, 2d) and Su (T*2d, (T-1)*d) with X = Sx x0 + Su U."""
    A, B = double_integrator(dt, d)
    n = 2 * d
    powers = np.empty((T, n, n))
    powers[0] = np.eye(n)
    for k in range(1, T):
        powers[k] = A @ powers[k - 1]
    gains = powers[:-1] @ B
    Su = np.zeros((T, n, T - 1, d))
    s = np.arange(T - 1)
    for k in range(T - 1):
        Su[s[: T - 1 - k] + 1 + k, :, s[: T - 1 - k], :] = gains[k]
    return powers.reshape(T * n, n), Su.reshape(T * n, (T - 1) * d)


def lifted_scalar(dt: float, T: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Factored lifting for the per-axis double integrator.

    Returns Sx (T, 2, 2), Lp (T, T-1) and Lv (T, T-1) such that position and
    velocity of every axis are Sx[:, 0] x0_axis + Lp U_axis and
    Sx[:, 1] x0_axis + Lv U_axis; ``lifted`` is their Kronecker product with I_d.
    """
    Sx, Su = lifted(dt, 1, T)
    Su = Su.reshape(T, 2, T - 1)
    return Sx.reshape(T, 2, 2), np.ascontiguousarray(Su[:, 0]), np.ascontiguousarray(Su[:, 1])


def _is_spd(M: np.ndarray) -> bool:
    if not np.allclose(M, M.T):
        return False
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


def build_problem(seqs, R=DEFAULT_R, dt: float = 0.01, dims=slice(0, 3),
                  x0=None) -> LqtProblem:
    """Assemble tracking terms from one Gaussian sequence per frame.

    ``seqs`` carry ``mean`` (T, D) and ``cov`` (T, D, D); ``dims`` selects the
    tracked position block. ``R`` is a scalar (``r I``), a (d, d) per-step
    matrix or the full lifted matrix.
    """
    seqs = list(seqs)
    T = seqs[0].mean.shape[0]
    if any(s.mean.shape[0] != T for s in seqs):
        raise ValidationError("frame sequences do not share a timebase")
    if T < 2:
        raise ValidationError("horizon must be >= 2")
    targets = np.stack([s.mean[:, dims] for s in seqs])
    precisions = []
    for s in seqs:
        c = s.cov[:, dims, dims]
        lam = np.linalg.inv(c)
        precisions.append(0.5 * (lam + np.swapaxes(lam, 1, 2)))
    precisions = np.stack(precisions)
    d = targets.shape[2]
    R = np.asarray(R, dtype=float)
    if R.ndim == 0:
        if not float(R) > 0:
            raise ValidationError("R must be SPD")
        R = float(R) * np.eye((T - 1) * d)
    elif R.shape == (d, d):
        if not _is_spd(R):
            raise ValidationError("R must be SPD")
        R = np.kron(np.eye(T - 1), R)
    elif R.shape != ((T - 1) * d, (T - 1) * d) or not _is_spd(R):
        raise ValidationError("R must be SPD")
    if x0 is None:
        lam0 = precisions[:, 0].sum(axis=0)
        p0 = np.linalg.lstsq(lam0, np.einsum("pij,pj->i", precisions[:, 0], targets[:, 0]), rcond=None)[0]
        x0 = np.concatenate([p0, np.zeros(d)])
    return LqtProblem(dt=dt, targets=targets, precisions=precisions, R=R, x0=np.asarray(x0, float))


def single_frame(targets, precisions, R=DEFAULT_R, dt: float = 0.01, x0=None) -> LqtProblem:
    """Problem with one frame from raw (T, d) targets and (T, d, d) precisions."""
    targets = np.asarray(targets, dtype=float)
    precisions = np.asarray(precisions, dtype=float)
    T, d = targets.shape
    R = np.asarray(R, dtype=float)
    R = float(R) * np.eye((T - 1) * d) if R.ndim == 0 else R
    if x0 is None:
        x0 = np.concatenate([targets[0], np.zeros(d)])
    return LqtProblem(dt, targets[None], precisions[None], R, np.asarray(x0, float))


def tracking_cost(problem: LqtProblem, x: np.ndarray, u: np.ndarray) -> float:
    pos = x[:, : problem.d]
    diff = problem.targets - pos[None]
    track = np.einsum("pti,ptij,ptj->", diff, problem.precisions, diff)
    uf = u.reshape(-1)
    return float(track + uf @ problem.R @ uf)


def solve(problem: LqtProblem) -> LqtSolution:
    T, d = problem.T, problem.d
    Sx, Lp, Lv = lifted_scalar(problem.dt, T)
    lam = problem.precisions.sum(axis=0)
    weighted = np.einsum("ptij,ptj->ti", problem.precisions, problem.targets)
    # only position rows carry weight, so N assembles per axis pair from Lp
    x0 = problem.x0.reshape(2, d)
    free = np.einsum("tk,kd->td", Sx[:, 0], x0)
    N = np.empty((T - 1, d, T - 1, d))
    for i in range(d):
        for j in range(i, d):
            block = Lp.T @ (lam[:, i, j, None] * Lp)
            N[:, i, :, j] = block
            N[:, j, :, i] = block.T
    N = N.reshape((T - 1) * d, (T - 1) * d) + problem.R
    rhs = (Lp.T @ (weighted - np.einsum("tij,tj->ti", lam, free))).reshape(-1)
    regularized = False
    try:
        factor = cho_factor(N)
        rcond, _ = lapack.dpocon(factor[0], np.abs(N).sum(axis=0).max(), uplo="L" if factor[1] else "U")
        ill = rcond < 1e-14
    except np.linalg.LinAlgError:
        ill = True
    if ill:
        N = N + 1e-10 * np.eye(N.shape[0])
        regularized = True
        log.warning("LQT normal equations near-singular; ridge 1e-10 applied")
        factor = cho_factor(N)
    U = cho_solve(factor, rhs)
    kkt = np.linalg.norm(N @ U - rhs) / max(np.linalg.norm(rhs), 1e-300)
    u = U.reshape(T - 1, d)
    X = np.hstack([free + Lp @ u, np.einsum("tk,kd->td", Sx[:, 1], x0) + Lv @ u])
    return LqtSolution(problem.dt, X, u, tracking_cost(problem, X, u), float(kkt), regularized)


def rollout(x0, u, dt: float) -> np.ndarray:
    """Replay controls through the double integrator."""
    u = np.asarray(u, dtype=float)
    d = u.shape[1]
    A, B = double_integrator(dt, d)
    xs = [np.asarray(x0, dtype=float)]
    for uk in u:
        xs.append(A @ xs[-1] + B @ uk)
    return np.array(xs)


def schedule(solution: LqtSolution, stiffness_diag, V_axes, delta: float = 2.0,
             quaternion=None) -> ImpedanceSchedule:
    """Couple the LQT trajectory with the reproduced stiffness.

    ``K_t = V_t diag(k_t) V_t^T`` and ``D_t = delta sqrt(K_t)``; ``V_axes`` is
    (T, 3, 3) or a constant (3, 3).
    """
    k = np.asarray(stiffness_diag, dtype=float)
    T = solution.x.shape[0]
    if k.shape != (T, 3):
        raise ValidationError(f"stiffness_diag must be ({T}, 3), got {k.shape}")
    if np.any(k <= 0):
        raise ValidationError("stiffness must be positive")
    V = np.broadcast_to(np.asarray(V_axes, dtype=float), (T, 3, 3))
    K = np.einsum("tij,tj,tkj->tik", V, k, V)
    K = 0.5 * (K + np.swapaxes(K, 1, 2))
    D = delta * spd_sqrt(K)
    q = np.tile([1.0, 0, 0, 0], (T, 1)) if quaternion is None else canonical_quaternion(quaternion)
    x_d = np.hstack([solution.position, q])
    return ImpedanceSchedule(Timebase(solution.dt, T), x_d, K, D)
