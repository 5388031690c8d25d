"""Whole-body variable impedance control for a torso shared by two arms.

Each chain (torso joints followed by one arm) receives a Cartesian
impedance torque and a secondary torque filtered through the null space of
its task. The left chain leads: its secondary task is a torso posture PD.
The right chain follows by taking the leader's torso torque as its
secondary task. The torso itself is velocity-controlled through an
admittance driven by the leader's torso torque and the measured hand
forces.

Time-varying gains are screened by an eigenvalue rate condition that keeps
the varying impedance passive (a conservative sufficient condition with
margin ``gamma``), and commanded stiffness changes are rate-limited to it.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .datamodel import ImpedanceSchedule, ValidationError
from .stiffness import check_spd

log = logging.getLogger(__name__)

DLS_LAMBDA = 1e-4
SINGULAR_SV = 1e-2
GAMMA = 0.5


# ---------------------------------------------------------------- algebra

def task_torque(J, x, x_d, xdot, K, D, xdot_d=None, orientation=None) -> np.ndarray:
    """``J^T (-K (x - x_d) - D (xdot - xdot_d))``.

    ``J`` has 3 (translational) or 6 rows. With 6 rows the rotational wrench
    comes from ``orientation = (rot_err, omega, K_rot, D_rot)`` as
    ``K_rot rot_err - D_rot omega``; without it the rotational rows get zero
    wrench. ``xdot_d`` defaults to zero (absolute-velocity damping).
    """
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] not in (3, 6):
        raise ValidationError(f"Jacobian must have 3 or 6 rows, got shape {J.shape}")
    x, x_d, xdot = (np.asarray(v, dtype=float) for v in (x, x_d, xdot))
    K = np.asarray(K, dtype=float)
    D = np.asarray(D, dtype=float)
    if x.shape != (3,) or x_d.shape != (3,) or xdot.shape != (3,) or K.shape != (3, 3) or D.shape != (3, 3):
        raise ValidationError("task vectors must be 3-vectors and gains 3x3")
    v = xdot if xdot_d is None else xdot - np.asarray(xdot_d, dtype=float)
    F = -K @ (x - x_d) - D @ v
    if J.shape[0] == 6:
        if orientation is None:
            W = np.concatenate([F, np.zeros(3)])
        else:
            err, omega, Kr, Dr = (np.asarray(a, dtype=float) for a in orientation)
            W = np.concatenate([F, Kr @ err - Dr @ omega])
        return J.T @ W
    return J.T @ F


@dataclass(frozen=True)
class Projector:
    N: np.ndarray
    J_pinv: np.ndarray   # n x m generalized inverse
    damped: bool


def nullspace_projector(J, M=None, weighting: str = "damped", damping: float = DLS_LAMBDA) -> Projector:
    """``N = I - J^T J_pinv^T`` for the torque-level null space of ``J``.

    ``weighting="damped"``: Moore-Penrose inverse, switching to damped least
    squares with ``damping`` when the smallest singular value of ``J`` drops
    below 1e-2 (flagged). ``weighting="inertia"``: dynamically consistent
    inverse ``M^-1 J^T (J M^-1 J^T)^-1``.
    """
    J = np.asarray(J, dtype=float)
    m, n = J.shape
    sv = np.linalg.svd(J, compute_uv=False)
    damped = m > n or sv[min(m, n) - 1] < SINGULAR_SV
    if weighting == "inertia":
        if M is None:
            raise ValidationError("inertia weighting needs the joint-space inertia M")
        Minv_Jt = np.linalg.solve(np.asarray(M, dtype=float), J.T)
        L = J @ Minv_Jt
        if damped:
            L = L + damping ** 2 * np.eye(m)
        J_pinv = Minv_Jt @ np.linalg.inv(L)
    elif weighting == "damped":
        JJt = J @ J.T
        if damped:
            JJt = JJt + damping ** 2 * np.eye(m)
        J_pinv = J.T @ np.linalg.inv(JJt)
    else:
        raise ValidationError(f"unknown weighting {weighting!r}")
    if damped:
        log.debug("damped generalized inverse engaged (sigma_min=%.3g)", sv[-1])
    return Projector(np.eye(n) - J.T @ J_pinv.T, J_pinv, damped)


def follower_tau0(tau_torso, n_arm: int) -> np.ndarray:
    """Follower secondary torque: the leader's torso torque, zero on the arm."""
    return np.concatenate([np.asarray(tau_torso, dtype=float), np.zeros(n_arm)])


# ---------------------------------------------------------------- torso admittance

@dataclass(frozen=True)
class TorsoAdmittance:
    M_adm: np.ndarray
    D_adm: np.ndarray
    qd: np.ndarray = field(default_factory=lambda: np.zeros(3))
    qd_max: float = 0.5

    def __post_init__(self):
        check_spd(self.M_adm, "M_adm")
        check_spd(self.D_adm, "D_adm")

    @classmethod
    def default(cls) -> "TorsoAdmittance":
        return cls(np.diag([20.0, 20.0, 20.0]), np.diag([300.0, 300.0, 600.0]))


def torso_admittance_step(adm: TorsoAdmittance, tau_vir, tau_ext, dt: float):
    """Semi-implicit Euler step of ``M qdd + D qd = tau_vir + tau_ext``.

    Returns the updated admittance, the velocity command and whether it was
    clipped to ``qd_max`` (per component).
    """
    if not dt > 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    tau = np.asarray(tau_vir, dtype=float) + np.asarray(tau_ext, dtype=float)
    A = adm.M_adm / dt + adm.D_adm
    qd = np.linalg.solve(A, adm.M_adm @ adm.qd / dt + tau)
    clipped = np.clip(qd, -adm.qd_max, adm.qd_max)
    saturated = bool(np.any(clipped != qd))
    return replace(adm, qd=clipped), clipped, saturated


# ---------------------------------------------------------------- hybrid force

@dataclass
class HybridForceController:
    """PI regulation of the normal force with a clamped integrator."""

    kp: float = 0.3
    ki: float = 4.0
    i_limit: float = 10.0     # N, bound on the integral contribution
    integral: float = 0.0
    saturated: bool = False

    def update(self, f_meas: float, f_target: float, dt: float) -> float:
        if not np.isfinite(f_target):
            raise ValidationError("force target must be finite")
        e = f_target - f_meas
        new = self.integral + self.ki * e * dt
        self.saturated = abs(new) > self.i_limit
        self.integral = float(np.clip(new, -self.i_limit, self.i_limit))
        return self.kp * e + self.integral

    def reset(self):
        self.integral = 0.0
        self.saturated = False


# ---------------------------------------------------------------- passivity

def passivity_matrix(K0, D0, K1, D1, dt: float, gamma: float = GAMMA) -> np.ndarray:
    """``Kdot + a Ddot - 2 a K`` with ``a = gamma * lambda_min(D)``; passive if NSD."""
    a = gamma * np.linalg.eigvalsh(D1)[0]
    Kd = (K1 - K0) / dt
    Dd = (D1 - D0) / dt
    P = Kd + a * Dd - 2.0 * a * K1
    return 0.5 * (P + P.T)


def passivity_margin(K0, D0, K1, D1, dt: float, gamma: float = GAMMA) -> float:
    """``-lambda_max`` of :func:`passivity_matrix`; nonnegative means the step passes."""
    return float(-np.linalg.eigvalsh(passivity_matrix(K0, D0, K1, D1, dt, gamma))[-1])


@dataclass(frozen=True)
class PassivityReport:
    passed: bool
    first_violation: int | None   # index of the step whose change violates the bound
    margins: np.ndarray           # per transition, (n-1,)
    min_relative_margin: float    # min over steps of margin / (2 a lambda_min(K))


def passivity_check(schedule: ImpedanceSchedule, gamma: float = GAMMA, tol: float = 1e-9) -> PassivityReport:
    K, D, dt = schedule.K, schedule.D, schedule.timebase.dt
    margins = np.empty(schedule.n - 1)
    rel = np.inf
    for t in range(schedule.n - 1):
        margins[t] = passivity_margin(K[t], D[t], K[t + 1], D[t + 1], dt, gamma)
        scale = 2 * gamma * np.linalg.eigvalsh(D[t + 1])[0] * np.linalg.eigvalsh(K[t + 1])[0]
        rel = min(rel, margins[t] / scale)
    bad = np.flatnonzero(margins < -tol * np.maximum(1.0, np.abs(K[1:]).max(axis=(1, 2))))
    first = int(bad[0]) + 1 if bad.size else None
    return PassivityReport(first is None, first, margins, float(rel))


def rate_limit(K0, D0, K_new, D_new, dt: float, gamma: float = GAMMA, iters: int = 30):
    """Move from (K0, D0) toward the target as far as the passivity bound allows.

    Returns ``(K, D, s)`` with ``s`` in [0, 1] the fraction of the step taken.
    ``s = 1`` (the exact target) whenever the full step already passes.
    """
    if passivity_margin(K0, D0, K_new, D_new, dt, gamma) >= 0:
        return K_new, D_new, 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if passivity_margin(K0, D0, K0 + mid * (K_new - K0), D0 + mid * (D_new - D0), dt, gamma) >= 0:
            lo = mid
        else:
            hi = mid
    return K0 + lo * (K_new - K0), D0 + lo * (D_new - D0), lo


# ---------------------------------------------------------------- controller

@dataclass(frozen=True)
class WbcConfig:
    gamma: float = GAMMA
    weighting: str = "damped"
    damping_lambda: float = DLS_LAMBDA
    relative_velocity: bool = False
    rate_limit: bool = True
    torso_kp: float = 200.0
    torso_kd: float = 60.0
    null_damping: float = 0.5
    hybrid_z: bool = False
    force_target: float = 10.0
    hybrid_kp: float = 0.3
    hybrid_ki: float = 4.0
    hybrid_i_limit: float = 10.0
    hybrid_damping: float = 20.0


@dataclass(frozen=True)
class ChainFeedback:
    x: np.ndarray       # TCP position
    xdot: np.ndarray    # TCP velocity
    J: np.ndarray       # 3 x n_chain translational Jacobian over the chain joints


@dataclass(frozen=True)
class ChainReference:
    x_d: np.ndarray
    K: np.ndarray
    D: np.ndarray
    xdot_d: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class Feedback:
    t: float
    q: np.ndarray
    qd: np.ndarray
    G: np.ndarray                 # gravity torque of the whole plant
    chains: tuple                 # (leader, follower) ChainFeedback
    hand_forces: np.ndarray       # (2, 3) force on each hand from the environment
    torso_ref: np.ndarray         # torso posture target
    M: np.ndarray | None = None   # joint-space inertia, for inertia weighting
    torso_ref_rate: np.ndarray | None = None  # planned torso velocity, fed forward to the servo


@dataclass(frozen=True)
class Command:
    tau: np.ndarray           # full joint torque vector (torso entries are the feedforward)
    qd_torso: np.ndarray
    tau_torso_ff: np.ndarray
    K_cmd: tuple              # commanded stiffness per chain after scaling and rate limit
    fallback: bool


LOG_COLUMNS = ["t", "tau_task_l", "tau_task_r", "tau_null_l", "tau_null_r", "err_l", "err_r",
               "k1", "k2", "k3", "rho", "passivity_margin", "rate_fraction", "torso_saturated",
               "projector_damped", "fallback"]


class WholeBodyController:
    """Owns all mutable controller state for one control loop."""

    def __init__(self, chains, n_torso: int, config: WbcConfig = WbcConfig(),
                 admittance: TorsoAdmittance | None = None):
        self.chains = [np.asarray(c, dtype=int) for c in chains]
        if len(self.chains) != 2:
            raise ValidationError("expected a leader and a follower chain")
        self.n_torso = n_torso
        self.config = config
        self.adm = admittance or TorsoAdmittance.default()
        self.hybrid = HybridForceController(config.hybrid_kp, config.hybrid_ki, config.hybrid_i_limit)
        self._prev = [None, None]
        self.log: list[list] = []

    def reset_gains(self, refs):
        self._prev = [(np.array(r.K, float), np.array(r.D, float)) for r in refs]

    def _gains(self, i: int, ref: ChainReference, rho: float, dt: float):
        K = ref.K * rho
        D = ref.D * np.sqrt(rho)
        if self._prev[i] is None or not self.config.rate_limit:
            self._prev[i] = (K, D)
            return K, D, 1.0, np.inf
        K0, D0 = self._prev[i]
        K, D, s = rate_limit(K0, D0, K, D, dt, self.config.gamma)
        margin = passivity_margin(K0, D0, K, D, dt, self.config.gamma)
        self._prev[i] = (K, D)
        return K, D, s, margin

    def control_step(self, fb: Feedback, refs, rho: float, dt: float) -> Command:
        try:
            return self._step(fb, refs, float(rho), dt)
        except (ValidationError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.error("control cycle aborted at t=%.3f: %s; zero-torque fallback", fb.t, exc)
            n = len(fb.q)
            self.log.append([fb.t] + [0.0] * 6 + [np.nan] * 3 + [rho, np.nan, 0.0, 0, 0, 1])
            return Command(np.zeros(n), np.zeros(self.n_torso), np.zeros(self.n_torso), (None, None), True)

    def _step(self, fb: Feedback, refs, rho: float, dt: float) -> Command:
        cfg = self.config
        nt = self.n_torso
        if not (np.isfinite(rho) and rho > 0):
            raise ValidationError(f"regulatory factor must be positive, got {rho}")
        tau_full = np.zeros(len(fb.q))
        task_norms, null_norms, errs, Ks = [], [], [], []
        margins, fracs, damped_any = [], [], False
        tau_leader = None
        hybrid_corr = None
        if cfg.hybrid_z:
            fz = float(fb.hand_forces[0, 2] + fb.hand_forces[1, 2])
            hybrid_corr = self.hybrid.update(fz, cfg.force_target, dt)
        for i, (idx, ch, ref) in enumerate(zip(self.chains, fb.chains, refs)):
            K, D, s, margin = self._gains(i, ref, rho, dt)
            margins.append(margin)
            fracs.append(s)
            Ks.append(K)
            v = ch.xdot - ref.xdot_d if cfg.relative_velocity else ch.xdot
            F = -K @ (ch.x - ref.x_d) - D @ v
            if hybrid_corr is not None:
                F[2] = -0.5 * (cfg.force_target + hybrid_corr) - cfg.hybrid_damping * ch.xdot[2]
            tau_task = ch.J.T @ F
            M_chain = None if fb.M is None else fb.M[np.ix_(idx, idx)]
            proj = nullspace_projector(ch.J, M_chain, cfg.weighting, cfg.damping_lambda)
            damped_any |= proj.damped
            if i == 0:
                qt, qdt = fb.q[idx[:nt]], fb.qd[idx[:nt]]
                qdt_ref = np.zeros(nt) if fb.torso_ref_rate is None else fb.torso_ref_rate
                tau0 = np.concatenate([cfg.torso_kp * (fb.torso_ref - qt) + cfg.torso_kd * (qdt_ref - qdt),
                                       -cfg.null_damping * fb.qd[idx[nt:]]])
            else:
                tau0 = follower_tau0(tau_leader[:nt], len(idx) - nt)
            tau_null = proj.N @ tau0
            tau_i = tau_task + tau_null
            if i == 0:
                tau_leader = tau_i
            arm = idx[nt:]
            tau_full[arm] = tau_i[nt:] + fb.G[arm]
            task_norms.append(float(np.linalg.norm(tau_task)))
            null_norms.append(float(np.linalg.norm(tau_null)))
            errs.append(float(np.linalg.norm(ch.x - ref.x_d)))
        tau_ext = fb.hand_forces[0] + fb.hand_forces[1]
        self.adm, qd_cmd, sat = torso_admittance_step(self.adm, tau_leader[:nt], tau_ext, dt)
        if fb.torso_ref_rate is not None:
            qd_cmd = qd_cmd + fb.torso_ref_rate
        torso = self.chains[0][:nt]
        tau_full[torso] = fb.G[torso]
        k_eig = np.linalg.eigvalsh(Ks[0])
        self.log.append([fb.t, *task_norms, *null_norms, *errs, *k_eig, rho, min(margins), min(fracs),
                         int(sat), int(damped_any), 0])
        return Command(tau_full, qd_cmd, fb.G[torso].copy(), tuple(Ks), False)

    def write_log(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(LOG_COLUMNS)
            for row in self.log:
                w.writerow([repr(float(v)) for v in row])
