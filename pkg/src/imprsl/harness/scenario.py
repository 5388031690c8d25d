"""Closed-loop scenario runs and the interaction-quality metrics.

A run couples the whole-body controller (1 kHz) to the world; references,
EMG and the regulatory factor update at 100 Hz. Methods differ only in how
the commanded impedance is produced:

- ``FIC``: constant K = 300 N/m, D = 34.641 N s/m per axis.
- ``EMG-VIC``: stiffness linear in the partner's streamed co-contraction
  (increasing in leader-follower tasks, decreasing in mutual adaptation).
- ``EKF-VIC``: stiffness set from an online EKF estimate of the partner's
  impedance around the shared reference.
- ``ABLATION``: the learned schedule as is.
- ``HI-ImpRSL``: the learned schedule scaled online by the regulatory factor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .. import emg, regnet
from ..datamodel import CANONICAL_DT, TABLE_I, ImpedanceSchedule, SubjectParams, ValidationError, rng_for
from ..interaction import differentiate
from ..stiffness import EkfNoise, EkfState, ekf_step, endpoint_stiffness, spd_sqrt
from ..wbc import ChainFeedback, ChainReference, Feedback, WbcConfig, WholeBodyController
from . import tasks
from .plant import Plant, build_robot, home_configuration
from .world import ObjectParams, World

log = logging.getLogger(__name__)

METHODS = ("FIC", "EMG-VIC", "EKF-VIC", "ABLATION", "HI-ImpRSL")
FIC_K = 300.0
FIC_D = 34.641
CONTROL_DT = 1e-3
DECIMATION = 10
TORSO_SHARE = np.array([0.5, 0.5, 0.0])  # fraction of planar object motion taken by the torso
SETTLE = 1.0          # s of grasp settling before each trial
HAND_OFFSETS = np.array([[0.0, 0.2, 0.0], [0.0, -0.2, 0.0]])
G = 9.81


@dataclass(frozen=True)
class ScenarioConfig:
    plant: str = "reduced"
    force_noise: float = 0.1       # N, on the hand force sensors
    envelope_noise: float = 0.02   # activation units, on the streamed co-contraction
    partner: SubjectParams = TABLE_I["S2"]
    jitter: float = 0.03
    emg_vic_k: tuple = (100.0, 600.0)
    emg_vic_a_max: float = 0.5
    ekf_k: tuple = (100.0, 600.0)
    delta: float = 2.0
    wbc: WbcConfig = field(default_factory=lambda: WbcConfig(relative_velocity=True))
    log_controller: bool = False


@dataclass
class ScenarioResult:
    scenario: str
    method: str
    seed: int
    dt: float
    time: np.ndarray
    force: np.ndarray           # (n, 3) interaction force on the robot hands, N
    object_position: np.ndarray
    reference: np.ndarray
    stiffness: np.ndarray       # (n, 3) eigenvalues of the commanded leader stiffness
    rho: np.ndarray
    partner_activation: np.ndarray
    failed: bool = False
    message: str = ""
    controller_log: list | None = None

    def metrics(self) -> dict:
        return {"force_mean": metric_force_mean(self.force),
                "smoothness": metric_smoothness(self.force, self.dt)}


# ---------------------------------------------------------------- metrics

def metric_force_mean(trace) -> np.ndarray:
    """Time-averaged absolute force per axis, N."""
    F = np.asarray(trace, dtype=float)
    if F.shape[0] < 5:
        raise ValueError("trace needs >= 5 samples")
    return np.mean(np.abs(F), axis=0)


def metric_smoothness(trace, dt: float) -> np.ndarray:
    """RMS of the second time derivative of force per axis (uniform weights), N/s^2.

    Central differences on interior samples only.
    """
    F = np.asarray(trace, dtype=float)
    if F.shape[0] < 5:
        raise ValueError("trace needs >= 5 samples")
    dd = (F[2:] - 2 * F[1:-1] + F[:-2]) / dt ** 2
    return np.sqrt(np.mean(dd ** 2, axis=0))


# ---------------------------------------------------------------- trial set-up

@dataclass(frozen=True)
class Trial:
    spec: tasks.TaskSpec
    t: np.ndarray             # 1 kHz clock
    partner_path: np.ndarray  # (n, 3) intended object path of the partner
    partner_vel: np.ndarray
    partner_activation: np.ndarray   # true co-contraction at 1 kHz
    raw_bb: np.ndarray        # 2 kHz raw EMG
    raw_tb: np.ndarray
    mvc_bb: float
    mvc_tb: float
    level: float
    n_settle: int = 0         # leading 1 kHz steps before t = 0 (grasp settling, not logged)


def make_trial(scenario: str, seed: int, jitter: float = 0.03, settle: float = SETTLE) -> Trial:
    """Partner behaviour and raw EMG for one trial, with ``settle`` seconds
    of holding still before the task clock starts."""
    rng = rng_for(seed, "trial", scenario)
    spec = tasks.task_spec(scenario, rng, jitter)
    timing = tasks.sample_timing(rng)
    style = tasks.sample_style(rng)
    n_settle = int(round(settle / CONTROL_DT / DECIMATION)) * DECIMATION
    n = int(round(spec.duration / CONTROL_DT)) + 1 + n_settle
    t = (np.arange(n) - n_settle) * CONTROL_DT
    s = timing.phase(t, spec.duration)
    xp = tasks.path(spec, s)
    vp = differentiate(xp, CONTROL_DT)
    a_p, _ = tasks.activation_profiles(spec, s, vp, style)
    bb, tb = tasks.split_muscles(a_p, t, rng)
    raws, mvcs = [], []
    for ch in (bb, tb):
        mvcs.append(tasks.mvc_level(rng))
        _, a2k = tasks.upsample(ch, t - t[0])
        raws.append(tasks.synth_raw_emg(a2k, rng))
    return Trial(spec, t, xp, vp, a_p, raws[0], raws[1], mvcs[0], mvcs[1], style.level, n_settle)


def solve_ik(plant: Plant, q0, targets, iters: int = 100) -> np.ndarray:
    """Arm joints placing each TCP at its target with the torso fixed."""
    q = np.array(q0, float)
    nt = plant.model.n_torso
    for _ in range(iters):
        done = True
        for i, target in enumerate(targets):
            x, J = plant.chain_jacobian(q, i)
            e = target - x
            if np.linalg.norm(e) > 1e-10:
                done = False
            Ja = J[:3, nt:]
            idx = plant.model.chains[i][nt:]
            q[idx] += Ja.T @ np.linalg.solve(Ja @ Ja.T + 1e-6 * np.eye(3), e)
        if done:
            break
    return q


# ---------------------------------------------------------------- method gains

class GainPolicy:
    """Produces (K, D, rho) for one method at each reference update."""

    def __init__(self, method: str, schedule: ImpedanceSchedule, config: ScenarioConfig, mode: str,
                 regulator=None, object_mass: float = 1.0):
        if method not in METHODS:
            raise ValidationError(f"unknown method {method!r}")
        if method == "HI-ImpRSL" and regulator is None:
            raise ValidationError("HI-ImpRSL needs a trained regulator")
        self.method = method
        self.schedule = schedule
        self.config = config
        self.mode = mode
        self.regulator = regulator
        self.online = regnet.OnlineRegNet(regulator.params) if regulator is not None else None
        self.ekf = EkfState.initial(k0=FIC_K, d0=FIC_D)
        self.ekf_noise = EkfNoise(q_k=25.0, q_d=0.25, r=1.0)
        self.object_mass = object_mass

    def gains(self, i: int, a_p: float, phase: float, x_obj, v_obj, f_hands):
        sch = self.schedule
        if self.method == "FIC":
            return FIC_K * np.eye(3), FIC_D * np.eye(3), 1.0
        if self.method == "EMG-VIC":
            lo, hi = self.config.emg_vic_k
            u = min(max(a_p / self.config.emg_vic_a_max, 0.0), 1.0)
            k = lo + (hi - lo) * (u if self.mode == tasks.LEADER_FOLLOWER else 1.0 - u)
            return k * np.eye(3), self.config.delta * np.sqrt(k) * np.eye(3), 1.0
        if self.method == "EKF-VIC":
            f_partner = f_hands + np.array([0.0, 0.0, self.object_mass * G])
            self.ekf = ekf_step(self.ekf, sch.x_d[i, :3] - x_obj, v_obj, f_partner, CANONICAL_DT, self.ekf_noise)
            lo, hi = self.config.ekf_k
            k = np.clip(self.ekf.k_hat, lo, hi)
            if self.mode != tasks.LEADER_FOLLOWER:
                k = lo + hi - k
            return np.diag(k), self.config.delta * np.diag(np.sqrt(k)), 1.0
        K, D = sch.K[i], sch.D[i]
        if self.method == "ABLATION":
            return K, D, 1.0
        pred = self.online.step(np.concatenate([[a_p, phase], x_obj]))
        rho = float(self.regulator.rho(pred[0]))
        return K, D, rho


# ---------------------------------------------------------------- run

OBJECT = {
    "transport": ObjectParams(mass=2.0),
    "taichi": ObjectParams(mass=1.0),
    "sawing": ObjectParams(mass=1.0, contact=True),
}


def run_scenario(scenario: str, method: str, seed: int, schedule: ImpedanceSchedule,
                 regulator=None, config: ScenarioConfig = ScenarioConfig(), trial: Trial | None = None,
                 ) -> ScenarioResult:
    """One closed-loop trial.

    ``schedule`` is the learned plan for this trial's start and goal; every
    method tracks its reference and only the gains differ. The logged force
    is the noise-free sum of the object forces on both hands at 100 Hz, net
    of the static load share the robot is commanded to carry.
    """
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    trial = trial or make_trial(scenario, seed, config.jitter)
    spec = trial.spec
    rng = rng_for(seed, "sensors", scenario)  # shared across methods
    model = build_robot(config.plant)
    plant = Plant(model)
    nt = model.n_torso
    obj = OBJECT[scenario]
    sawing = scenario == "sawing"
    if sawing:
        obj = replace(obj, surface_z=float(spec.start[2]) - 0.002)
    x_ref = schedule.x_d[:, :3]
    v_ref = differentiate(x_ref, schedule.timebase.dt)
    n_ref = schedule.n
    q0 = solve_ik(plant, home_configuration(model), [x_ref[0] + o for o in HAND_OFFSETS])
    world = World(plant, obj, HAND_OFFSETS, q0, x_ref[0])
    wcfg = replace(config.wbc, hybrid_z=sawing)
    ctrl = WholeBodyController(model.chains, nt, wcfg)
    policy = GainPolicy(method, schedule, config, spec.mode, regulator, obj.mass)
    filters = [emg.CausalEmgFilter(tasks.EMG_RATE, trial.mvc_bb), emg.CausalEmgFilter(tasks.EMG_RATE, trial.mvc_tb)]
    chunk = int(round(tasks.EMG_RATE * CANONICAL_DT))

    # Per-hand feedforward carrying a quarter of the weight (the partner carries half).
    payload = np.zeros(3) if sawing else np.array([0.0, 0.0, obj.mass * G / 4])
    # The partner lifts the other half; as a spring force this is an offset of their set-point.
    partner_ff = np.zeros(3) if sawing else np.array([0.0, 0.0, obj.mass * G / 2])
    n = len(trial.t)
    skip = trial.n_settle // DECIMATION
    out_n = (n - 1) // DECIMATION + 1 - skip
    force = np.zeros((out_n, 3))
    xo_log = np.zeros((out_n, 3))
    ref_log = np.zeros((out_n, 3))
    k_log = np.zeros((out_n, 3))
    rho_log = np.ones(out_n)
    ap_log = np.zeros(out_n)
    failed, message = False, ""
    a_p, rho = 0.0, 1.0
    torso0 = q0[:nt].copy()
    refs = None
    partner_K = partner_D = None
    hands_meas = np.zeros((2, 3))
    last = out_n
    for k in range(n):
        t = trial.t[k]
        if k % DECIMATION == 0:
            j = k // DECIMATION
            row = j - skip
            i = min(max(row, 0), n_ref - 1)
            seg = slice(j * chunk, (j + 1) * chunk)
            if seg.start < len(trial.raw_bb):
                act = [f.process(r[seg])[-1] for f, r in zip(filters, (trial.raw_bb, trial.raw_tb))]
                a_p = float(np.clip(0.5 * (act[0] + act[1]) + config.envelope_noise * rng.standard_normal(), 0, 1))
            pose = tasks.partner_pose(trial.partner_path[k], spec.start)
            partner_K = endpoint_stiffness(pose, float(trial.partner_activation[k]), config.partner).K
            partner_D = config.partner.delta * spd_sqrt(partner_K)
            partner_x = trial.partner_path[k] + np.linalg.solve(partner_K, partner_ff)
            contact = world.forces(partner_x, trial.partner_vel[k], partner_K, partner_D)
            hands_meas = contact.hands + config.force_noise * rng.standard_normal((2, 3))
            tcps = [plant.tcp(world.q, e) for e in range(2)]
            x_obj = np.mean([tcps[e][0] - HAND_OFFSETS[e] for e in range(2)], axis=0)
            v_obj = np.mean([tcps[e][2][:3] @ world.qd for e in range(2)], axis=0)
            K, D, rho = policy.gains(i, a_p, i / (n_ref - 1), x_obj, v_obj, hands_meas.sum(axis=0))
            x_d = x_ref[i]
            v_d = v_ref[i] if row >= 0 else np.zeros(3)
            refs = [ChainReference(x_d + HAND_OFFSETS[e], K, D, v_d) for e in range(2)]
            if k == 0:
                ctrl.reset_gains([ChainReference(r.x_d, r.K * rho, r.D * np.sqrt(rho)) for r in refs])
            torso_ref = torso0 + TORSO_SHARE * (x_d - x_ref[0])
            torso_rate = TORSO_SHARE * v_d
            if row >= 0:
                force[row] = contact.hands.sum(axis=0) + 2 * payload
                xo_log[row] = world.x_obj
                ref_log[row] = x_d
                rho_log[row] = rho
                ap_log[row] = a_p
        else:
            hands_meas = world.forces(partner_x, trial.partner_vel[k], partner_K, partner_D).hands \
                + config.force_noise * rng.standard_normal((2, 3))
        q, qd = world.q, world.qd
        chains = []
        for e in range(2):
            x, J = plant.chain_jacobian(q, e)
            chains.append(ChainFeedback(x, J[:3] @ qd[model.chains[e]], J[:3]))
        fb = Feedback(t, q, qd, plant.G(q), tuple(chains), hands_meas + payload, torso_ref,
                      plant.M(q) if wcfg.weighting == "inertia" else None,
                      torso_rate)
        cmd = ctrl.control_step(fb, refs, rho, CONTROL_DT)
        if cmd.fallback:
            failed, message, last = True, f"controller abort at t={t:.3f}", max(k // DECIMATION - skip, 0)
            break
        if k % DECIMATION == 0 and k // DECIMATION >= skip:
            k_log[k // DECIMATION - skip] = np.linalg.eigvalsh(cmd.K_cmd[0])
        if k == n - 1:
            break
        tau = cmd.tau.copy()
        for e in range(2):
            tau[model.chains[e][nt:]] += chains[e].J[:, nt:].T @ payload
        try:
            world.step(tau, cmd.qd_torso, cmd.tau_torso_ff, partner_x, trial.partner_vel[k],
                       partner_K, partner_D, CONTROL_DT)
        except FloatingPointError as exc:
            failed, message, last = True, str(exc), max(k // DECIMATION - skip + 1, 0)
            break
    if failed:
        log.error("%s/%s seed %d failed: %s", scenario, method, seed, message)
    sl = slice(0, last)
    return ScenarioResult(scenario, method, seed, CANONICAL_DT, np.arange(last) * CANONICAL_DT, force[sl],
                          xo_log[sl], ref_log[sl], k_log[sl], rho_log[sl], ap_log[sl], failed, message,
                          ctrl.log if config.log_controller else None)
