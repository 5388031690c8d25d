"""Synthetic human-human demonstrations.

Two simulated people hold one object. Each acts as an impedance about their
own intended path, with endpoint stiffness from the arm geometry and their
co-contraction. The object (unit mass, weight supported) settles between
them; the record holds the collaborator's motion, both people's arm
geometry, EMG-derived activations and the force the partner exerts on the
collaborator's hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import emg
from ..datamodel import (COLLABORATOR, PARTNER, TABLE_I, CANONICAL_DT, DemonstrationRecord,
                         SubjectParams, Timebase, ValidationError, canonical_quaternion, rng_for)
from ..interaction import CartesianState, differentiate, simulate_impedance
from ..stiffness import endpoint_stiffness, spd_sqrt
from . import tasks

COLLABORATOR_ROW = "S1"
PARTNER_ROW = "S2"


@dataclass(frozen=True)
class SynthConfig:
    collaborator: SubjectParams = TABLE_I[COLLABORATOR_ROW]
    partner: SubjectParams = TABLE_I[PARTNER_ROW]
    jitter: float = 0.03          # start/goal jitter radius, m
    path_noise: float = 0.004     # collaborator intent deviation, m
    emg: bool = True              # activations pass through raw EMG + pipeline
    force_noise: float = 0.0      # N, Gaussian
    envelope_noise: float = 0.0   # activation units, Gaussian


def stiffness_series(poses, activation, params: SubjectParams):
    """(n, 3, 3) endpoint stiffness and damping along a motion."""
    K = np.array([endpoint_stiffness(p, float(a), params).K for p, a in zip(poses, activation)])
    return K, params.delta * spd_sqrt(K)


def measured_activations(a_true, t, rng, use_emg: bool, envelope_noise: float):
    """BB/TB activations as the recording pipeline would produce them."""
    bb, tb = tasks.split_muscles(a_true, t, rng)
    out = []
    tb_out = Timebase(t[1] - t[0], len(t))
    for ch in (bb, tb):
        if use_emg:
            mvc = tasks.mvc_level(rng)
            _, a2k = tasks.upsample(ch, t)
            raw = tasks.synth_raw_emg(a2k, rng)
            act = emg.activation_from_raw(raw, tasks.EMG_RATE, mvc, tb_out)
        else:
            act = ch.copy()
        if envelope_noise > 0:
            act = act + envelope_noise * rng.standard_normal(act.shape)
        out.append(np.clip(act, 0.0, 1.0))
    return out


def synth_demo(scenario: str, seed: int, index: int, config: SynthConfig = SynthConfig(),
               spec: tasks.TaskSpec | None = None) -> DemonstrationRecord:
    rng = rng_for(seed, "demo", scenario, index)
    if spec is None:
        spec = tasks.task_spec(scenario, rng, config.jitter)
    dt = CANONICAL_DT
    n = int(round(spec.duration / dt)) + 1
    t = np.arange(n) * dt
    timing_c = tasks.sample_timing(rng, 0.05, 0.02)
    timing_p = tasks.sample_timing(rng)
    s_c = timing_c.phase(t, spec.duration)
    s_p = timing_p.phase(t, spec.duration)
    x_dc = tasks.path(spec, s_c)
    wobble = np.cumsum(rng.standard_normal((n, 3)), axis=0)
    wobble -= np.linspace(0, 1, n)[:, None] * wobble[-1]
    x_dc = x_dc + config.path_noise * wobble / max(np.abs(wobble).max(), 1e-12)
    x_p = tasks.path(spec, s_p)
    v_p = differentiate(x_p, dt)
    style = tasks.sample_style(rng)
    a_p, a_c = tasks.activation_profiles(spec, s_p, v_p, style)

    # Equilibrium geometry from the intended paths, then stiffness along them.
    mid = 0.5 * (x_dc + x_p)
    poses_c = [tasks.collaborator_pose(h) for h in mid]
    poses_p = [tasks.partner_pose(h, spec.start) for h in mid]
    Kc, Dc = stiffness_series(poses_c, a_c, config.collaborator)
    Kp, Dp = stiffness_series(poses_p, a_p, config.partner)
    Kt = Kc + Kp
    x_eff = np.linalg.solve(Kt, (np.einsum("nij,nj->ni", Kc, x_dc) + np.einsum("nij,nj->ni", Kp, x_p))[..., None])[..., 0]
    f_ff = np.einsum("nij,nj->ni", Dp, v_p)
    lam = np.broadcast_to(np.eye(3), (n, 3, 3))
    traj = simulate_impedance(x_eff, (lam, Dc + Dp, Kt), f_ff, dt,
                              CartesianState(x_eff[0], np.zeros(3)), substeps=10)
    f_ext = np.einsum("nij,nj->ni", Kp, x_p - traj.x) + np.einsum("nij,nj->ni", Dp, v_p - traj.v)
    if config.force_noise > 0:
        f_ext = f_ext + config.force_noise * rng.standard_normal(f_ext.shape)

    bb_c, tb_c = measured_activations(a_c, t, rng, config.emg, config.envelope_noise)
    bb_p, tb_p = measured_activations(a_p, t, rng, config.emg, config.envelope_noise)
    quat = canonical_quaternion(tasks.orientation(spec, s_c))
    arm = np.stack([np.stack([p.as_array() for p in poses_c]), np.stack([p.as_array() for p in poses_p])], axis=1)
    meta = {
        "scenario": scenario, "mode": spec.mode, "seed": int(seed), "index": int(index),
        "start": spec.start.tolist(), "goal": spec.goal.tolist(), "level": style.level,
        "timing_partner": [timing_p.shift, timing_p.rate],
        "timing_collaborator": [timing_c.shift, timing_c.rate],
        "collaborator_params": config.collaborator.as_dict(), "partner_params": config.partner.as_dict(),
    }
    return DemonstrationRecord(
        timebase=Timebase(dt, n),
        tcp_pose=np.hstack([traj.x, quat]),
        partner_tcp_pose=np.hstack([x_p, quat]),
        arm_pose=arm,
        activation_bb=np.stack([bb_c, bb_p], axis=1),
        activation_tb=np.stack([tb_c, tb_p], axis=1),
        f_ext=f_ext,
        task=scenario,
        meta=meta,
    )


def synth_demos(scenario: str, n_demos: int, seed: int, config: SynthConfig = SynthConfig()):
    if scenario not in tasks.SCENARIOS:
        raise ValidationError(f"unknown scenario {scenario!r}")
    if n_demos < 2:
        raise ValidationError("need n_demos >= 2")
    return [synth_demo(scenario, seed, i, config) for i in range(n_demos)]


def regnet_dataset(records):
    """Inputs (partner co-contraction, phase, position) and collaborator co-contraction."""
    xs, ys = [], []
    for r in records:
        phase = np.linspace(0.0, 1.0, r.n)
        xs.append(np.column_stack([r.cocontraction(PARTNER), phase, r.tcp_pose[:, :3]]))
        ys.append(r.cocontraction(COLLABORATOR)[:, None])
    return xs, ys


PROTOCOL_HANDS = np.array([
    [0.35, 0.25, 1.15], [0.45, 0.10, 1.20], [0.40, 0.35, 1.05],
    [0.30, 0.05, 1.25], [0.50, 0.30, 1.30], [0.38, 0.20, 0.98],
])
PROTOCOL_BENDS = np.array([[0, 0.5, -1], [0, 1, -1], [0.3, 0.2, -1], [0, 1, -0.3], [-0.2, 0.6, -1], [0, 0.3, -1]])
PROTOCOL_LEVELS = (0.1, 0.3, 0.5)


def perturbation_protocol(params: SubjectParams, noise: float = 0.0, seed: int = 0):
    """Six arm configurations at three co-contraction levels, as
    ``(ArmPose, A, K_measured)`` triples.

    ``noise`` is the Frobenius norm of a random symmetric perturbation
    relative to each true matrix.
    """
    rng = rng_for(seed, "protocol")
    out = []
    for hand, bend in zip(PROTOCOL_HANDS, PROTOCOL_BENDS):
        pose = tasks.arm_pose_for(tasks.COLLABORATOR_SHOULDER, hand, bend=bend)
        for a in PROTOCOL_LEVELS:
            K = endpoint_stiffness(pose, a, params).K
            if noise > 0:
                E = rng.standard_normal((3, 3))
                E = E + E.T
                K = K + noise * np.linalg.norm(K) * E / np.linalg.norm(E)
            out.append((pose, a, K))
    return out
