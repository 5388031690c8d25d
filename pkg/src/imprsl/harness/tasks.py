"""Task shapes, role-dependent co-contraction profiles and raw EMG synthesis.

All trajectories describe the shared object point in world coordinates
(robot at the origin facing +x, partner on the +x side). Every generator is
a pure function of its arguments and an explicit ``np.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..datamodel import ArmPose, ValidationError
from .. import emg

OBJECT_HOME = np.array([0.47, 0.0, 1.10])
EMG_RATE = 2000.0
SCENARIOS = ("transport", "taichi", "sawing")
LEADER_FOLLOWER = "leader-follower"
MUTUAL = "mutual"


@dataclass(frozen=True)
class TaskSpec:
    name: str
    duration: float
    mode: str
    start: np.ndarray
    goal: np.ndarray


def minimum_jerk(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s ** 2)


def _bump(s, a, b):
    """Smooth 0-1-0 bump on [a, b]."""
    u = np.clip((s - a) / (b - a), 0.0, 1.0)
    return np.sin(np.pi * u) ** 2


@dataclass(frozen=True)
class Timing:
    """Time warp ``s = (t - shift) * (1 + rate) / duration`` clipped to [0, 1]."""

    shift: float = 0.0
    rate: float = 0.0

    def phase(self, t, duration: float):
        return np.clip((np.asarray(t, float) - self.shift) * (1 + self.rate) / duration, 0.0, 1.0)


def sample_timing(rng, max_shift: float = 0.15, max_rate: float = 0.06) -> Timing:
    return Timing(float(rng.uniform(-max_shift, max_shift)), float(rng.uniform(-max_rate, max_rate)))


# ---------------------------------------------------------------- geometry

LIFT = 0.12


def transport_path(s, start, goal):
    """Lift, translate, lower; phase boundaries at 0.2 and 0.8."""
    s = np.asarray(s, float)
    lift = minimum_jerk(s / 0.2) - minimum_jerk((s - 0.8) / 0.2)
    move = minimum_jerk((s - 0.2) / 0.6)
    return start + np.outer(move, goal - start) + np.outer(LIFT * lift, [0, 0, 1])


def taichi_path(s, start, n_cycles: int = 2, radius: float = 0.09, plane: str = "flat"):
    """Circles entered and left smoothly; ``plane`` is ``flat`` (x-y) or ``vertical`` (x-z)."""
    s = np.asarray(s, float)
    env = minimum_jerk(s / 0.1) * minimum_jerk((1 - s) / 0.1)
    theta = 2 * np.pi * n_cycles * s
    u = radius * np.sin(theta) * env
    w = radius * (1 - np.cos(theta)) * env
    out = np.tile(start, (len(s), 1))
    out[:, 0] += u
    out[:, 1 if plane == "flat" else 2] += w
    return out


def sawing_path(s, start, n_strokes: int = 4, amplitude: float = 0.08):
    s = np.asarray(s, float)
    env = minimum_jerk(s / 0.08) * minimum_jerk((1 - s) / 0.08)
    out = np.tile(start, (len(s), 1))
    out[:, 0] += amplitude * np.sin(np.pi * n_strokes * s) * env
    return out


def yaw_quaternion(angle) -> np.ndarray:
    a = np.asarray(angle, float)
    return np.stack([np.cos(a / 2), np.zeros_like(a), np.zeros_like(a), np.sin(a / 2)], axis=-1)


def task_spec(name: str, rng=None, jitter: float = 0.0) -> TaskSpec:
    """Nominal start/goal with optional uniform jitter of the given radius."""
    j = (lambda: rng.uniform(-jitter, jitter, 3)) if (rng is not None and jitter > 0) else (lambda: np.zeros(3))
    if name == "transport":
        start = OBJECT_HOME + np.array([0.0, -0.12, 0.0]) + j() * [1, 1, 0]
        goal = OBJECT_HOME + np.array([0.10, 0.16, 0.0]) + j() * [1, 1, 0]
        return TaskSpec(name, 6.0, LEADER_FOLLOWER, start, goal)
    if name == "taichi":
        start = OBJECT_HOME + j() * [1, 1, 0]
        return TaskSpec(name, 8.0, MUTUAL, start, start.copy())
    if name == "sawing":
        start = OBJECT_HOME + np.array([0.0, 0.0, -0.05]) + j() * [1, 1, 0]
        return TaskSpec(name, 8.0, MUTUAL, start, start.copy())
    raise ValidationError(f"unknown scenario {name!r}")


REST = 0.1  # fraction of the phase held still at each end


def motion_phase(s):
    """Task phase with rest margins, so every timing warp starts and ends at rest."""
    return np.clip((np.asarray(s, float) - REST) / (1 - 2 * REST), 0.0, 1.0)


def path(spec: TaskSpec, s) -> np.ndarray:
    s = motion_phase(s)
    if spec.name == "transport":
        return transport_path(s, spec.start, spec.goal)
    if spec.name == "taichi":
        return taichi_path(s, spec.start)
    return sawing_path(s, spec.start)


def orientation(spec: TaskSpec, s) -> np.ndarray:
    """Object yaw: a small rotation across the transport, constant otherwise."""
    s = motion_phase(s)
    if spec.name == "transport":
        return yaw_quaternion(0.15 * minimum_jerk((s - 0.2) / 0.6))
    return yaw_quaternion(np.zeros_like(s))


# ---------------------------------------------------------------- co-contraction

@dataclass(frozen=True)
class ActivationStyle:
    """Per-trial co-contraction style of one pair of people."""

    level: float = 1.0       # overall scale of the partner's co-contraction
    base: float = 0.05
    peak: float = 0.20
    coupling: float = 0.9    # collaborator/partner ratio in leader-follower mode
    offset: float = 0.01


def sample_style(rng) -> ActivationStyle:
    return ActivationStyle(level=float(rng.uniform(0.6, 1.4)))


def activation_profiles(spec: TaskSpec, s, velocity, style: ActivationStyle):
    """Partner and collaborator co-contraction along the task.

    Leader-follower: both stiffen around lift-off and set-down and relax
    while translating; the collaborator follows the partner's level.
    Mutual adaptation: the person pulling the object toward themselves
    co-contracts while the other relaxes (anti-phase, gated by the
    direction of motion along x).
    """
    s = motion_phase(s)
    if spec.mode == LEADER_FOLLOWER:
        shape = style.base + style.peak * (_bump(s, 0.0, 0.3) + _bump(s, 0.7, 1.0))
        a_p = style.level * shape
        a_c = style.coupling * a_p + style.offset
    else:
        vx = np.asarray(velocity, float)[:, 0]
        gate = 0.5 * (1 + np.tanh(vx / 0.03))
        active = minimum_jerk(s / 0.05) * minimum_jerk((1 - s) / 0.05)
        a_p = style.base + style.level * style.peak * gate * active
        a_c = style.base + style.level * style.peak * (1 - gate) * active
    return np.clip(a_p, 0, 1), np.clip(a_c, 0, 1)


def split_muscles(a, t, rng, ripple: float = 0.1):
    """Biceps/triceps activations whose mean is ``a``."""
    d = ripple * a * np.sin(2 * np.pi * 0.35 * np.asarray(t) + rng.uniform(0, 2 * np.pi))
    return np.clip(a + d, 0, 1), np.clip(a - d, 0, 1)


# ---------------------------------------------------------------- EMG

MVC_AMPLITUDE = 1.0  # mV, raw amplitude at full activation


def synth_raw_emg(activation_2k, rng):
    """Amplitude-modulated white noise at 2 kHz (raw surface EMG stand-in)."""
    a = np.asarray(activation_2k, float)
    return MVC_AMPLITUDE * a * rng.standard_normal(a.shape)


def mvc_level(rng, seconds: float = 4.0) -> float:
    """Envelope of a simulated maximal contraction, the normalization constant."""
    raw = synth_raw_emg(np.ones(int(seconds * EMG_RATE)), rng)
    env = emg.envelope(emg.highpass(raw, EMG_RATE), EMG_RATE, clamp=False)
    k = int(0.5 * EMG_RATE)
    return float(np.mean(env[k:-k]))


def upsample(values, t_src, rate: float = EMG_RATE):
    t2 = np.arange(int(round(t_src[-1] * rate)) + 1) / rate
    return t2, np.interp(t2, t_src, values)


# ---------------------------------------------------------------- arm geometry

def arm_pose_for(shoulder, wrist, upper: float = 0.30, fore: float = 0.30, bend=(0, 0, -1)) -> ArmPose:
    """Two-link inverse kinematics with the elbow bent toward ``bend``."""
    S = np.asarray(shoulder, float)
    W = np.asarray(wrist, float)
    d = W - S
    L = np.linalg.norm(d)
    L = min(L, upper + fore - 1e-3)
    u = d / np.linalg.norm(d)
    a = (upper ** 2 - fore ** 2 + L ** 2) / (2 * L)
    h = np.sqrt(max(upper ** 2 - a ** 2, 1e-6))
    b = np.asarray(bend, float)
    b = b - (b @ u) * u
    b /= np.linalg.norm(b)
    E = S + a * u + h * b
    return ArmPose(S, E, S + L * u)


COLLABORATOR_SHOULDER = np.array([0.05, 0.20, 1.40])
PARTNER_SHOULDER_OFFSET = np.array([0.42, -0.20, 0.30])


def collaborator_pose(hand) -> ArmPose:
    return arm_pose_for(COLLABORATOR_SHOULDER, hand, bend=(0, 0.5, -1))


def partner_pose(hand, anchor) -> ArmPose:
    return arm_pose_for(anchor + PARTNER_SHOULDER_OFFSET, hand, bend=(0, -0.5, -1))
