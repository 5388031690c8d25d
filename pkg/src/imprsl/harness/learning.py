"""From demonstrations to executable skills.

1. Recover the collaborator's intended reference from motion, force and
   EMG-derived stiffness.
2. Fit a task-parameterized mixture over (phase, pose, log stiffness) in a
   start frame and a goal frame.
3. For new frames, reproduce, optimize the position trajectory with LQT and
   attach the reproduced stiffness as an impedance schedule.
4. Train the regulation network on (partner co-contraction, trajectory) ->
   collaborator co-contraction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import lqt, regnet, tpgmm
from ..datamodel import COLLABORATOR, DemonstrationRecord, SubjectParams
from ..interaction import recover_reference_from_samples
from ..stiffness import alpha
from .synth import regnet_dataset, stiffness_series

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LearnConfig:
    n_components: int = 6
    em_reg: float = 1e-4
    em_seed: int = 0
    lqt_r: float = lqt.DEFAULT_R


@dataclass(frozen=True)
class Skill:
    model: tpgmm.TPGMMModel
    scenario: str
    params: SubjectParams
    dt: float
    n: int


def demo_frames(record: DemonstrationRecord):
    start = np.asarray(record.meta["start"], float)
    goal = np.asarray(record.meta["goal"], float)
    return [tpgmm.pose_frame(start), tpgmm.pose_frame(goal)]


def collaborator_impedance(record: DemonstrationRecord, params: SubjectParams):
    return stiffness_series(record.arm_poses(COLLABORATOR), record.cocontraction(COLLABORATOR), params)


def demo_features(record: DemonstrationRecord, params: SubjectParams) -> np.ndarray:
    K, D = collaborator_impedance(record, params)
    x = record.tcp_pose[:, :3]
    ref = recover_reference_from_samples(x, record.f_ext, K, D, record.timebase.dt)
    diag = np.einsum("nii->ni", K)
    phase = np.linspace(0.0, 1.0, record.n)
    return tpgmm.joint_features(phase, ref, record.tcp_pose[:, 3:], diag)


def fit_skill(records, params: SubjectParams, config: LearnConfig = LearnConfig()) -> Skill:
    feats = [demo_features(r, params) for r in records]
    frames = [demo_frames(r) for r in records]
    data = tpgmm.project_demos(feats, frames)
    model = tpgmm.em_fit(data, config.n_components, seed=config.em_seed, reg=config.em_reg,
                         meta={"scenario": records[0].task, "n_demos": len(records)})
    return Skill(model, records[0].task, params, records[0].timebase.dt, records[0].n)


def plan(skill: Skill, start, goal, config: LearnConfig = LearnConfig(), n: int | None = None):
    """Impedance schedule for new start/goal frames; also returns the LQT solution."""
    n = n or skill.n
    frames = [tpgmm.pose_frame(np.asarray(start, float)), tpgmm.pose_frame(np.asarray(goal, float))]
    rep = tpgmm.reproduce(skill.model, frames, n)
    problem = lqt.build_problem(rep.per_frame, R=config.lqt_r, dt=skill.dt, dims=slice(0, 3))
    sol = lqt.solve(problem)
    sched = lqt.schedule(sol, rep.stiffness, np.eye(3), skill.params.delta, rep.quaternion)
    return sched, sol, rep


@dataclass(frozen=True)
class Regulator:
    params: regnet.RegNetParams
    baseline_activation: float
    subject: SubjectParams
    rho_min: float = regnet.RHO_MIN
    rho_max: float = regnet.RHO_MAX

    @property
    def baseline_alpha(self) -> float:
        return float(alpha(self.baseline_activation, self.subject))

    def rho(self, predicted_activation) -> np.ndarray:
        a = np.clip(np.asarray(predicted_activation, float), 0.0, 1.0)
        return regnet.regulatory_factor(alpha(a, self.subject), self.baseline_alpha, self.rho_min, self.rho_max)


def train_regulator(records, subject: SubjectParams, config: regnet.TrainConfig = regnet.TrainConfig(),
                    val_records=None):
    xs, ys = regnet_dataset(records)
    vx, vy = regnet_dataset(val_records) if val_records else (None, None)
    result = regnet.train(xs, ys, config, vx, vy)
    baseline = float(np.mean(np.concatenate([y[:, 0] for y in ys])))
    return Regulator(result.params, baseline, subject), result
