import numpy as np
import pytest

from imprsl.datamodel import ArmPose, DemonstrationRecord, Timebase

# Canonical arm: upper arm along -z, forearm along +x, hand at chest height.
CANONICAL_POSE = ArmPose([0.0, 0.0, 1.4], [0.0, 0.0, 1.1], [0.3, 0.0, 1.1])


def make_record(n=20, seed=0, **override):
    rng = np.random.default_rng(seed)
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    pose = np.hstack([rng.normal(size=(n, 3)), quat])
    arm = np.broadcast_to(CANONICAL_POSE.as_array(), (n, 2, 3, 3)).copy()
    fields = dict(
        timebase=Timebase(0.01, n),
        tcp_pose=pose,
        partner_tcp_pose=pose.copy(),
        arm_pose=arm,
        activation_bb=rng.uniform(0, 1, (n, 2)),
        activation_tb=rng.uniform(0, 1, (n, 2)),
        f_ext=rng.normal(size=(n, 3)),
        task="transport",
        meta={"seed": seed},
    )
    fields.update(override)
    return DemonstrationRecord(**fields)


@pytest.fixture
def record():
    return make_record()
