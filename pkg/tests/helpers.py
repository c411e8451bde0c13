"""Shared builders for tests."""

import numpy as np

from motionid import quat
from motionid.take import Take


def random_take(seed, n=60, fps=90.0, subject="S01"):
    """Smooth-ish random three-point take."""
    rng = np.random.default_rng(seed)
    pos = np.cumsum(rng.normal(scale=0.01, size=(n, 3, 3)), axis=0)
    pos += np.array([[0, 1.6, 0], [-0.2, 1.1, 0.2], [0.2, 1.1, 0.2]]) + rng.uniform(-1, 1, (1, 3, 3))
    base = quat.random_quaternions(rng, 3)
    steps = quat.from_axis_angle(rng.normal(size=(n, 3, 3)), rng.normal(scale=0.05, size=(n, 3)))
    rot = np.empty((n, 3, 4))
    rot[0] = base
    for t in range(1, n):
        rot[t] = quat.quat_mul(steps[t], rot[t - 1])
    return Take.from_arrays(subject, f"{subject}_r{seed}", fps, pos, rot)


def rigid(take, dx, dz, yaw):
    """Rotate every pose by ``yaw`` about +Y through the origin, then translate."""
    g = quat.from_axis_angle(quat.UP, yaw)
    pos = quat.rotate_vec(g, take.positions) + np.array([dx, 0.0, dz])
    rot = quat.quat_mul(np.broadcast_to(g, take.rotations.shape), take.rotations)
    return Take.from_arrays(take.subject_id, take.take_id, take.fps, pos, rot)
