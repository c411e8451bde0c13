"""Vector and unit-quaternion algebra for tracked poses.

Conventions
-----------
- Right-handed frame, +Y is world up (``UP``).
- Quaternions are stored ``(x, y, z, w)`` and multiplied with the Hamilton
  product, so ``quat_mul(a, b)`` applies ``b`` first, then ``a``.
- Every function accepts a single quaternion of shape ``(4,)`` or a batch of
  shape ``(..., 4)``; vectors likewise ``(3,)`` or ``(..., 3)``.

Sign canonicalization (``w >= 0``) is never applied implicitly; callers do it
at encoding boundaries so the algebra itself stays exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UP = np.array([0.0, 1.0, 0.0])
IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])

_DEGENERATE_EPS = 1e-12


def normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b``, renormalized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ax, ay, az, aw = np.moveaxis(a, -1, 0)
    bx, by, bz, bw = np.moveaxis(b, -1, 0)
    out = np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )
    return normalize(out)


def quat_inverse(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([-1.0, -1.0, -1.0, 1.0])


def rotate_vec(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    u = q[..., :3]
    w = q[..., 3:4]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def canonicalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    sign = np.where(q[..., 3:4] < 0.0, -1.0, 1.0)
    return q * sign


def hemisphere_continuous(q: np.ndarray) -> np.ndarray:
    """Flip signs along axis 0 so consecutive quaternions have a non-negative dot."""
    q = np.array(q, dtype=float, copy=True)
    if q.shape[0] < 2:
        return q
    dots = np.sum(q[1:] * q[:-1], axis=-1)
    flips = np.where(dots < 0.0, -1.0, 1.0)
    sign = np.concatenate([np.ones((1,) + flips.shape[1:]), np.cumprod(flips, axis=0)])
    return q * sign[..., None]


def swing_twist(q: np.ndarray, axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``q`` into ``swing * twist`` where ``twist`` rotates about ``axis``.

    The twist keeps the projection of the vector part onto ``axis``; the swing
    is what remains, and its vector part is orthogonal to ``axis``. When the
    projection and ``w`` both vanish (a half turn about an orthogonal axis)
    the twist is the identity.
    """
    q = np.asarray(q, dtype=float)
    axis = np.asarray(axis, dtype=float)
    proj = np.sum(q[..., :3] * axis, axis=-1, keepdims=True) * axis
    twist = np.concatenate([np.broadcast_to(proj, q[..., :3].shape), q[..., 3:4]], axis=-1)
    norm = np.linalg.norm(twist, axis=-1, keepdims=True)
    degenerate = norm < _DEGENERATE_EPS
    twist = np.where(degenerate, IDENTITY, twist / np.where(degenerate, 1.0, norm))
    swing = quat_mul(q, quat_inverse(twist))
    return swing, twist


def from_axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([axis * np.sin(half), np.cos(half)], axis=-1)


def random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniformly distributed unit quaternions (Shoemake's method)."""
    u1, u2, u3 = rng.random((3, n))
    a = np.sqrt(1.0 - u1)
    b = np.sqrt(u1)
    return np.stack(
        [
            a * np.sin(2 * np.pi * u2),
            a * np.cos(2 * np.pi * u2),
            b * np.sin(2 * np.pi * u3),
            b * np.cos(2 * np.pi * u3),
        ],
        axis=-1,
    )


def to_matrix(q: np.ndarray) -> np.ndarray:
    q = normalize(q)
    x, y, z, w = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        rot = np.asarray(self.rotation, dtype=float)
        if pos.shape != (3,) or rot.shape != (4,):
            raise ValueError("Pose needs a 3-vector position and a 4-vector quaternion")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(rot))):
            raise ValueError("Pose components must be finite")
        if abs(np.linalg.norm(rot) - 1.0) > 1e-6:
            raise ValueError(f"rotation is not unit length (norm {np.linalg.norm(rot):.9f})")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", rot)


@dataclass(frozen=True)
class MotionFrame:
    head: Pose
    wrist_left: Pose
    wrist_right: Pose
