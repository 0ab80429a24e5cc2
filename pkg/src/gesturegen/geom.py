"""Rotation representations, root transforms and forward kinematics.

Conventions: y-up, right-handed, meters; character forward is +z.
Quaternions are ``(w, x, y, z)`` arrays along the last axis. A positive yaw
of ``theta`` about +y maps +z to ``(sin theta, 0, cos theta)`` and +x to
``(cos theta, 0, -sin theta)``.

All functions broadcast over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UP = np.array([0.0, 1.0, 0.0])
FORWARD = np.array([0.0, 0.0, 1.0])


class DegenerateRotationError(ValueError):
    pass


# -- quaternions ---------------------------------------------------------------
def quat_identity(shape=()) -> np.ndarray:
    q = np.zeros(tuple(shape) + (4,))
    q[..., 0] = 1.0
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q: np.ndarray) -> np.ndarray:
    return q * np.array([1.0, -1.0, -1.0, -1.0])


quat_inv = quat_conj  # unit quaternions only


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_canonicalize(q: np.ndarray) -> np.ndarray:
    """Flip to the w >= 0 hemisphere."""
    return np.where(q[..., :1] < 0, -q, q)


def quat_unroll(q: np.ndarray) -> np.ndarray:
    """Sign-align a time series (axis 0) so consecutive quaternions share a hemisphere."""
    q = np.array(q, dtype=float, copy=True)
    for t in range(1, len(q)):
        flip = np.sum(q[t] * q[t - 1], axis=-1) < 0
        q[t][flip] = -q[t][flip]
    return q


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=-2)


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; output is canonical (w >= 0)."""
    R = np.asarray(R, dtype=float)
    m00, m11, m22 = R[..., 0, 0], R[..., 1, 1], R[..., 2, 2]
    tr = m00 + m11 + m22
    cands = np.stack([
        np.stack([1 + tr, R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], -1),
        np.stack([R[..., 2, 1] - R[..., 1, 2], 1 + m00 - m11 - m22, R[..., 0, 1] + R[..., 1, 0], R[..., 0, 2] + R[..., 2, 0]], -1),
        np.stack([R[..., 0, 2] - R[..., 2, 0], R[..., 0, 1] + R[..., 1, 0], 1 - m00 + m11 - m22, R[..., 1, 2] + R[..., 2, 1]], -1),
        np.stack([R[..., 1, 0] - R[..., 0, 1], R[..., 0, 2] + R[..., 2, 0], R[..., 1, 2] + R[..., 2, 1], 1 - m00 - m11 + m22], -1),
    ], axis=-2)
    best = np.argmax(np.stack([tr, m00, m11, m22], -1), axis=-1)
    q = np.take_along_axis(cands, best[..., None, None], axis=-2)[..., 0, :]
    return quat_canonicalize(quat_normalize(q))


def quat_from_axis_angle(axis: np.ndarray, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_from_yaw(theta) -> np.ndarray:
    half = 0.5 * np.asarray(theta, dtype=float)
    z = np.zeros_like(half)
    return np.stack([np.cos(half), z, np.sin(half), z], axis=-1)


def yaw_from_quat(q: np.ndarray) -> np.ndarray:
    """Heading angle of the rotated +z axis projected on the ground."""
    f = quat_rotate(q, FORWARD)
    return np.arctan2(f[..., 0], f[..., 2])


def quat_nlerp(a: np.ndarray, b: np.ndarray, t) -> np.ndarray:
    """Normalized lerp with hemisphere correction."""
    t = np.asarray(t, dtype=float)[..., None]
    b = np.where(np.sum(a * b, axis=-1, keepdims=True) < 0, -b, b)
    return quat_normalize((1.0 - t) * a + t * b)


# -- scaled angle-axis ----------------------------------------------------------
def to_scaled_angle_axis(q: np.ndarray) -> np.ndarray:
    """Log map: unit quaternion to axis * angle (angle in [0, pi])."""
    q = quat_canonicalize(np.asarray(q, dtype=float))
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    # angle / s -> 2 / w as s -> 0
    scale = np.where(s > 1e-12, angle / np.maximum(s, 1e-300), 2.0 / np.maximum(q[..., :1], 1e-300))
    return v * scale


def from_scaled_angle_axis(v: np.ndarray) -> np.ndarray:
    """Exp map: axis * angle to unit quaternion."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(half) / angle -> 0.5 as angle -> 0
    k = np.where(angle > 1e-12, np.sin(half) / np.maximum(angle, 1e-300), 0.5 - angle * angle / 48.0)
    return np.concatenate([np.cos(half), v * k], axis=-1)


# -- 2-axis (6D) rotations --------------------------------------------------------
def two_axis_from_matrix(R: np.ndarray) -> np.ndarray:
    """First two matrix columns, concatenated: ``[c0 (3), c1 (3)]``."""
    R = np.asarray(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def matrix_from_two_axis(t: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Gram-Schmidt on the two stored columns, third column by cross product."""
    t = np.asarray(t, dtype=float)
    a, b = t[..., :3], t[..., 3:6]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < eps):
        raise DegenerateRotationError("two-axis rotation has a zero first column")
    c0 = a / na
    b = b - np.sum(c0 * b, axis=-1, keepdims=True) * c0
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if np.any(nb < eps):
        raise DegenerateRotationError("two-axis rotation columns are parallel")
    c1 = b / nb
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=-1)


def quat_to_two_axis(q: np.ndarray) -> np.ndarray:
    return two_axis_from_matrix(quat_to_matrix(q))


def quat_from_two_axis(t: np.ndarray) -> np.ndarray:
    return quat_from_matrix(matrix_from_two_axis(t))


# -- root transforms ---------------------------------------------------------------
@dataclass
class RootTransform:
    """Ground-plane character transform; orientation is a pure yaw quaternion.

    Arrays may carry leading (time) axes: position ``[..., 3]``, orientation ``[..., 4]``.
    """

    position: np.ndarray
    orientation: np.ndarray

    @classmethod
    def identity(cls) -> "RootTransform":
        return cls(np.zeros(3), quat_identity())

    @classmethod
    def from_yaw(cls, position, theta) -> "RootTransform":
        return cls(np.asarray(position, dtype=float), quat_from_yaw(theta))

    @property
    def yaw(self) -> np.ndarray:
        return yaw_from_quat(self.orientation)

    def __getitem__(self, i) -> "RootTransform":
        return RootTransform(self.position[i], self.orientation[i])

    def __len__(self) -> int:
        return len(self.position)


def to_root_space(v: np.ndarray, root: RootTransform, is_point: bool = False) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if is_point:
        v = v - root.position
    return quat_rotate(quat_conj(root.orientation), v)


def from_root_space(v: np.ndarray, root: RootTransform, is_point: bool = False) -> np.ndarray:
    out = quat_rotate(root.orientation, np.asarray(v, dtype=float))
    if is_point:
        out = out + root.position
    return out


def integrate_root(root: RootTransform, vel_p: np.ndarray, vel_r: np.ndarray, dt: float) -> RootTransform:
    """Advance a root by root-space translational / angular velocity over ``dt``.

    Translation is rotated by the current orientation; only the vertical
    (yaw) part of the angular velocity is applied, keeping the root upright.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    vel_p = np.asarray(vel_p, dtype=float)
    vel_r = np.asarray(vel_r, dtype=float)
    position = root.position + quat_rotate(root.orientation, vel_p) * dt
    orientation = quat_mul(root.orientation, quat_from_yaw(vel_r[..., 1] * dt))
    return RootTransform(position, orientation)


# -- forward kinematics ------------------------------------------------------------
def _parents_of(skeleton) -> np.ndarray:
    return np.asarray(getattr(skeleton, "parents", skeleton), dtype=int)


def forward_kinematics(skeleton, local_pos: np.ndarray, local_rot: np.ndarray,
                       root: RootTransform | None = None) -> tuple[np.ndarray, np.ndarray]:
    """World positions ``[..., J, 3]`` and rotations ``[..., J, 4]``.

    ``skeleton`` is anything with a ``parents`` sequence (or the sequence
    itself); parents must precede children and joint 0 is the root joint,
    whose local transform is composed with ``root`` when given.
    """
    parents = _parents_of(skeleton)
    J = len(parents)
    gpos = [None] * J
    grot = [None] * J
    for j in range(J):
        p = parents[j]
        if p < 0:
            if root is None:
                gpos[j] = local_pos[..., j, :]
                grot[j] = local_rot[..., j, :]
            else:
                gpos[j] = quat_rotate(root.orientation, local_pos[..., j, :]) + root.position
                grot[j] = quat_mul(root.orientation, local_rot[..., j, :])
        else:
            gpos[j] = quat_rotate(grot[p], local_pos[..., j, :]) + gpos[p]
            grot[j] = quat_mul(grot[p], local_rot[..., j, :])
    return np.stack(gpos, axis=-2), np.stack(grot, axis=-2)


def compute_root(world_pos: np.ndarray, world_rot: np.ndarray, hips: int, spine: int,
                 min_norm: float = 1e-4) -> RootTransform:
    """Per-frame root from a ``[T, J, ...]`` world pose sequence.

    Position is the spine joint projected to the ground; orientation is the
    yaw of the ground-projected hip z-axis. Degenerate frames reuse the
    previous frame's heading.
    """
    world_pos = np.asarray(world_pos, dtype=float)
    pos = world_pos[:, spine].copy()
    pos[:, 1] = 0.0
    fwd = quat_rotate(world_rot[:, hips], FORWARD)
    norms = np.hypot(fwd[:, 0], fwd[:, 2])
    theta = np.arctan2(fwd[:, 0], fwd[:, 2])
    bad = norms < min_norm
    if bad[0]:
        raise DegenerateRotationError("hip z-axis is vertical on the first frame")
    for t in np.nonzero(bad)[0]:
        theta[t] = theta[t - 1]
    return RootTransform(pos, quat_from_yaw(theta))


# -- velocities ----------------------------------------------------------------------
def finite_difference_velocities(values: np.ndarray, dt: float) -> np.ndarray:
    """Forward differences along axis 0; length shrinks by one."""
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        raise ValueError("need at least two frames for finite differences")
    return (values[1:] - values[:-1]) / dt


def angular_velocities(quats: np.ndarray, dt: float, local: bool = False) -> np.ndarray:
    """Scaled angle-axis velocity between consecutive rotations along axis 0.

    ``local=False`` measures the step in the parent frame (``q1 q0^-1``),
    ``local=True`` in the rotating frame itself (``q0^-1 q1``).
    """
    quats = np.asarray(quats, dtype=float)
    if len(quats) < 2:
        raise ValueError("need at least two frames for finite differences")
    a, b = quats[:-1], quats[1:]
    rel = quat_mul(quat_conj(a), b) if local else quat_mul(b, quat_conj(a))
    return to_scaled_angle_axis(rel) / dt


def pad_last(vel: np.ndarray) -> np.ndarray:
    """Duplicate the final velocity so the track matches the frame count."""
    return np.concatenate([vel, vel[-1:]], axis=0)
