"""Reconstruction and KL objectives.

The reconstruction terms are mean absolute errors, i.e. the negative
log-likelihood of a factorized Laplace observation model up to constants,
so the weighted sum stands in for the expected negative log-likelihood of
the ELBO. Every term is the sum of a local-space and a world-space MAE;
world quantities come from differentiable forward kinematics (positions,
rotations) and velocity kinematics (linear / angular velocities) applied to
the pose-state vectors, with the root transform taken from ``root_p`` and
``root_r``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .motion.features import PoseLayout
from .tensor import Tensor

TERMS = ("p", "r", "vp", "vr", "dp", "dr", "f")


@dataclass
class LossWeights:
    p: float = 1.0
    r: float = 1.0
    vp: float = 1.0
    vr: float = 1.0
    dp: float = 1.0
    dr: float = 1.0
    f: float = 1.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# -- differentiable rotation helpers -------------------------------------------------
def matrix_from_two_axis(t: Tensor) -> Tensor:
    """Gram-Schmidt ``[..., 6] -> [..., 3, 3]`` (columns c0, c1, c0 x c1)."""
    a, b = t[..., 0:3], t[..., 3:6]
    c0 = a / T.sqrt((a * a).sum(axis=-1, keepdims=True))
    b = b - (c0 * b).sum(axis=-1, keepdims=True) * c0
    c1 = b / T.sqrt((b * b).sum(axis=-1, keepdims=True))
    c2 = T.cross(c0, c1)
    return T.stack([c0, c1, c2], axis=-1)


def two_axis_from_matrix(R: Tensor) -> Tensor:
    return T.concat([R[..., :, 0], R[..., :, 1]], axis=-1)


def quat_to_matrix(q: Tensor) -> Tensor:
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    rows = [
        T.stack([1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)], axis=-1),
        T.stack([2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)], axis=-1),
        T.stack([2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)], axis=-1),
    ]
    return T.stack(rows, axis=-2)


def yaw_quaternion(theta: Tensor) -> Tensor:
    half = theta * 0.5
    zero = T.Tensor(np.zeros(theta.shape, dtype=theta.dtype))
    return T.stack([T.cos(half), zero, T.sin(half), zero], axis=-1)


def rotate(R: Tensor, v: Tensor) -> Tensor:
    return T.matmul(R, v.reshape(v.shape + (1,))).reshape(v.shape)


@dataclass
class WorldPose:
    positions: Tensor         # [..., J, 3]
    rotations: Tensor         # [..., J, 3, 3]
    linear_velocity: Tensor   # [..., J, 3]
    angular_velocity: Tensor  # [..., J, 3]
    root_rotation: Tensor     # [..., 3, 3]


def world_pose(y: Tensor, parents: np.ndarray, layout: PoseLayout) -> WorldPose:
    """Forward and velocity kinematics of pose states ``[..., D_y]``."""
    J = layout.num_joints
    lead = y.shape[:-1]
    rho_p = y[..., layout.rho_p].reshape(lead + (J, 3))
    rho_R = matrix_from_two_axis(y[..., layout.rho_r].reshape(lead + (J, 6)))
    rho_dp = y[..., layout.rho_dp].reshape(lead + (J, 3))
    rho_dr = y[..., layout.rho_dr].reshape(lead + (J, 3))
    root_R = quat_to_matrix(y[..., layout.root_r])
    root_p = y[..., layout.root_p]
    root_w = rotate(root_R, y[..., layout.root_dr])
    root_v = rotate(root_R, y[..., layout.root_dp])

    pos, rot, lin, ang = [None] * J, [None] * J, [None] * J, [None] * J
    for j in range(J):
        p = parents[j]
        if p < 0:
            PR, PP, PV, PW = root_R, root_p, root_v, root_w
        else:
            PR, PP, PV, PW = rot[p], pos[p], lin[p], ang[p]
        offset = rotate(PR, rho_p[..., j, :])
        pos[j] = PP + offset
        rot[j] = T.matmul(PR, rho_R[..., j, :, :])
        ang[j] = PW + rotate(PR, rho_dr[..., j, :])
        lin[j] = PV + rotate(PR, rho_dp[..., j, :]) + T.cross(PW, offset)
    axis = len(lead)
    return WorldPose(T.stack(pos, axis=axis), T.stack(rot, axis=axis), T.stack(lin, axis=axis),
                     T.stack(ang, axis=axis), root_R)


def mae(a: Tensor, b: Tensor) -> Tensor:
    return T.absolute(a - b).mean()


def _fd(x: Tensor, dt: float, time_axis: int) -> Tensor:
    n = x.shape[time_axis]
    hi = [slice(None)] * x.ndim
    lo = [slice(None)] * x.ndim
    hi[time_axis] = slice(1, n)
    lo[time_axis] = slice(0, n - 1)
    return (x[tuple(hi)] - x[tuple(lo)]) * (1.0 / dt)


def reconstruction_loss(pred: Tensor, target, parents, layout: PoseLayout,
                        weights: LossWeights | None = None, dt: float = 1.0 / 60.0) -> tuple[Tensor, dict]:
    """Weighted MAE terms between pose-state sequences ``[..., T, D_y]``.

    Returns the total and a dict of the unweighted terms (Tensors).
    """
    target = T.as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    weights = weights or LossWeights()
    parents = np.asarray(getattr(parents, "parents", parents), dtype=int)
    L = layout
    wp, wt = world_pose(pred, parents, L), world_pose(target, parents, L)
    t_axis = pred.ndim - 2
    has_fd = pred.shape[t_axis] >= 2
    vp_cols = np.r_[L.rho_dp.start:L.rho_dp.stop, L.root_dp.start:L.root_dp.stop]
    vr_cols = np.r_[L.rho_dr.start:L.rho_dr.stop, L.root_dr.start:L.root_dr.stop]

    def six(R):
        return two_axis_from_matrix(R)

    terms = {
        "p": mae(pred[..., L.rho_p], target[..., L.rho_p]) + mae(wp.positions, wt.positions),
        "r": mae(pred[..., L.rho_r], target[..., L.rho_r]) + mae(six(wp.rotations), six(wt.rotations)),
        "vp": mae(pred[..., vp_cols], target[..., vp_cols]) + mae(wp.linear_velocity, wt.linear_velocity),
        "vr": mae(pred[..., vr_cols], target[..., vr_cols]) + mae(wp.angular_velocity, wt.angular_velocity),
    }
    if has_fd:
        terms["dp"] = (mae(_fd(pred[..., L.rho_p], dt, t_axis), _fd(target[..., L.rho_p], dt, t_axis))
                       + mae(_fd(wp.positions, dt, t_axis), _fd(wt.positions, dt, t_axis)))
        terms["dr"] = (mae(_fd(pred[..., L.rho_r], dt, t_axis), _fd(target[..., L.rho_r], dt, t_axis))
                       + mae(_fd(six(wp.rotations), dt, t_axis), _fd(six(wt.rotations), dt, t_axis)))
    else:
        zero = T.Tensor(np.zeros((), dtype=pred.dtype))
        terms["dp"] = terms["dr"] = zero
    fp = wp.root_rotation[..., [0, 2], 2]
    ft = wt.root_rotation[..., [0, 2], 2]
    terms["f"] = mae(fp, ft)
    w = weights.as_dict()
    total = None
    for k in TERMS:
        contrib = terms[k] * w[k]
        total = contrib if total is None else total + contrib
    return total, terms


def kl_loss(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over the last axis, averaged over the rest."""
    mu, sigma = T.as_tensor(mu), T.as_tensor(sigma)
    per = (sigma * sigma + mu * mu - 1.0 - 2.0 * T.log(sigma)).sum(axis=-1) * 0.5
    return per.mean() if per.ndim else per


def kl_from_logvar(mu: Tensor, logvar: Tensor) -> Tensor:
    per = (T.exp(logvar) + mu * mu - 1.0 - logvar).sum(axis=-1) * 0.5
    return per.mean() if per.ndim else per


def elbo_loss(recon: Tensor, kl: Tensor, beta: float) -> Tensor:
    return recon + kl * beta
