"""Style features, pose states, target facing and normalization statistics.

Both per-frame vectors share the joint block layout

    [rho_p (3J), rho_r (6J), rho_dp (3J), rho_dr (3J)]

where joint 0 (the hips) is expressed relative to the character root. The
style feature appends root velocities ``[root_dp (3), root_dr (3)]``; the
pose state appends ``[root_p (3), root_r (4), root_dp (3), root_dr (3)]``.
Root velocities are expressed in the current frame's root space.
Velocities are forward differences with the last frame duplicated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import geom
from .clip import MotionClip, Skeleton


class PoseLayout:
    """Column slices of style-feature and pose-state vectors for ``J`` joints."""

    def __init__(self, num_joints: int):
        J = self.num_joints = num_joints
        self.rho_p = slice(0, 3 * J)
        self.rho_r = slice(3 * J, 9 * J)
        self.rho_dp = slice(9 * J, 12 * J)
        self.rho_dr = slice(12 * J, 15 * J)
        self.joint_block = slice(0, 15 * J)
        # pose state
        self.root_p = slice(15 * J, 15 * J + 3)
        self.root_r = slice(15 * J + 3, 15 * J + 7)
        self.root_dp = slice(15 * J + 7, 15 * J + 10)
        self.root_dr = slice(15 * J + 10, 15 * J + 13)
        # style feature
        self.feat_root_dp = slice(15 * J, 15 * J + 3)
        self.feat_root_dr = slice(15 * J + 3, 15 * J + 6)

    @property
    def style_dim(self) -> int:
        return 15 * self.num_joints + 6

    @property
    def pose_dim(self) -> int:
        return 15 * self.num_joints + 13

    @property
    def encoding_dim(self) -> int:
        """Pose-state columns the decoder predicts (everything but root_p, root_r)."""
        return self.style_dim

    def encoding_columns(self) -> np.ndarray:
        J = self.num_joints
        return np.r_[0:15 * J, 15 * J + 7:15 * J + 13]

    def encoding_from_pose(self, y: np.ndarray) -> np.ndarray:
        return y[..., self.encoding_columns()]


@dataclass
class _Extracted:
    rho_p: np.ndarray
    rho_q: np.ndarray
    root: geom.RootTransform
    root_dp: np.ndarray
    root_dr: np.ndarray


def _extract(clip: MotionClip) -> _Extracted:
    skel = clip.skeleton
    dt = 1.0 / clip.fps
    wpos, wrot = clip.world()
    root = geom.compute_root(wpos, wrot, skel.hips_index, skel.spine_index)
    rho_p = clip.positions.copy()
    rho_q = clip.rotations.copy()
    rho_p[:, 0] = geom.to_root_space(clip.positions[:, 0], root, is_point=True)
    rho_q[:, 0] = geom.quat_mul(geom.quat_conj(root.orientation), clip.rotations[:, 0])
    rho_q = geom.quat_canonicalize(geom.quat_normalize(rho_q))
    step = geom.finite_difference_velocities(root.position, 1.0)
    root_dp = geom.pad_last(geom.quat_rotate(geom.quat_conj(root.orientation[:-1]), step) / dt)
    root_dr = geom.pad_last(geom.angular_velocities(root.orientation, dt, local=True))
    return _Extracted(rho_p, rho_q, root, root_dp, root_dr)


def _joint_block(ex: _Extracted, dt: float) -> np.ndarray:
    T = len(ex.rho_p)
    rho_dp = geom.pad_last(geom.finite_difference_velocities(ex.rho_p, dt))
    rho_dr = geom.pad_last(geom.angular_velocities(ex.rho_q, dt))
    return np.concatenate([
        ex.rho_p.reshape(T, -1),
        geom.quat_to_two_axis(ex.rho_q).reshape(T, -1),
        rho_dp.reshape(T, -1),
        rho_dr.reshape(T, -1),
    ], axis=1)


def extract_style_features(clip: MotionClip) -> np.ndarray:
    """``[T, 15J + 6]`` style feature frames (unnormalized)."""
    ex = _extract(clip)
    return np.concatenate([_joint_block(ex, 1.0 / clip.fps), ex.root_dp, ex.root_dr], axis=1)


def extract_pose_states(clip: MotionClip) -> np.ndarray:
    """``[T, 15J + 13]`` pose states (unnormalized), root quaternions canonical."""
    ex = _extract(clip)
    return np.concatenate([
        _joint_block(ex, 1.0 / clip.fps),
        ex.root.position,
        geom.quat_canonicalize(ex.root.orientation),
        ex.root_dp,
        ex.root_dr,
    ], axis=1)


def pose_states_to_clip(y: np.ndarray, skeleton: Skeleton, fps: float = 60.0, style: str = "",
                        source_id: str = "") -> MotionClip:
    """Rebuild local joint transforms from pose states (inverse of extraction)."""
    y = np.asarray(y, dtype=float)
    T = len(y)
    L = PoseLayout(skeleton.num_joints)
    pos = y[:, L.rho_p].reshape(T, -1, 3).copy()
    rot = geom.quat_from_two_axis(y[:, L.rho_r].reshape(T, -1, 6))
    root = geom.RootTransform(y[:, L.root_p], geom.quat_normalize(y[:, L.root_r]))
    pos[:, 0] = geom.from_root_space(pos[:, 0], root, is_point=True)
    rot[:, 0] = geom.quat_canonicalize(geom.quat_mul(root.orientation, rot[:, 0]))
    return MotionClip(skeleton, pos, rot, fps=fps, style=style, source_id=source_id)


def compute_target_facing(clip: MotionClip, min_norm: float = 1e-4) -> np.ndarray:
    """Median ground-projected head z-axis as a unit ``(x, z)`` direction."""
    _, wrot = clip.world()
    fwd = geom.quat_rotate(wrot[:, clip.skeleton.head_index], geom.FORWARD)[:, [0, 2]]
    norms = np.linalg.norm(fwd, axis=1)
    ok = norms >= min_norm
    if not ok.any():
        raise ValueError("head direction is degenerate on every frame")
    med = np.median(fwd[ok] / norms[ok, None], axis=0)
    n = np.linalg.norm(med)
    if n < min_norm:
        raise ValueError("median head direction is degenerate")
    return med / n


def facing_in_root_space(facing: np.ndarray, root_orientation: np.ndarray) -> np.ndarray:
    """Rotate a world ``(x, z)`` ground direction into root space."""
    f3 = np.stack([facing[..., 0], np.zeros_like(facing[..., 0]), facing[..., 1]], axis=-1)
    local = geom.quat_rotate(geom.quat_conj(root_orientation), f3)
    return local[..., [0, 2]]


# -- normalization ----------------------------------------------------------------
@dataclass
class Moments:
    """Order-independent running sums for per-dimension mean / std."""

    count: int = 0
    total: np.ndarray = None
    total_sq: np.ndarray = None

    def add(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64).reshape(-1, np.shape(x)[-1])
        if self.total is None:
            self.total = np.zeros(x.shape[1])
            self.total_sq = np.zeros(x.shape[1])
        self.count += len(x)
        self.total += x.sum(axis=0)
        self.total_sq += (x * x).sum(axis=0)

    def finalize(self, floor: float) -> tuple[np.ndarray, np.ndarray]:
        if self.count == 0:
            raise ValueError("cannot fit normalization on an empty dataset")
        mean = self.total / self.count
        var = np.maximum(self.total_sq / self.count - mean * mean, 0.0)
        return mean, np.maximum(np.sqrt(var), floor)


@dataclass
class NormalizationStats:
    """Per-dimension z-score statistics keyed by representation ("pose", "style", ...)."""

    mean: dict[str, np.ndarray] = field(default_factory=dict)
    std: dict[str, np.ndarray] = field(default_factory=dict)
    floor: float = 1e-4

    def normalize(self, x, key: str):
        return (x - self.mean[key]) / self.std[key]

    def denormalize(self, x, key: str):
        return x * self.std[key] + self.mean[key]

    def to_dict(self) -> dict:
        return {
            "floor": self.floor,
            "mean": {k: v.tolist() for k, v in self.mean.items()},
            "std": {k: v.tolist() for k, v in self.std.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            mean={k: np.asarray(v, dtype=np.float64) for k, v in d["mean"].items()},
            std={k: np.asarray(v, dtype=np.float64) for k, v in d["std"].items()},
            floor=d.get("floor", 1e-4),
        )


def fit_normalization(data: dict[str, list[np.ndarray]], floor: float = 1e-4) -> NormalizationStats:
    """Fit stats from ``{key: [frames x dims arrays]}`` over all frames."""
    stats = NormalizationStats(floor=floor)
    for key, arrays in data.items():
        acc = Moments()
        for a in arrays:
            acc.add(a)
        stats.mean[key], stats.std[key] = acc.finalize(floor)
    return stats
