"""Skeletons, motion clips, mirroring and speed resampling."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .. import geom


class SkeletonError(ValueError):
    pass


_SIDE_PATTERNS = [("Left", "Right"), ("left", "right"), ("LEFT", "RIGHT")]


def _mirror_name(name: str) -> Optional[str]:
    for a, b in _SIDE_PATTERNS:
        if a in name:
            return name.replace(a, b)
        if b in name:
            return name.replace(b, a)
    m = re.match(r"^([LR])([_ .].*)$", name)
    if m:
        return ("R" if m.group(1) == "L" else "L") + m.group(2)
    return None


@dataclass
class Skeleton:
    """Kinematic tree with named role joints and a left/right pairing.

    ``parents`` must list each parent before its children with ``-1`` for
    joint 0. ``offsets`` are rest translations in meters. ``has_position``
    records which joints carry per-frame translation channels in BVH.
    """

    names: list[str]
    parents: np.ndarray
    offsets: np.ndarray
    hips: str = ""
    spine: str = ""
    head: str = ""
    mirror: Optional[np.ndarray] = None
    has_position: Optional[list[bool]] = None
    end_sites: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=int)
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(-1, 3)
        J = len(self.names)
        if len(self.parents) != J or len(self.offsets) != J:
            raise SkeletonError("names, parents and offsets must have equal length")
        if len(set(self.names)) != J:
            raise SkeletonError("joint names must be unique")
        if J == 0 or self.parents[0] != -1:
            raise SkeletonError("joint 0 must be the root (parent -1)")
        for j in range(1, J):
            p = self.parents[j]
            if p < 0:
                raise SkeletonError(f"joint {self.names[j]!r} is a second root")
            if p >= j:
                # walk up to detect a cycle before rejecting the ordering
                seen, k = {j}, p
                while k >= 0:
                    if k in seen:
                        raise SkeletonError(f"cyclic parent chain at joint {self.names[j]!r}")
                    seen.add(k)
                    k = self.parents[k]
                raise SkeletonError(f"parent of {self.names[j]!r} must precede it")
        self.hips = self.hips or self.names[0]
        if not self.spine:
            self.spine = next((n for n in ("Spine2", "Spine1", "Spine") if n in self.names), self.names[0])
        if not self.head:
            self.head = "Head" if "Head" in self.names else self.names[-1]
        for role in (self.hips, self.spine, self.head):
            if role not in self.names:
                raise SkeletonError(f"role joint {role!r} not in skeleton")
        if self.has_position is None:
            self.has_position = [j == 0 for j in range(J)]
        self.end_sites = {int(k): np.asarray(v, dtype=float) for k, v in self.end_sites.items()}
        if self.mirror is None:
            self.mirror = self._mirror_from_names()
        self.mirror = np.asarray(self.mirror, dtype=int)
        if not np.array_equal(self.mirror[self.mirror], np.arange(J)):
            raise SkeletonError("mirror map must be an involution")

    def _mirror_from_names(self) -> np.ndarray:
        index = {n: i for i, n in enumerate(self.names)}
        out = np.arange(len(self.names))
        for i, n in enumerate(self.names):
            other = _mirror_name(n)
            if other is None:
                continue
            if other not in index:
                raise SkeletonError(f"joint {n!r} has no mirror counterpart {other!r}")
            out[i] = index[other]
        return out

    @property
    def num_joints(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SkeletonError(f"unknown joint {name!r}") from None

    @property
    def hips_index(self) -> int:
        return self.index(self.hips)

    @property
    def spine_index(self) -> int:
        return self.index(self.spine)

    @property
    def head_index(self) -> int:
        return self.index(self.head)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "parents": self.parents.tolist(),
            "offsets": self.offsets.tolist(),
            "hips": self.hips,
            "spine": self.spine,
            "head": self.head,
            "mirror": self.mirror.tolist(),
            "has_position": list(self.has_position),
            "end_sites": {str(k): v.tolist() for k, v in self.end_sites.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        d = dict(d)
        d["end_sites"] = {int(k): v for k, v in d.get("end_sites", {}).items()}
        return cls(**d)

    def same_topology(self, other: "Skeleton") -> bool:
        return self.names == other.names and np.array_equal(self.parents, other.parents)


@dataclass
class MotionClip:
    """Per-frame local joint translations ``[T, J, 3]`` and rotations ``[T, J, 4]``.

    Joint 0 holds the global transform of the skeleton root.
    """

    skeleton: Skeleton
    positions: np.ndarray
    rotations: np.ndarray
    fps: float = 60.0
    style: str = ""
    source_id: str = ""

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float)
        J = self.skeleton.num_joints
        if self.positions.shape[1:] != (J, 3) or self.rotations.shape[1:] != (J, 4):
            raise ValueError(
                f"pose arrays {self.positions.shape}/{self.rotations.shape} do not match {J} joints")
        if len(self.positions) != len(self.rotations):
            raise ValueError("position and rotation frame counts differ")
        if len(self.positions) < 2:
            raise ValueError("a motion clip needs at least 2 frames")

    @property
    def num_frames(self) -> int:
        return len(self.positions)

    @property
    def duration(self) -> float:
        return self.num_frames / self.fps

    def world(self) -> tuple[np.ndarray, np.ndarray]:
        return geom.forward_kinematics(self.skeleton, self.positions, self.rotations)

    def slice(self, start: int, stop: int) -> "MotionClip":
        return replace(self, positions=self.positions[start:stop], rotations=self.rotations[start:stop])


def mirror_clip(clip: MotionClip) -> MotionClip:
    """Reflect across the x = 0 plane and swap left/right joints."""
    m = clip.skeleton.mirror
    pos = clip.positions[:, m] * np.array([-1.0, 1.0, 1.0])
    rot = clip.rotations[:, m] * np.array([1.0, 1.0, -1.0, -1.0])
    sid = clip.source_id[:-7] if clip.source_id.endswith("#mirror") else clip.source_id + "#mirror"
    return replace(clip, positions=pos, rotations=rot, source_id=sid)


def resample_times(num_frames: int, speed_factor: float) -> np.ndarray:
    """Source frame times for a clip played ``speed_factor`` times faster."""
    if not 0.5 <= speed_factor <= 2.0:
        raise ValueError(f"speed factor must lie in [0.5, 2], got {speed_factor}")
    n = int(round(num_frames / speed_factor))
    if n < 2:
        raise ValueError(f"resampling {num_frames} frames by {speed_factor} leaves {n} frames")
    return np.linspace(0.0, num_frames - 1, n)


def sample_frames(positions: np.ndarray, rotations: np.ndarray, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear / hemisphere-corrected nlerp interpolation at fractional frame times."""
    times = np.asarray(times, dtype=float)
    last = len(positions) - 1
    i0 = np.clip(np.floor(times).astype(int), 0, last)
    i1 = np.minimum(i0 + 1, last)
    a = (times - i0)[:, None, None]
    pos = positions[i0] * (1.0 - a) + positions[i1] * a
    rot = geom.quat_nlerp(rotations[i0], rotations[i1], a[..., 0])
    return pos, rot


def resample_clip(clip: MotionClip, speed_factor: float) -> MotionClip:
    if speed_factor == 1.0:
        return replace(clip)
    times = resample_times(clip.num_frames, speed_factor)
    pos, rot = sample_frames(clip.positions, clip.rotations, times)
    return replace(clip, positions=pos, rotations=rot)


def resample_sequence(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Per-channel linear interpolation of ``[T, C]`` at fractional frame times."""
    values = np.asarray(values)
    last = len(values) - 1
    i0 = np.clip(np.floor(times).astype(int), 0, last)
    i1 = np.minimum(i0 + 1, last)
    a = (times - i0)[:, None]
    return values[i0] * (1.0 - a) + values[i1] * a


def check_same_skeleton(clips: Sequence[MotionClip]) -> None:
    skel = clips[0].skeleton
    for c in clips[1:]:
        if not c.skeleton.same_topology(skel):
            raise SkeletonError(f"clip {c.source_id!r} uses a different skeleton")
