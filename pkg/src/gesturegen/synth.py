"""Synthetic speech + gesture data with controllable styles.

Used for tests, the overfit probe and CLI demos when no motion-capture
dataset is available. Speech is a train of voiced "syllables" (harmonic
tones under an amplitude envelope); arm raise, head nod and torso sway
follow the same envelope, with per-style posture and gain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom
from .audio import Waveform
from .motion.clip import MotionClip, Skeleton

_JOINTS = [
    # name, parent, offset (meters)
    ("Hips", -1, (0.0, 0.95, 0.0)),
    ("Spine", 0, (0.0, 0.10, 0.0)),
    ("Spine1", 1, (0.0, 0.12, 0.0)),
    ("Spine2", 2, (0.0, 0.12, 0.0)),
    ("Neck", 3, (0.0, 0.15, 0.0)),
    ("Head", 4, (0.0, 0.10, 0.02)),
    ("LeftShoulder", 3, (0.08, 0.10, 0.0)),
    ("LeftArm", 6, (0.12, 0.0, 0.0)),
    ("LeftForeArm", 7, (0.26, 0.0, 0.0)),
    ("LeftHand", 8, (0.24, 0.0, 0.0)),
    ("RightShoulder", 3, (-0.08, 0.10, 0.0)),
    ("RightArm", 10, (-0.12, 0.0, 0.0)),
    ("RightForeArm", 11, (-0.26, 0.0, 0.0)),
    ("RightHand", 12, (-0.24, 0.0, 0.0)),
    ("LeftUpLeg", 0, (0.10, -0.05, 0.0)),
    ("LeftLeg", 14, (0.0, -0.44, 0.0)),
    ("LeftFoot", 15, (0.0, -0.42, 0.0)),
    ("RightUpLeg", 0, (-0.10, -0.05, 0.0)),
    ("RightLeg", 17, (0.0, -0.44, 0.0)),
    ("RightFoot", 18, (0.0, -0.42, 0.0)),
]


def gesture_skeleton() -> Skeleton:
    """20-joint humanoid (depth-first order, y-up, forward +z, left = +x)."""
    names = [j[0] for j in _JOINTS]
    return Skeleton(
        names=names,
        parents=np.array([j[1] for j in _JOINTS]),
        offsets=np.array([j[2] for j in _JOINTS]),
        hips="Hips", spine="Spine2", head="Head",
        end_sites={5: np.array([0.0, 0.12, 0.0]), 9: np.array([0.1, 0.0, 0.0]),
                   13: np.array([-0.1, 0.0, 0.0]), 16: np.array([0.0, -0.05, 0.12]),
                   19: np.array([0.0, -0.05, 0.12])},
    )


def toy_skeleton() -> Skeleton:
    """3-joint chain for gradient checks."""
    return Skeleton(names=["Hips", "Spine", "Head"], parents=np.array([-1, 0, 1]),
                    offsets=np.array([[0.0, 1.0, 0.0], [0.0, 0.3, 0.0], [0.0, 0.4, 0.1]]),
                    hips="Hips", spine="Spine", head="Head")


@dataclass
class StyleSpec:
    name: str
    arm_base: float      # shoulder abduction at rest (radians, larger = hands higher)
    arm_gain: float      # extra abduction per unit speech envelope
    elbow: float         # forearm flexion
    sway: float          # torso yaw sway amplitude (radians)
    lean: float          # forward spine lean (radians)


STYLES = {
    "High": StyleSpec("High", arm_base=1.25, arm_gain=0.45, elbow=0.9, sway=0.10, lean=-0.05),
    "Low": StyleSpec("Low", arm_base=0.15, arm_gain=0.20, elbow=0.3, sway=0.03, lean=0.25),
    "Mid": StyleSpec("Mid", arm_base=0.7, arm_gain=0.3, elbow=0.6, sway=0.06, lean=0.08),
}


def speech_envelope(duration: float, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Syllable-like on/off envelope in [0, 1] sampled at ``rate`` Hz."""
    n = int(round(duration * rate))
    env = np.zeros(n)
    t = rng.uniform(0.05, 0.3)
    while t < duration:
        length = rng.uniform(0.12, 0.35)
        amp = rng.uniform(0.5, 1.0)
        a, b = int(t * rate), min(n, int((t + length) * rate))
        if b > a:
            env[a:b] = amp * np.sin(np.linspace(0.0, np.pi, b - a)) ** 2
        gap = rng.uniform(0.05, 0.25) if rng.random() > 0.15 else rng.uniform(0.4, 0.9)
        t += length + gap
    return env


def speech_waveform(env_audio: np.ndarray, sample_rate: int, rng: np.random.Generator) -> Waveform:
    n = len(env_audio)
    t = np.arange(n) / sample_rate
    f0 = 150.0 + 30.0 * np.sin(2 * np.pi * 0.7 * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    voiced = sum(np.sin(k * phase) / k for k in range(1, 9))
    noise = rng.standard_normal(n) * 0.05
    x = env_audio * (0.35 * voiced + noise) + rng.standard_normal(n) * 1e-3
    return Waveform(np.clip(x, -1.0, 1.0), sample_rate)


def _rot(axis, angle) -> np.ndarray:
    return geom.quat_from_axis_angle(np.broadcast_to(np.asarray(axis, dtype=float), np.shape(angle) + (3,)), angle)


def gesture_motion(env: np.ndarray, style: StyleSpec, skeleton: Skeleton, fps: float,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Local positions / rotations driven by a per-frame speech envelope."""
    T = len(env)
    J = skeleton.num_joints
    t = np.arange(T) / fps
    k = max(1, int(0.08 * fps))
    smooth = np.convolve(env, np.ones(k) / k, mode="same")
    pos = np.broadcast_to(skeleton.offsets, (T, J, 3)).copy()
    rot = geom.quat_identity((T, J))
    idx = {n: i for i, n in enumerate(skeleton.names)}
    ph = rng.uniform(0, 2 * np.pi, size=4)

    sway = style.sway * np.sin(2 * np.pi * 0.25 * t + ph[0]) + 0.3 * style.sway * smooth
    pos[:, 0, 0] = 0.02 * np.sin(2 * np.pi * 0.2 * t + ph[1])
    pos[:, 0, 2] = 0.05 * np.sin(2 * np.pi * 0.05 * t + ph[2])
    rot[:, 0] = _rot([0, 1, 0], 0.5 * sway)
    rot[:, idx["Spine1"]] = geom.quat_mul(_rot([1, 0, 0], np.full(T, style.lean)), _rot([0, 1, 0], 0.5 * sway))
    rot[:, idx["Head"]] = _rot([1, 0, 0], 0.15 * smooth - 0.5 * style.lean)
    beat = smooth + 0.1 * np.sin(2 * np.pi * 1.3 * t + ph[3])
    raise_l = style.arm_base + style.arm_gain * beat
    raise_r = style.arm_base + style.arm_gain * np.roll(beat, int(0.1 * fps))
    # arms hang down at zero: a -80 degree z-rotation lowers the +x arm, abduction lifts it
    rot[:, idx["LeftArm"]] = _rot([0, 0, 1], -1.4 + raise_l)
    rot[:, idx["RightArm"]] = _rot([0, 0, 1], 1.4 - raise_r)
    rot[:, idx["LeftForeArm"]] = _rot([0, 1, 0], style.elbow + 0.3 * beat)
    rot[:, idx["RightForeArm"]] = _rot([0, 1, 0], -(style.elbow + 0.3 * beat))
    return pos, rot


@dataclass
class SyntheticClip:
    clip: MotionClip
    waveform: Waveform


def make_clip(style: str, duration: float, seed: int, fps: float = 60.0, sample_rate: int = 16000,
              skeleton: Skeleton | None = None) -> SyntheticClip:
    rng = np.random.default_rng(seed)
    skeleton = skeleton or gesture_skeleton()
    spec = STYLES[style]
    env_audio = speech_envelope(duration, sample_rate, rng)
    frames = int(round(duration * fps))
    env = env_audio[(np.arange(frames) * sample_rate / fps).astype(int).clip(0, len(env_audio) - 1)]
    pos, rot = gesture_motion(env, spec, skeleton, fps, rng)
    clip = MotionClip(skeleton, pos, rot, fps=fps, style=style, source_id=f"{style.lower()}_{seed}")
    return SyntheticClip(clip, speech_waveform(env_audio, sample_rate, rng))
