"""Dataset preparation: manifest ingest, feature extraction, statistics and cache I/O.

A manifest is JSON, either a list of entries or ``{"entries": [...], "bvh": {...}}``
where each entry is ``{"motion": path, "audio": path, "style": label, "split":
"train" | "heldout"}`` (paths relative to the manifest) and the optional ``bvh``
block holds ``parse_bvh`` keyword arguments (joint role names, unit scale).

Every source clip is stored twice, as recorded and mirrored; both copies share
the speech features. Features are extracted after mirroring so velocities stay
consistent with the stored poses.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import audio
from .container import read_dataset_cache, write_dataset_cache
from .motion.bvh import read_bvh
from .motion.clip import MotionClip, Skeleton, SkeletonError, check_same_skeleton, mirror_clip
from .motion.features import (
    NormalizationStats,
    PoseLayout,
    compute_target_facing,
    extract_pose_states,
    extract_style_features,
    facing_in_root_space,
    fit_normalization,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "heldout")


class DataError(ValueError):
    """Manifest or input-file problem; the message names the offending file."""


@dataclass
class ManifestEntry:
    motion: Path
    audio: Path
    style: str
    split: str = "train"

    def __post_init__(self):
        if not self.style:
            raise DataError(f"{self.motion}: empty style label")
        if self.split not in SPLITS:
            raise DataError(f"{self.motion}: split must be one of {SPLITS}, got {self.split!r}")


def load_manifest(path) -> tuple[list[ManifestEntry], dict]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read manifest ({exc})") from exc
    bvh_opts = {}
    if isinstance(doc, dict):
        bvh_opts = dict(doc.get("bvh", {}))
        doc = doc.get("entries", [])
    base = path.parent
    entries = []
    for i, item in enumerate(doc):
        try:
            e = ManifestEntry(base / item["motion"], base / item["audio"], item.get("style", ""),
                              item.get("split", "train"))
        except KeyError as exc:
            raise DataError(f"{path}: entry {i} lacks field {exc}") from exc
        for p in (e.motion, e.audio):
            if not p.exists():
                raise DataError(f"{p}: file not found")
        entries.append(e)
    if not entries:
        raise DataError(f"{path}: manifest has no entries")
    return entries, bvh_opts


@dataclass
class ClipRecord:
    """One (possibly mirrored) clip with aligned features."""

    clip: MotionClip
    speech: np.ndarray      # [T, 81] raw
    pose: np.ndarray        # [T, D_y] raw
    style_features: np.ndarray  # [T, D_a] raw
    facing: np.ndarray      # [2] world target facing
    split: str = "train"
    mirrored: bool = False

    @property
    def clip_id(self) -> str:
        return self.clip.source_id

    @property
    def style(self) -> str:
        return self.clip.style

    @property
    def num_frames(self) -> int:
        return self.clip.num_frames


def make_record(clip: MotionClip, speech: np.ndarray, split: str = "train", mirrored: bool = False) -> ClipRecord:
    """Trim motion and speech to a common length and extract all features."""
    n = min(clip.num_frames, len(speech))
    if n < 2:
        raise DataError(f"{clip.source_id}: fewer than 2 aligned frames")
    if n != clip.num_frames:
        clip = clip.slice(0, n)
    return ClipRecord(clip, np.asarray(speech[:n], dtype=np.float64), extract_pose_states(clip),
                      extract_style_features(clip), compute_target_facing(clip), split, mirrored)


def records_with_mirror(clip: MotionClip, speech: np.ndarray, split: str = "train") -> list[ClipRecord]:
    rec = make_record(clip, speech, split)
    return [rec, make_record(mirror_clip(rec.clip), rec.speech, split, mirrored=True)]


def _load_entry(args) -> list[ClipRecord]:
    entry, bvh_opts = args
    try:
        clip = read_bvh(entry.motion, style=entry.style, source_id=entry.motion.stem, **bvh_opts)
    except (ValueError, SkeletonError) as exc:
        raise DataError(f"{entry.motion}: {exc}") from exc
    try:
        wave = audio.read_wav(entry.audio.read_bytes())
    except ValueError as exc:
        raise DataError(f"{entry.audio}: {exc}") from exc
    speech = audio.speech_features(wave, target_rate=clip.fps)
    return records_with_mirror(clip, speech, entry.split)


def fit_dataset_stats(records: list[ClipRecord], floor: float = 1e-4) -> NormalizationStats:
    """Z-score statistics over training records (pose, style, speech, root-space facing)."""
    train = [r for r in records if r.split == "train"]
    if not train:
        raise DataError("no training clips to fit normalization on")
    L = PoseLayout(train[0].clip.skeleton.num_joints)
    facing = [facing_in_root_space(np.broadcast_to(r.facing, (r.num_frames, 2)), r.pose[:, L.root_r])
              for r in train]
    return fit_normalization({
        "pose": [r.pose for r in train],
        "style": [r.style_features for r in train],
        "speech": [r.speech for r in train],
        "facing": facing,
    }, floor=floor)


@dataclass
class Dataset:
    records: list[ClipRecord]
    stats: NormalizationStats
    fps: float = 60.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.records:
            raise DataError("dataset is empty")
        check_same_skeleton([r.clip for r in self.records])
        ids = [r.clip_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate clip ids in dataset")

    @property
    def skeleton(self) -> Skeleton:
        return self.records[0].clip.skeleton

    @property
    def layout(self) -> PoseLayout:
        return PoseLayout(self.skeleton.num_joints)

    def split(self, name: str) -> list[ClipRecord]:
        return [r for r in self.records if r.split == name]

    def by_id(self, clip_id: str) -> ClipRecord:
        for r in self.records:
            if r.clip_id == clip_id:
                return r
        raise KeyError(f"unknown clip id {clip_id!r}")

    def with_heldout_styles(self, styles) -> "Dataset":
        """Copy with every clip of ``styles`` moved to the held-out split (stats refit)."""
        styles = set(styles)
        recs = [ClipRecord(**{**r.__dict__, "split": "heldout" if r.style in styles else r.split})
                for r in self.records]
        return Dataset(recs, fit_dataset_stats(recs), self.fps, dict(self.meta))

    @classmethod
    def from_records(cls, records: list[ClipRecord], meta: Optional[dict] = None) -> "Dataset":
        return cls(records, fit_dataset_stats(records), records[0].clip.fps, meta or {})

    # -- reporting -----------------------------------------------------------------
    def style_minutes(self) -> dict[str, float]:
        """Per-style duration in minutes of the recorded (unmirrored) clips."""
        out: dict[str, float] = {}
        for r in self.records:
            if not r.mirrored:
                out[r.style] = out.get(r.style, 0.0) + r.num_frames / self.fps / 60.0
        return dict(sorted(out.items()))

    def report(self) -> str:
        mins = self.style_minutes()
        seqs: dict[str, int] = {}
        for r in self.records:
            if not r.mirrored:
                seqs[r.style] = seqs.get(r.style, 0) + 1
        width = max([5] + [len(s) for s in mins])
        lines = [f"{'Style':<{width}}  {'Sequences':>9}  {'Minutes':>8}"]
        lines += [f"{s:<{width}}  {seqs[s]:>9d}  {m:>8.2f}" for s, m in mins.items()]
        lines.append(f"{'Total':<{width}}  {sum(seqs.values()):>9d}  {sum(mins.values()):>8.2f}")
        lines.append(f"styles: {len(mins)}  clips (with mirrors): {len(self.records)}")
        return "\n".join(lines)

    # -- cache ----------------------------------------------------------------------
    def save(self, path) -> None:
        arrays = {}
        clips = []
        for i, r in enumerate(self.records):
            k = f"clip{i:04d}"
            arrays[f"{k}/positions"] = r.clip.positions
            arrays[f"{k}/rotations"] = r.clip.rotations
            arrays[f"{k}/speech"] = r.speech
            arrays[f"{k}/pose"] = r.pose
            arrays[f"{k}/style"] = r.style_features
            arrays[f"{k}/facing"] = r.facing
            clips.append({"key": k, "id": r.clip_id, "style": r.style, "split": r.split,
                          "mirrored": r.mirrored, "frames": r.num_frames})
        J = self.skeleton.num_joints
        meta = {
            "skeleton": self.skeleton.to_dict(),
            "stats": self.stats.to_dict(),
            "clips": clips,
            "dimensions": {"pose": f"pose:{15 * J + 13}@{self.fps:g}fps",
                           "style": f"style:{15 * J + 6}@{self.fps:g}fps",
                           "speech": f"speech:{audio.FEATURE_DIM}@{self.fps:g}fps"},
            "info": self.meta,
        }
        write_dataset_cache(path, J, self.fps, meta, arrays)

    @classmethod
    def load(cls, path) -> "Dataset":
        _, fps, meta, arrays = read_dataset_cache(path)
        skeleton = Skeleton.from_dict(meta["skeleton"])
        records = []
        for c in meta["clips"]:
            k = c["key"]
            clip = MotionClip(skeleton, arrays[f"{k}/positions"], arrays[f"{k}/rotations"], fps=fps,
                              style=c["style"], source_id=c["id"])
            records.append(ClipRecord(clip, arrays[f"{k}/speech"], arrays[f"{k}/pose"], arrays[f"{k}/style"],
                                      arrays[f"{k}/facing"], c["split"], c["mirrored"]))
        return cls(records, NormalizationStats.from_dict(meta["stats"]), fps, meta.get("info", {}))


def prepare_dataset(manifest, workers: int = 1) -> Dataset:
    """Parse every manifest entry (optionally in parallel) and fit statistics."""
    entries, bvh_opts = load_manifest(manifest)
    jobs = [(e, bvh_opts) for e in entries]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_load_entry, jobs))
    else:
        chunks = [_load_entry(j) for j in jobs]
    records = [r for chunk in chunks for r in chunk]
    try:
        check_same_skeleton([r.clip for r in records])
    except SkeletonError as exc:
        raise DataError(str(exc)) from exc
    return Dataset.from_records(records, {"manifest": os.fspath(manifest), "bvh": bvh_opts})
