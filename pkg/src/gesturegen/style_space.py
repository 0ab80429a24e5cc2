"""Style-embedding store, blending and PCA editing.

Embeddings are stored as posterior means so analyses are reproducible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class StyleSpaceError(ValueError):
    pass


def blend(embeddings: Sequence[np.ndarray], weights: Sequence[float], tol: float = 1e-6) -> np.ndarray:
    """Convex-style linear mix ``sum_i w_i e_i``; weights must sum to one."""
    if len(embeddings) != len(weights) or not embeddings:
        raise StyleSpaceError(f"need matching non-empty lists, got {len(embeddings)} embeddings "
                              f"and {len(weights)} weights")
    w = np.asarray(weights, dtype=np.float64)
    if abs(w.sum() - 1.0) > tol:
        raise StyleSpaceError(f"blend weights sum to {w.sum():.6g}, expected 1")
    E = np.stack([np.asarray(e, dtype=np.float64) for e in embeddings])
    return w @ E


def parse_blend_spec(spec: str) -> list[tuple[str, float]]:
    """``"id:w,id:w"`` to ``[(id, w), ...]`` (ids may contain ':' except the last one)."""
    out = []
    for part in spec.split(","):
        name, sep, weight = part.strip().rpartition(":")
        if not sep or not name:
            raise StyleSpaceError(f"bad blend term {part!r}; expected id:weight")
        try:
            out.append((name, float(weight)))
        except ValueError as exc:
            raise StyleSpaceError(f"bad blend weight in {part!r}") from exc
    return out


@dataclass
class EmbeddingSet:
    ids: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    vectors: list = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise StyleSpaceError("duplicate clip ids in embedding set")

    def add(self, clip_id: str, label: str, mu: np.ndarray) -> None:
        if clip_id in self.ids:
            raise StyleSpaceError(f"duplicate clip id {clip_id!r}")
        if self.vectors and len(mu) != len(self.vectors[0]):
            raise StyleSpaceError(f"embedding {clip_id!r} has width {len(mu)}, expected {len(self.vectors[0])}")
        self.ids.append(clip_id)
        self.labels.append(label)
        self.vectors.append(np.asarray(mu, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def matrix(self) -> np.ndarray:
        return np.stack(self.vectors) if self.vectors else np.zeros((0, 0))

    def get(self, clip_id: str) -> np.ndarray:
        try:
            return self.vectors[self.ids.index(clip_id)]
        except ValueError:
            raise StyleSpaceError(f"unknown embedding id {clip_id!r}") from None

    def save_csv(self, path) -> None:
        width = len(self.vectors[0]) if self.vectors else 0
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["clip_id", "label"] + [f"e{i}" for i in range(width)])
            for cid, lab, v in zip(self.ids, self.labels, self.vectors):
                w.writerow([cid, lab] + [repr(float(x)) for x in v])

    @classmethod
    def load_csv(cls, path) -> "EmbeddingSet":
        out = cls()
        with open(path, newline="") as f:
            rows = csv.reader(f)
            header = next(rows, None)
            if not header or header[:2] != ["clip_id", "label"]:
                raise StyleSpaceError(f"{path}: not an embedding CSV")
            for row in rows:
                out.add(row[0], row[1], np.array([float(x) for x in row[2:]]))
        return out


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray          # [k, D], orthonormal rows
    explained_variance: np.ndarray  # [k], nonincreasing
    style_mean: dict = field(default_factory=dict)  # label -> [k]
    style_std: dict = field(default_factory=dict)   # label -> [k]

    @property
    def k(self) -> int:
        return len(self.components)

    def project(self, e: np.ndarray) -> np.ndarray:
        return (np.asarray(e, dtype=np.float64) - self.mean) @ self.components.T

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        return self.mean + np.asarray(z, dtype=np.float64) @ self.components

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "style_mean": {k: v.tolist() for k, v in self.style_mean.items()},
            "style_std": {k: v.tolist() for k, v in self.style_std.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        arr = np.asarray
        return cls(arr(d["mean"], dtype=float), arr(d["components"], dtype=float),
                   arr(d["explained_variance"], dtype=float),
                   {k: arr(v, dtype=float) for k, v in d.get("style_mean", {}).items()},
                   {k: arr(v, dtype=float) for k, v in d.get("style_std", {}).items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "PcaModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def pca_fit(data: EmbeddingSet, k: int, rank_tol: float = 1e-10) -> PcaModel:
    """PCA of the embedding rows via eigendecomposition of the sample covariance.

    Each component is signed so its largest-magnitude entry is positive.
    """
    X = data.matrix
    n = len(X)
    if k < 1 or n < k:
        raise StyleSpaceError(f"need 1 <= k <= rows, got k={k} with {n} rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(n - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    rank = int(np.sum(vals > rank_tol * max(vals[0], np.finfo(float).tiny)))
    if k > rank:
        raise StyleSpaceError(f"k={k} exceeds the rank {rank} of the embedding covariance")
    comps = vecs[:, :k].T.copy()
    idx = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(k), idx])[:, None]
    model = PcaModel(mean, comps, vals[:k].copy())
    Z = model.project(X)
    labels = np.asarray(data.labels)
    for lab in sorted(set(data.labels)):
        z = Z[labels == lab]
        model.style_mean[lab] = z.mean(axis=0)
        model.style_std[lab] = z.std(axis=0)
    return model


def pca_edit(e: np.ndarray, model: PcaModel, component: int, delta: float, style: str) -> np.ndarray:
    """Move ``e`` along principal component ``component`` by ``delta`` std of ``style``.

    Equivalent to project, shift one coordinate, reconstruct, while keeping the
    part of ``e`` outside the fitted subspace (which vanishes for full rank).
    """
    if not 0 <= component < model.k:
        raise StyleSpaceError(f"component {component} out of range for k={model.k}")
    if style not in model.style_std:
        raise StyleSpaceError(f"unknown style label {style!r}; known: {sorted(model.style_std)}")
    step = delta * model.style_std[style][component]
    return np.asarray(e, dtype=np.float64) + step * model.components[component]


def write_scatter_csv(path, data: EmbeddingSet, model: PcaModel) -> None:
    """Component 1 vs 2 coordinates per embedding for external plotting."""
    Z = model.project(data.matrix)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["clip_id", "label", "pc1", "pc2"])
        for cid, lab, z in zip(data.ids, data.labels, Z):
            w.writerow([cid, lab, repr(float(z[0])), repr(float(z[1])) if len(z) > 1 else "0.0"])


def window_starts(num_frames: int, window: int) -> list[int]:
    """Starts of non-overlapping windows; a shorter clip yields one whole-clip window."""
    if num_frames <= window:
        return [0]
    return list(range(0, num_frames - window + 1, window))


def embed_records(model, records: Iterable, window: int = 512) -> EmbeddingSet:
    """Posterior means of non-overlapping ``window``-frame samples of each record."""
    out = EmbeddingSet()
    for r in records:
        for s in window_starts(r.num_frames, window):
            mu = model.embed(r.style_features[s:s + window]).mu
            out.add(f"{r.clip_id}@{s}", r.style, mu)
    return out
