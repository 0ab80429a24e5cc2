"""Training loop: Rectified Adam, schedules, window sampling, checkpoints.

The rollout is fully autoregressive (no teacher forcing): only the frame
preceding the target window is taken from data, every later input is the
model's own prediction.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .container import dumps_checkpoint, loads_checkpoint
from .data import ClipRecord, Dataset
from .losses import TERMS, LossWeights, kl_from_logvar, reconstruction_loss
from .model import GestureModel, ModelConfig
from .motion.clip import MotionClip, Skeleton, resample_sequence, sample_frames
from .motion.features import NormalizationStats, extract_pose_states, extract_style_features

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "gesturegen-checkpoint"


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    lr: float = 1e-4
    lr_decay: float = 0.995
    decay_every: int = 1000
    batch_size: int = 32
    max_iters: int = 120_000
    window: int = 256
    style_min: int = 256
    style_max: int = 512
    speed_aug: float = 0.1
    weights: LossWeights = field(default_factory=LossWeights)
    kl_center: float = 20_000.0
    kl_width: float = 4_000.0
    grad_clip: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            unknown = set(self.weights) - set(TERMS)
            if unknown:
                raise ConfigError(f"weights: unknown term(s) {sorted(unknown)}")
            self.weights = LossWeights(**self.weights)
        self.validate()

    def validate(self) -> None:
        checks = [
            ("lr", self.lr >= 0),
            ("lr_decay", 0 < self.lr_decay <= 1),
            ("decay_every", self.decay_every >= 1),
            ("batch_size", self.batch_size >= 1),
            ("max_iters", self.max_iters >= 0),
            ("window", self.window >= 1),
            ("style_min", self.window <= self.style_min),
            ("style_max", self.style_min <= self.style_max),
            ("speed_aug", 0 <= self.speed_aug < 0.5),
            ("kl_width", self.kl_width > 0),
            ("grad_clip", self.grad_clip > 0),
            ("beta1", 0 <= self.beta1 < 1),
            ("beta2", 0 < self.beta2 < 1),
            ("eps", self.eps > 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"{name}: invalid value {getattr(self, name)!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name: f for f in fields(cls)}
        for k, v in d.items():
            if k not in known:
                raise ConfigError(f"{k}: unknown training config field")
            if k != "weights" and not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"{k}: expected a number, got {v!r}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


# -- schedules -------------------------------------------------------------------------
def lr_at(iteration: int, cfg: TrainingConfig) -> float:
    return cfg.lr * cfg.lr_decay ** (iteration // cfg.decay_every)


def kl_weight_at(iteration: int, cfg: TrainingConfig) -> float:
    """Sigmoid KL annealing weight in (0, 1)."""
    return 1.0 / (1.0 + math.exp(-(iteration - cfg.kl_center) / cfg.kl_width))


# -- optimizer ---------------------------------------------------------------------------
class RAdam:
    """Rectified Adam.

    While the approximated SMA length ``rho_t`` is at most 4 the variance
    estimate is unreliable and the update is plain momentum SGD with the
    bias-corrected first moment; afterwards the adaptive step is scaled by the
    rectification term ``r_t``.
    """

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}
        self.t = 0
        self.rho_inf = 2.0 / (1.0 - beta2) - 1.0

    def rho(self, t: int) -> float:
        b2t = self.beta2 ** t
        return self.rho_inf - 2.0 * t * b2t / (1.0 - b2t)

    def rectified(self, t: int) -> bool:
        return self.rho(t) > 4.0

    def step(self, lr: float) -> bool:
        """Apply one update from the parameters' ``.grad``; False if skipped."""
        grads = {}
        for n, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                log.warning("non-finite gradient in %s; update skipped", n)
                return False
            grads[n] = g
        self.t += 1
        t = self.t
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** t
        rho = self.rho(t)
        if rho > 4.0:
            bc2 = 1.0 - b2 ** t
            r = math.sqrt((rho - 4) * (rho - 2) * self.rho_inf / ((self.rho_inf - 4) * (self.rho_inf - 2) * rho))
        for n, p in self.params:
            g = grads[n]
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if rho > 4.0:
                update = (lr * r / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            else:
                update = (lr / bc1) * m
            p.data -= update.astype(p.data.dtype)
        return True

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for n, _ in self.params:
            out[f"opt_m/{n}"] = self.m[n]
            out[f"opt_v/{n}"] = self.v[n]
        return out

    def load_state(self, t: int, arrays: dict[str, np.ndarray]) -> None:
        self.t = t
        for n, p in self.params:
            self.m[n] = arrays[f"opt_m/{n}"].astype(p.data.dtype).copy()
            self.v[n] = arrays[f"opt_v/{n}"].astype(p.data.dtype).copy()


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64)))
                          for _, p in params if p.grad is not None))
    if total > max_norm and np.isfinite(total):
        scale = max_norm / (total + 1e-12)
        for _, p in params:
            if p.grad is not None:
                p.grad *= np.asarray(scale, dtype=p.grad.dtype)
    return total


# -- batch sampling ------------------------------------------------------------------------
@dataclass
class Batch:
    speech: np.ndarray      # [B, T, 81] raw
    target: np.ndarray      # [B, T, D_y] raw
    prev: np.ndarray        # [B, D_y] raw frame preceding the target window
    style: list             # B arrays [M_b, D_a] raw
    facing: np.ndarray      # [B, 2]
    clip_ids: list
    windows: list           # (augmented length, target start, style start, style length)
    speed: float


def augmented_length(num_frames: int, speed: float) -> int:
    return num_frames if speed == 1.0 else int(round(num_frames / speed))


def _augmented_segment(rec: ClipRecord, speed: float, start: int, stop: int):
    """Pose states, style features and speech of augmented frames ``[start, stop)``.

    One extra frame past ``stop`` is resampled (when available) so forward
    differences at the segment end match whole-clip extraction.
    """
    if speed == 1.0:
        return rec.pose[start:stop], rec.style_features[start:stop], rec.speech[start:stop]
    L = rec.num_frames
    N = augmented_length(L, speed)
    k = np.arange(start, min(stop + 1, N))
    times = k * ((L - 1) / (N - 1))
    pos, rot = sample_frames(rec.clip.positions, rec.clip.rotations, times)
    seg = MotionClip(rec.clip.skeleton, pos, rot, fps=rec.clip.fps, style=rec.style, source_id=rec.clip_id)
    n = stop - start
    return (extract_pose_states(seg)[:n], extract_style_features(seg)[:n],
            resample_sequence(rec.speech, times)[:n])


class BatchSampler:
    """Draws target/style windows from the training clips of a dataset."""

    def __init__(self, records: list[ClipRecord], cfg: TrainingConfig):
        self.records = [r for r in records if r.split == "train"]
        if not self.records:
            raise TrainingError("no training clips")
        self.cfg = cfg
        self._warned: set = set()

    def eligible(self, speed: float) -> list[ClipRecord]:
        need = max(self.cfg.style_max, self.cfg.window + 1)
        out = []
        for r in self.records:
            if augmented_length(r.num_frames, speed) >= need:
                out.append(r)
            elif r.clip_id not in self._warned:
                self._warned.add(r.clip_id)
                log.warning("clip %s too short (%d frames) for %d-frame windows; excluded",
                            r.clip_id, r.num_frames, need)
        if not out:
            raise TrainingError(f"no clip has the {need} frames a window needs")
        return out

    def draw_speed(self, rng: np.random.Generator) -> float:
        a = self.cfg.speed_aug
        return 1.0 if a == 0 else float(rng.uniform(1.0 - a, 1.0 + a))

    def sample(self, rng: np.random.Generator, batch_size: Optional[int] = None,
               speed: Optional[float] = None) -> Batch:
        cfg = self.cfg
        B = batch_size or cfg.batch_size
        speed = self.draw_speed(rng) if speed is None else speed
        pool = self.eligible(speed)
        Tw = cfg.window
        out = {k: [] for k in ("speech", "target", "prev", "style", "facing", "ids", "windows")}
        for _ in range(B):
            rec = pool[int(rng.integers(len(pool)))]
            N = augmented_length(rec.num_frames, speed)
            t0 = int(rng.integers(1, N - Tw + 1))
            M = int(rng.integers(cfg.style_min, cfg.style_max + 1))
            s0 = int(rng.integers(max(0, t0 + Tw - M), min(t0, N - M) + 1))
            a, b = min(s0, t0 - 1), s0 + M
            pose, style, speech = _augmented_segment(rec, speed, a, b)
            out["target"].append(pose[t0 - a:t0 - a + Tw])
            out["prev"].append(pose[t0 - a - 1])
            out["speech"].append(speech[t0 - a:t0 - a + Tw])
            out["style"].append(style[s0 - a:s0 - a + M])
            out["facing"].append(rec.facing)
            out["ids"].append(rec.clip_id)
            out["windows"].append((N, t0, s0, M))
        return Batch(np.stack(out["speech"]), np.stack(out["target"]), np.stack(out["prev"]), out["style"],
                     np.stack(out["facing"]), out["ids"], out["windows"], speed)


def sample_batch(dataset: Dataset, cfg: TrainingConfig, rng: np.random.Generator) -> Batch:
    return BatchSampler(dataset.records, cfg).sample(rng)


# -- training step ---------------------------------------------------------------------------
def compute_loss(model: GestureModel, batch: Batch, cfg: TrainingConfig, beta: float,
                 rng: np.random.Generator):
    """Negative ELBO of a batch; returns (total Tensor, dict of Tensors)."""
    S = model.encode_speech(batch.speech)
    mus, logvars, es = [], [], []
    for A in batch.style:
        mu, sigma, logvar = model.encode_style(A)
        mus.append(mu)
        logvars.append(logvar)
        es.append(model.sample_embedding(mu, sigma, True, rng))
    e = T.stack(es, axis=0)
    Y = model.rollout(S, e, batch.prev, batch.facing, batch.target.shape[1])
    skeleton_parents = model.skeleton.parents if model.skeleton is not None else None
    target = np.asarray(batch.target, dtype=model.dtype)
    recon, terms = reconstruction_loss(Y, target, skeleton_parents, model.layout, cfg.weights, model.config.dt)
    kl = kl_from_logvar(T.stack(mus, axis=0), T.stack(logvars, axis=0))
    total = recon + kl * beta
    return total, {"recon": recon, "kl": kl, **terms}


def train_step(model: GestureModel, batch: Batch, opt: RAdam, iteration: int, cfg: TrainingConfig,
               rng: np.random.Generator) -> dict:
    model.train()
    model.zero_grad()
    beta = kl_weight_at(iteration, cfg)
    lr = lr_at(iteration, cfg)
    total, parts = compute_loss(model, batch, cfg, beta, rng)
    value = float(total.data)
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss at iteration {iteration}; batch clips: {batch.clip_ids} "
                            f"windows: {batch.windows} speed: {batch.speed}")
    total.backward()
    params = list(model.named_parameters())
    norm = clip_grad_norm(params, cfg.grad_clip)
    applied = opt.step(lr)
    metrics = {"iter": iteration, "lr": lr, "beta": beta, "total": value, "grad_norm": norm,
               "skipped": int(not applied), "speed": batch.speed}
    metrics.update({k: float(v.data) for k, v in parts.items()})
    return metrics


METRIC_COLUMNS = ["iter", "lr", "beta", "total", "recon", "kl", *TERMS, "grad_norm", "skipped", "speed"]


class Trainer:
    """Owns the model, optimizer, sampler and the random streams."""

    def __init__(self, model: GestureModel, dataset: Dataset, cfg: TrainingConfig):
        if model.skeleton is None:
            model.skeleton = dataset.skeleton
        self.model = model
        self.dataset = dataset
        self.cfg = cfg
        self.sampler = BatchSampler(dataset.records, cfg)
        self.opt = RAdam(model.named_parameters(), cfg.beta1, cfg.beta2, cfg.eps)
        self.rng = np.random.default_rng(cfg.seed)
        self.iteration = 0

    @classmethod
    def create(cls, dataset: Dataset, model_cfg: ModelConfig, cfg: TrainingConfig) -> "Trainer":
        if model_cfg.num_joints != dataset.skeleton.num_joints:
            raise ConfigError(f"num_joints: model has {model_cfg.num_joints}, dataset {dataset.skeleton.num_joints}")
        model = GestureModel(model_cfg, dataset.stats, dataset.skeleton, seed=cfg.seed)
        return cls(model, dataset, cfg)

    def step(self) -> dict:
        batch = self.sampler.sample(self.rng)
        metrics = train_step(self.model, batch, self.opt, self.iteration, self.cfg, self.rng)
        self.iteration += 1
        return metrics

    def run(self, iterations: int, metrics_path=None, checkpoint_dir=None, callback=None) -> list[dict]:
        """Run ``iterations`` steps, appending metrics rows to a CSV when given."""
        history = []
        writer = None
        fh = None
        try:
            if metrics_path is not None:
                metrics_path = Path(metrics_path)
                new = not metrics_path.exists() or metrics_path.stat().st_size == 0
                fh = open(metrics_path, "a", newline="")
                writer = csv.writer(fh)
                if new:
                    writer.writerow(METRIC_COLUMNS)
            for _ in range(iterations):
                m = self.step()
                history.append(m)
                if writer is not None and (m["iter"] % self.cfg.log_every == 0):
                    writer.writerow([repr(m[c]) for c in METRIC_COLUMNS])
                if callback is not None:
                    callback(m)
                if checkpoint_dir is not None and self.cfg.checkpoint_every and \
                        self.iteration % self.cfg.checkpoint_every == 0:
                    self.save(Path(checkpoint_dir) / f"checkpoint_{self.iteration:06d}.zegc")
        finally:
            if fh is not None:
                fh.close()
        return history

    # -- checkpoints ----------------------------------------------------------------------
    def save(self, path) -> None:
        meta, arrays = checkpoint_payload(self.model)
        meta.update({
            "iteration": self.iteration,
            "training_config": self.cfg.to_dict(),
            "optimizer": {"step": self.opt.t},
            "rng": self.rng.bit_generator.state,
            "bvh": self.dataset.meta.get("bvh", {}),
        })
        arrays.update(self.opt.state_arrays())
        Path(path).write_bytes(dumps_checkpoint(meta, arrays))

    @classmethod
    def resume(cls, path, dataset: Dataset) -> "Trainer":
        model, meta, arrays = load_checkpoint(path)
        if "training_config" not in meta:
            raise TrainingError(f"{path}: checkpoint has no training state")
        cfg = TrainingConfig.from_dict(meta["training_config"])
        trainer = cls(model, dataset, cfg)
        trainer.iteration = meta["iteration"]
        trainer.opt.load_state(meta["optimizer"]["step"], arrays)
        trainer.rng.bit_generator.state = meta["rng"]
        return trainer


def checkpoint_payload(model: GestureModel) -> tuple[dict, dict]:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "model_config": json.loads(model.config.to_json()),
        "stats": model.stats.to_dict(),
        "skeleton": model.skeleton.to_dict() if model.skeleton is not None else None,
        "iteration": 0,
        "model_rng": model.rng.bit_generator.state,
    }
    arrays = {f"param/{n}": p.data for n, p in model.named_parameters()}
    return meta, arrays


def save_model(model: GestureModel, path, iteration: int = 0) -> None:
    meta, arrays = checkpoint_payload(model)
    meta["iteration"] = iteration
    Path(path).write_bytes(dumps_checkpoint(meta, arrays))


def load_checkpoint(path) -> tuple[GestureModel, dict, dict]:
    """Rebuild a model from a checkpoint; returns (model, meta, raw arrays)."""
    meta, arrays = loads_checkpoint(Path(path).read_bytes())
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise TrainingError(f"{path}: not a model checkpoint")
    cfg = ModelConfig.from_dict(meta["model_config"])
    skeleton = Skeleton.from_dict(meta["skeleton"]) if meta.get("skeleton") else None
    model = GestureModel(cfg, NormalizationStats.from_dict(meta["stats"]), skeleton)
    for n, p in model.named_parameters():
        key = f"param/{n}"
        if key not in arrays:
            raise TrainingError(f"{path}: missing parameter {n}")
        if arrays[key].shape != p.data.shape:
            raise TrainingError(f"{path}: parameter {n} has shape {arrays[key].shape}, expected {p.data.shape}")
        p.data = arrays[key].astype(p.data.dtype).copy()
    model.rng.bit_generator.state = meta["model_rng"]
    return model, meta, arrays
