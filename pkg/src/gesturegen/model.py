"""Speech encoder, style encoder and autoregressive gesture generator."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import geom, nn
from . import tensor as T
from .motion.clip import Skeleton
from .motion.features import NormalizationStats, PoseLayout
from .tensor import Tensor


@dataclass
class ModelConfig:
    num_joints: int = 75
    speech_features: int = 81
    speech_channels: int = 64
    speech_kernels: tuple = (3, 31)
    speech_dim: int = 64
    style_dim: int = 64
    style_channels: int = 512
    style_kernel: int = 3
    attention_heads: int = 4
    attention_dropout: float = 0.1
    fft_channels: int = 64
    fft_kernel: int = 3
    gru_layers: int = 2
    gru_hidden: int = 1024
    init_layers: int = 3
    init_hidden: int = 1024
    dropout: float = 0.2
    fps: float = 60.0
    dtype: str = "float32"

    def __post_init__(self):
        self.speech_kernels = tuple(self.speech_kernels)
        for name in ("num_joints", "speech_dim", "style_dim", "style_channels", "gru_hidden", "init_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.style_channels % self.attention_heads:
            raise ValueError("style_channels must be divisible by attention_heads")

    @property
    def layout(self) -> PoseLayout:
        return PoseLayout(self.num_joints)

    @property
    def pose_dim(self) -> int:
        return 15 * self.num_joints + 13

    @property
    def feature_dim(self) -> int:
        return 15 * self.num_joints + 6

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def reduced(cls, num_joints: int, **overrides) -> "ModelConfig":
        """Desk-scale configuration used for overfit probes."""
        base = dict(num_joints=num_joints, speech_dim=32, style_dim=32, style_channels=64,
                    gru_hidden=128, init_hidden=128, fft_channels=32)
        base.update(overrides)
        return cls(**base)


class SpeechEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        k1, k2 = cfg.speech_kernels
        self.conv1 = nn.Conv1d(cfg.speech_features, cfg.speech_channels, k1, rng, dtype)
        self.conv2 = nn.Conv1d(cfg.speech_channels, cfg.speech_channels, k2, rng, dtype)
        self.drop1 = nn.Dropout(cfg.dropout)
        self.drop2 = nn.Dropout(cfg.dropout)
        self.out = nn.Linear(cfg.speech_channels, cfg.speech_dim, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = T.elu(self.drop1(self.conv1(x)))
        h = T.elu(self.drop2(self.conv2(h)))
        return self.out(h)


class StyleEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        C = cfg.style_channels
        self.conv1 = nn.Conv1d(cfg.feature_dim, C, cfg.style_kernel, rng, dtype)
        self.norm1 = nn.LayerNorm(C, dtype)
        self.drop1 = nn.Dropout(cfg.dropout)
        self.conv2 = nn.Conv1d(C, C, cfg.style_kernel, rng, dtype)
        self.norm2 = nn.LayerNorm(C, dtype)
        self.drop2 = nn.Dropout(cfg.dropout)
        self.attn = nn.MultiHeadSelfAttention(C, cfg.attention_heads, rng, dtype)
        self.attn_drop = nn.Dropout(cfg.attention_dropout)
        self.attn_norm = nn.LayerNorm(C, dtype)
        self.ff1 = nn.Conv1d(C, cfg.fft_channels, cfg.fft_kernel, rng, dtype)
        self.ff2 = nn.Conv1d(cfg.fft_channels, C, cfg.fft_kernel, rng, dtype)
        self.ff_drop = nn.Dropout(cfg.dropout)
        self.ff_norm = nn.LayerNorm(C, dtype)
        self.out = nn.Linear(C, 2 * cfg.style_dim, rng, dtype)
        self.style_dim = cfg.style_dim
        self._dtype = dtype

    def forward(self, A: Tensor, positional_encoding: bool = True) -> tuple[Tensor, Tensor, Tensor]:
        """``A`` is ``[M, D_a]``; returns (mu, sigma, logvar), each ``[D_e]``."""
        if A.shape[0] < 1:
            raise ValueError("style encoder needs at least one frame")
        h = self.drop1(self.norm1(T.relu(self.conv1(A))))
        h = self.drop2(self.norm2(T.relu(self.conv2(h))))
        if positional_encoding:
            h = h + nn.sinusoidal_encoding(h.shape[0], h.shape[1], self._dtype)
        h = self.attn_norm(h + self.attn_drop(self.attn(h)))
        h = self.ff_norm(h + self.ff_drop(self.ff2(T.relu(self.ff1(h)))))
        stats = self.out(h).mean(axis=0)
        mu = stats[:self.style_dim]
        logvar = stats[self.style_dim:]
        return mu, T.exp(logvar * 0.5), logvar


class HiddenInitializer(nn.Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        d_in = cfg.feature_dim + 2 + cfg.style_dim
        dims = [d_in] + [cfg.init_hidden] * cfg.init_layers
        self.layers = [nn.Linear(a, b, rng, dtype) for a, b in zip(dims[:-1], dims[1:])]
        self.heads = [nn.Linear(cfg.init_hidden, cfg.gru_hidden, rng, dtype) for _ in range(cfg.gru_layers)]

    def forward(self, pose_n: Tensor, facing_n: Tensor, e: Tensor) -> list[Tensor]:
        h = T.concat([pose_n, facing_n, e], axis=-1)
        for layer in self.layers:
            h = T.elu(layer(h))
        return [head(h) for head in self.heads]


class RecurrentDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        d_in = cfg.feature_dim + 2 + cfg.speech_dim + cfg.style_dim
        dims = [d_in] + [cfg.gru_hidden] * cfg.gru_layers
        self.cells = [nn.GRUCell(a, cfg.gru_hidden, rng, dtype) for a in dims[:-1]]
        self.out = nn.Linear(cfg.gru_hidden, cfg.feature_dim, rng, dtype)

    def forward(self, x: Tensor, hidden: list[Tensor]) -> tuple[Tensor, list[Tensor]]:
        new = []
        for cell, h in zip(self.cells, hidden):
            x = cell(x, h)
            new.append(x)
        return self.out(x), new


@dataclass
class StyleEmbedding:
    mu: np.ndarray
    sigma: np.ndarray
    sample: np.ndarray


@dataclass
class GeneratorState:
    """Recurrent state between decode steps (batched along axis 0)."""

    hidden: list
    prev_encoding: Tensor  # normalized pose encoding of the previous frame
    root_position: Tensor  # [B, 3] root of the frame about to be produced
    root_yaw: Tensor       # [B]
    facing: np.ndarray     # [B, 2] world (x, z) target facing


class GestureModel(nn.Module):
    def __init__(self, cfg: ModelConfig, stats: NormalizationStats, skeleton: Optional[Skeleton] = None,
                 seed: int = 0):
        self.config = cfg
        self.stats = stats
        self.skeleton = skeleton
        self.layout = cfg.layout
        dtype = np.dtype(cfg.dtype)
        self.dtype = dtype
        init_rng = np.random.default_rng(seed)
        self.speech_encoder = SpeechEncoder(cfg, init_rng, dtype)
        self.style_encoder = StyleEncoder(cfg, init_rng, dtype)
        self.initializer = HiddenInitializer(cfg, init_rng, dtype)
        self.decoder = RecurrentDecoder(cfg, init_rng, dtype)
        self.set_rng(np.random.default_rng(seed + 1))
        cols = self.layout.encoding_columns()
        self._enc_mean = np.asarray(stats.mean["pose"][cols], dtype=dtype)
        self._enc_std = np.asarray(stats.std["pose"][cols], dtype=dtype)

    def set_rng(self, rng: np.random.Generator) -> None:
        self.rng = rng
        for m in self.modules():
            if isinstance(m, nn.Dropout):
                m.rng = rng

    # -- normalization helpers -------------------------------------------------
    def _norm(self, x: np.ndarray, key: str) -> np.ndarray:
        return np.asarray(self.stats.normalize(np.asarray(x, dtype=np.float64), key), dtype=self.dtype)

    def normalize_encoding(self, y: np.ndarray) -> np.ndarray:
        enc = self.layout.encoding_from_pose(np.asarray(y, dtype=np.float64))
        return np.asarray((enc - self._enc_mean) / self._enc_std, dtype=self.dtype)

    def _facing_root(self, facing: np.ndarray, yaw: Tensor) -> Tensor:
        """World (x, z) facing rotated into the root frame, then normalized."""
        c, s = T.cos(yaw), T.sin(yaw)
        fx = np.asarray(facing[:, 0], dtype=self.dtype)
        fz = np.asarray(facing[:, 1], dtype=self.dtype)
        local = T.stack([c * fx - s * fz, s * fx + c * fz], axis=-1)
        mean = np.asarray(self.stats.mean["facing"], dtype=self.dtype)
        std = np.asarray(self.stats.std["facing"], dtype=self.dtype)
        return (local - mean) * (1.0 / std)

    # -- encoders ------------------------------------------------------------------
    def encode_speech(self, speech: np.ndarray) -> Tensor:
        """Raw ``[..., T, 81]`` speech features to ``[..., T, D_S]`` embeddings."""
        speech = np.asarray(speech)
        if speech.shape[-1] != self.config.speech_features:
            raise ValueError(f"speech features must have width {self.config.speech_features}, got {speech.shape[-1]}")
        return self.speech_encoder(T.Tensor(self._norm(speech, "speech")))

    def encode_style(self, features: np.ndarray, positional_encoding: bool = True) -> tuple[Tensor, Tensor, Tensor]:
        """Raw ``[M, D_a]`` style features to (mu, sigma, logvar)."""
        features = np.asarray(features)
        if features.ndim != 2 or len(features) == 0:
            raise ValueError("style features must be a non-empty [M, D_a] array")
        if features.shape[1] != self.config.feature_dim:
            raise ValueError(f"style features must have width {self.config.feature_dim}, got {features.shape[1]}")
        return self.style_encoder(T.Tensor(self._norm(features, "style")), positional_encoding)

    @staticmethod
    def sample_embedding(mu, sigma, stochastic: bool, rng: Optional[np.random.Generator] = None):
        """Reparameterized draw ``mu + sigma * eps``; ``mu`` itself when not stochastic."""
        if not stochastic:
            return mu
        if rng is None:
            raise ValueError("stochastic sampling needs an rng")
        eps = rng.standard_normal(np.shape(mu.data if isinstance(mu, Tensor) else mu))
        if isinstance(mu, Tensor):
            return mu + sigma * eps.astype(mu.dtype)
        return np.asarray(mu) + np.asarray(sigma) * eps

    # -- generator -------------------------------------------------------------------
    def init_state(self, prev_pose: np.ndarray, facing: np.ndarray, e: Tensor) -> GeneratorState:
        """State for generating the frame after ``prev_pose`` (``[B, D_y]``, raw)."""
        prev_pose = np.atleast_2d(np.asarray(prev_pose, dtype=np.float64))
        facing = np.atleast_2d(np.asarray(facing, dtype=np.float64))
        L = self.layout
        prev_root = geom.RootTransform(prev_pose[:, L.root_p], geom.quat_normalize(prev_pose[:, L.root_r]))
        root = geom.integrate_root(prev_root, prev_pose[:, L.root_dp], prev_pose[:, L.root_dr], self.config.dt)
        prev_yaw = T.Tensor(np.asarray(prev_root.yaw, dtype=self.dtype))
        yaw = T.Tensor(np.asarray(geom.yaw_from_quat(root.orientation), dtype=self.dtype))
        pose_n = T.Tensor(self.normalize_encoding(prev_pose))
        hidden = self.initializer(pose_n, self._facing_root(facing, prev_yaw), e)
        return GeneratorState(hidden, pose_n, T.Tensor(root.position.astype(self.dtype)), yaw, facing)

    def decode_step(self, state: GeneratorState, s: Tensor, e: Tensor) -> tuple[Tensor, GeneratorState]:
        """Produce one raw pose state ``[B, D_y]`` and the advanced state."""
        L = self.layout
        J = L.num_joints
        x = T.concat([state.prev_encoding, self._facing_root(state.facing, state.root_yaw), s, e], axis=-1)
        out_n, hidden = self.decoder(x, state.hidden)
        out = out_n * self._enc_std + self._enc_mean
        root_dp = out[:, L.feat_root_dp]
        root_dr = out[:, L.feat_root_dr]
        yaw = state.root_yaw
        c, sn = T.cos(yaw), T.sin(yaw)
        half = yaw * 0.5
        qw, qy = T.cos(half), T.sin(half)
        sign = np.where(qw.data < 0, -1.0, 1.0).astype(self.dtype)
        zero = np.zeros(yaw.shape, dtype=self.dtype)
        quat = T.stack([qw * sign, T.Tensor(zero), qy * sign, T.Tensor(zero)], axis=-1)
        y = T.concat([out[:, :15 * J], state.root_position, quat, root_dp, root_dr], axis=-1)
        # rotate root-space velocity by the yaw and advance the root
        dt = self.config.dt
        vx, vy, vz = root_dp[:, 0], root_dp[:, 1], root_dp[:, 2]
        step = T.stack([c * vx + sn * vz, vy, c * vz - sn * vx], axis=-1)
        new_pos = state.root_position + step * dt
        new_yaw = yaw + root_dr[:, 1] * dt
        # feeding the normalized prediction back is identical to re-normalizing the denormalized one
        return y, GeneratorState(hidden, out_n, new_pos, new_yaw, state.facing)

    def rollout(self, S: Tensor, e: Tensor, prev_pose: np.ndarray, facing: np.ndarray, frames: int) -> Tensor:
        """Autoregressive decode of ``frames`` steps; returns ``[B, frames, D_y]``."""
        if S.shape[-2] < frames:
            raise ValueError(f"speech embedding has {S.shape[-2]} frames, {frames} requested")
        state = self.init_state(prev_pose, facing, e)
        ys = []
        for i in range(frames):
            y, state = self.decode_step(state, S[:, i], e)
            ys.append(y)
        return T.stack(ys, axis=1)

    def generate(self, speech: np.ndarray, embedding: np.ndarray, prev_pose: np.ndarray,
                 facing=(0.0, 1.0), frames: Optional[int] = None) -> np.ndarray:
        """Inference-mode generation of one sequence; returns raw ``[T, D_y]``."""
        was_training = self.training
        self.eval()
        try:
            with T.no_grad():
                speech = np.asarray(speech)
                frames = len(speech) if frames is None else frames
                if frames < 1:
                    raise ValueError("need at least one frame")
                if len(speech) < frames:
                    raise ValueError(f"speech has {len(speech)} frames, {frames} requested")
                S = self.encode_speech(speech[None])
                e = T.Tensor(np.asarray(embedding, dtype=self.dtype)[None])
                Y = self.rollout(S, e, np.asarray(prev_pose)[None], np.asarray(facing, dtype=float)[None], frames)
        finally:
            self.train(was_training)
        return Y.data[0].astype(np.float64)

    def embed(self, features: np.ndarray, stochastic: bool = False,
              rng: Optional[np.random.Generator] = None) -> StyleEmbedding:
        """Inference-mode style embedding of raw style features."""
        was_training = self.training
        self.eval()
        try:
            with T.no_grad():
                mu, sigma, _ = self.encode_style(features)
        finally:
            self.train(was_training)
        mu, sigma = mu.data.astype(np.float64), sigma.data.astype(np.float64)
        return StyleEmbedding(mu, sigma, self.sample_embedding(mu, sigma, stochastic, rng))

    def parameter_breakdown(self) -> dict[str, int]:
        return {
            "speech_encoder": self.speech_encoder.num_parameters(),
            "style_encoder": self.style_encoder.num_parameters(),
            "hidden_initializer": self.initializer.num_parameters(),
            "decoder_gru": sum(c.num_parameters() for c in self.decoder.cells),
            "decoder_output": self.decoder.out.num_parameters(),
        }

    def named_parameters(self, prefix: str = ""):
        for part in ("speech_encoder", "style_encoder", "initializer", "decoder"):
            yield from getattr(self, part).named_parameters(f"{prefix}{part}.")

    def modules(self):
        yield self
        for part in (self.speech_encoder, self.style_encoder, self.initializer, self.decoder):
            yield from part.modules()
