"""Layer containers built on :mod:`gesturegen.tensor`."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base container. Parameters are discovered from attributes in definition order."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> Tensor:
    bound = math.sqrt(1.0 / fan_in)
    return T.parameter(rng.uniform(-bound, bound, size=shape).astype(dtype))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        self.W = uniform_init(rng, (d_in, d_out), d_in, dtype)
        self.b = uniform_init(rng, (d_out,), d_in, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.W, self.b)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, dtype=np.float32):
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
        self.K = uniform_init(rng, (k, c_in, c_out), k * c_in, dtype)
        self.b = uniform_init(rng, (c_out,), k * c_in, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.K, self.b)


class GRUCell(Module):
    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.hidden = hidden
        self.W_ih = uniform_init(rng, (d_in, 3 * hidden), d_in, dtype)
        self.W_hh = uniform_init(rng, (hidden, 3 * hidden), hidden, dtype)
        self.b_ih = uniform_init(rng, (3 * hidden,), hidden, dtype)
        self.b_hh = uniform_init(rng, (3 * hidden,), hidden, dtype)

    def forward(self, x: Tensor, h: Tensor) -> Tensor:
        return T.gru_cell(x, h, self.W_ih, self.W_hh, self.b_ih, self.b_hh)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gain = T.parameter(np.ones(dim, dtype=dtype))
        self.bias = T.parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    """Inverted dropout drawing masks from a shared generator (set via ``set_rng``)."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng: Optional[np.random.Generator] = None

    def forward(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.rate, self.training, self.rng)


class MultiHeadSelfAttention(Module):
    """Bidirectional scaled dot-product self-attention over a ``[M, D]`` sequence."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads:
            raise ValueError(f"model dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng, dtype)
        self.k = Linear(dim, dim, rng, dtype)
        self.v = Linear(dim, dim, rng, dtype)
        self.o = Linear(dim, dim, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return multi_head_self_attention(x, self.heads, self.q, self.k, self.v, self.o)


def multi_head_self_attention(x: Tensor, heads: int, q: Linear, k: Linear, v: Linear, o: Linear) -> Tensor:
    M, D = x.shape
    if D % heads:
        raise ValueError(f"model dim {D} not divisible by {heads} heads")
    dk = D // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(M, heads, dk).transpose(1, 0, 2)

    Q, K, V = split(q(x)), split(k(x)), split(v(x))
    scores = T.matmul(Q, K.transpose(0, 2, 1)) * (1.0 / math.sqrt(dk))
    attn = T.softmax(scores, axis=-1)
    ctx = T.matmul(attn, V).transpose(1, 0, 2).reshape(M, D)
    return o(ctx)


def sinusoidal_encoding(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)
