"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every operation records its parents and a backward closure on the output
tensor; ``Tensor.backward`` walks the recorded graph in reverse topological
order and accumulates gradients additively. Data lives in numpy arrays, so
precision follows the array dtype (float32 for training, float64 for
gradient checks).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_GRAD_ENABLED = True
DEFAULT_DTYPE = np.float32


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autograd ---------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf.

        Only scalar outputs are accepted unless an explicit seed gradient is
        given.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def parameter(data, name: str = "", dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    if dtype is None and isinstance(x, np.ndarray) and np.issubdtype(x.dtype, np.floating):
        dtype = x.dtype
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# -- elementwise arithmetic ----------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    return _make(ad ** exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError(f"matmul needs >=2-d operands, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {ad.shape} @ {bd.shape}")

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), backward)


# -- unary functions ------------------------------------------------------------
def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def sin(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def cos(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    ad = a.data
    neg_part = alpha * np.expm1(np.minimum(ad, 0.0))
    out = np.where(ad > 0, ad, neg_part)
    return _make(out, (a,), lambda g: (g * np.where(ad > 0, 1.0, neg_part + alpha).astype(ad.dtype),))


def absolute(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward)


def dropout(a: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; the identity when ``training`` is false or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


# -- reductions and shape ops ---------------------------------------------------
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.asarray(a.data[index]), (a,), backward)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def cross(a, b) -> Tensor:
    """Cross product over the last axis (length 3)."""
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(np.cross(bd, g), ad.shape), _unbroadcast(np.cross(g, ad), bd.shape)

    return _make(np.cross(ad, bd), (a, b), backward)


# -- fused neural-network primitives ---------------------------------------------
def linear(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``."""
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"linear dimension mismatch: x{x.shape} vs W{W.shape}")
    xd, Wd = x.data, W.data
    out = xd @ Wd
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g):
        gx = g @ Wd.T
        g2 = g.reshape(-1, g.shape[-1])
        gW = xd.reshape(-1, xd.shape[-1]).T @ g2
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    return _make(out, parents, backward)


def _im2col(xd: np.ndarray, k: int) -> np.ndarray:
    pad = (k - 1) // 2
    T = xd.shape[-2]
    widths = [(0, 0)] * (xd.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(xd, widths)
    cols = np.stack([xp[..., i:i + T, :] for i in range(k)], axis=-2)
    return cols.reshape(xd.shape[:-1] + (k * xd.shape[-1],))


def conv1d(x: Tensor, kernels: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Length-preserving 1D cross-correlation along the time axis.

    ``x`` is ``[..., T, Cin]``, ``kernels`` is ``[k, Cin, Cout]`` with odd
    ``k``; inputs are zero padded by ``(k-1)/2`` on both sides.
    """
    k, cin, cout = kernels.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d kernel size must be odd, got {k}")
    if x.shape[-1] != cin:
        raise ValueError(f"conv1d channel mismatch: x{x.shape} vs kernels{kernels.shape}")
    xd = x.data
    T = xd.shape[-2]
    pad = (k - 1) // 2
    cols = _im2col(xd, k)
    Kf = kernels.data.reshape(k * cin, cout)
    out = cols @ Kf
    if bias is not None:
        out = out + bias.data
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def backward(g):
        g2 = g.reshape(-1, cout)
        gK = (cols.reshape(-1, k * cin).T @ g2).reshape(k, cin, cout)
        gcols = (g @ Kf.T).reshape(xd.shape[:-1] + (k, cin))
        gxp = np.zeros(xd.shape[:-2] + (T + 2 * pad, cin), dtype=xd.dtype)
        for i in range(k):
            gxp[..., i:i + T, :] += gcols[..., i, :]
        gx = gxp[..., pad:pad + T, :]
        if bias is None:
            return gx, gK
        return gx, gK, g2.sum(axis=0)

    return _make(out, parents, backward)


def gru_cell(x: Tensor, h: Tensor, W_ih: Tensor, W_hh: Tensor, b_ih: Tensor, b_hh: Tensor) -> Tensor:
    """One GRU update with gate order (reset, update, candidate).

    r = sig(x W_ir + b_ir + h W_hr + b_hr)
    z = sig(x W_iz + b_iz + h W_hz + b_hz)
    n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
    h' = (1 - z) * n + z * h
    """
    H = h.shape[-1]
    if W_ih.shape != (x.shape[-1], 3 * H) or W_hh.shape != (H, 3 * H):
        raise ValueError(
            f"gru_cell shape mismatch: x{x.shape} h{h.shape} W_ih{W_ih.shape} W_hh{W_hh.shape}")
    xd, hd = x.data, h.data
    gi = xd @ W_ih.data + b_ih.data
    gh = hd @ W_hh.data + b_hh.data
    r = _sigmoid(gi[..., :H] + gh[..., :H])
    z = _sigmoid(gi[..., H:2 * H] + gh[..., H:2 * H])
    ghn = gh[..., 2 * H:]
    n = np.tanh(gi[..., 2 * H:] + r * ghn)
    out = (1.0 - z) * n + z * hd

    def backward(g):
        dz = g * (hd - n)
        dn = g * (1.0 - z)
        dan = dn * (1.0 - n * n)
        dar = dan * ghn * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dgi = np.concatenate([dar, daz, dan], axis=-1)
        dgh = np.concatenate([dar, daz, dan * r], axis=-1)
        dx = dgi @ W_ih.data.T
        dh = g * z + dgh @ W_hh.data.T
        dgi2 = dgi.reshape(-1, 3 * H)
        dgh2 = dgh.reshape(-1, 3 * H)
        dWih = xd.reshape(-1, xd.shape[-1]).T @ dgi2
        dWhh = hd.reshape(-1, H).T @ dgh2
        return dx, dh, dWih, dWhh, dgi2.sum(axis=0), dgh2.sum(axis=0)

    return _make(out, (x, h, W_ih, W_hh, b_ih, b_hh), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, g.shape[-1])
        return dx, (g2 * xhat.reshape(g2.shape)).sum(axis=0), g2.sum(axis=0)

    return _make(out, (x, gain, bias), backward)
