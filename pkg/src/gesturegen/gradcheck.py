"""Central finite-difference gradient checking for the autograd core."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        g[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """``|a - b| / max(|a| + |b|, floor)`` in the 2-norm."""
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), floor))


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6) -> list[float]:
    """Relative error between autograd and finite-difference gradients per input.

    ``fn(*inputs)`` must return a Tensor; it is reduced with a fixed random
    projection so every output element contributes.
    """
    out = fn(*inputs)
    rng = np.random.default_rng(1234)
    proj = rng.standard_normal(out.shape)

    def scalar() -> float:
        return float(np.sum(fn(*inputs).data * proj))

    for t in inputs:
        t.grad = None
    (fn(*inputs) * proj).sum().backward()
    errors = []
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_gradient(scalar, t.data, eps)
        errors.append(relative_error(analytic, numeric))
    return errors
