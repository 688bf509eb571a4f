"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], float], t: Tensor, h: float = 1e-4, indices=None) -> np.ndarray:
    """Central differences of ``fn`` w.r.t. entries of ``t`` (all, or ``indices``)."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    if not np.shares_memory(flat, t.data):
        raise ValueError("gradient check needs a contiguous tensor")
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)


def check_gradients(
    build: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = 1e-4,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between backprop and central differences.

    ``build`` must construct a fresh scalar loss from the current tensor values.
    With ``max_entries`` only that many randomly chosen entries per tensor are
    probed.
    """
    for t in tensors:
        t.zero_grad()
    build().backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def value() -> float:
        return float(build().data)

    worst = 0.0
    for t, a in zip(tensors, analytic):
        idx = None
        if max_entries is not None and t.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(t.size, size=max_entries, replace=False)
        num = numerical_grad(value, t, h, idx)
        sel = slice(None) if idx is None else idx
        err = relative_error(a.reshape(-1)[sel], num.reshape(-1)[sel])
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst
