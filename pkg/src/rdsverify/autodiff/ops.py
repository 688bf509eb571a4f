"""Sequence operators with hand-written backward passes.

Sequence tensors are laid out ``(B, C, L)``; a 2-D ``(C, L)`` input is treated
as a batch of one and returned without the batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, _sigmoid, as_tensor


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return x.reshape(1, *x.shape), True
    if x.ndim != 3:
        raise ShapeError(f"expected (C, L) or (B, C, L), got {x.shape}")
    return x, False


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape (..., in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight {weight.shape}")
    out = x @ weight.T
    return out + bias if bias is not None else out


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, dilation: int = 1) -> Tensor:
    """Same-length 1-D convolution (cross-correlation) with symmetric zero padding."""
    x, squeeze = _batched(x)
    b, c_in, length = x.shape
    c_out, w_in, k = weight.shape
    if w_in != c_in:
        raise ShapeError(f"conv1d: input has {c_in} channels, weight expects {w_in}")
    if k % 2 == 0:
        raise ShapeError("conv1d: kernel size must be odd")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv1d: bias shape {bias.shape} != ({c_out},)")
    pad = dilation * (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    cols = np.stack([xp[:, :, j * dilation: j * dilation + length] for j in range(k)], axis=2)
    cols = cols.reshape(b, c_in * k, length)
    w2 = weight.data.reshape(c_out, c_in * k)
    out = np.matmul(w2, cols)
    if bias is not None:
        out = out + bias.data[None, :, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if weight.requires_grad:
            dw = np.einsum("bol,bkl->ok", g, cols, optimize=True)
            weight.accumulate(dw.reshape(weight.shape))
        if bias is not None:
            bias.accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g).reshape(b, c_in, k, length)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, :, j * dilation: j * dilation + length] += dcols[:, :, j]
            x.accumulate(dxp[:, :, pad: pad + length])

    y = Tensor.make(out, parents, backward, "conv1d")
    return y.reshape(c_out, length) if squeeze else y


def maxpool_indices(x: Tensor, k: int) -> tuple[Tensor, np.ndarray]:
    """Stride-1 windowed max over the last axis; returns values and source indices.

    Ties resolve to the smallest index in the window.
    """
    length = x.shape[-1]
    if k < 1 or length < k:
        raise ShapeError(f"maxpool: need 1 <= k <= L, got k={k}, L={length}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=-1)
    offset = windows.argmax(axis=-1)
    idx = offset + np.arange(length - k + 1)
    values = np.take_along_axis(x.data, idx, axis=-1)

    def backward(g):
        full = np.zeros_like(x.data)
        flat_full = full.reshape(-1, length)
        flat_idx = idx.reshape(-1, idx.shape[-1])
        rows = np.repeat(np.arange(flat_full.shape[0]), flat_idx.shape[1])
        np.add.at(flat_full, (rows, flat_idx.ravel()), g.reshape(-1))
        x.accumulate(full)

    return Tensor.make(values, (x,), backward, "maxpool"), idx


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> Tensor:
    """Single-layer unidirectional LSTM, zero initial state.

    Gate order in the stacked weights is input, forget, cell, output:
    ``w_ih`` (4H, C), ``w_hh`` (4H, H), ``bias`` (4H). Output is (B, H, L).
    """
    x, squeeze = _batched(x)
    b, c, length = x.shape
    four_h = w_ih.shape[0]
    hidden = four_h // 4
    if w_ih.shape != (four_h, c) or w_hh.shape != (four_h, hidden) or bias.shape != (four_h,) or four_h % 4:
        raise ShapeError(f"lstm: bad weight shapes {w_ih.shape}, {w_hh.shape}, {bias.shape} for input {x.shape}")
    xt = x.data.transpose(2, 0, 1)  # (L, B, C)
    pre_x = xt @ w_ih.data.T + bias.data  # (L, B, 4H)
    gates = np.empty((length, b, four_h))
    cells = np.empty((length, b, hidden))
    hs = np.empty((length, b, hidden))
    h = np.zeros((b, hidden))
    cell = np.zeros((b, hidden))
    whh_t = w_hh.data.T
    for t in range(length):
        z = pre_x[t] + h @ whh_t
        i = _sigmoid(z[:, :hidden])
        f = _sigmoid(z[:, hidden: 2 * hidden])
        gg = np.tanh(z[:, 2 * hidden: 3 * hidden])
        o = _sigmoid(z[:, 3 * hidden:])
        cell = f * cell + i * gg
        h = o * np.tanh(cell)
        gates[t] = np.concatenate([i, f, gg, o], axis=1)
        cells[t] = cell
        hs[t] = h

    def backward(grad):
        dh_seq = grad.transpose(2, 0, 1)  # (L, B, H)
        dz_all = np.empty((length, b, four_h))
        dh_next = np.zeros((b, hidden))
        dc_next = np.zeros((b, hidden))
        w = w_hh.data
        for t in range(length - 1, -1, -1):
            i, f, gg, o = np.split(gates[t], 4, axis=1)
            tc = np.tanh(cells[t])
            dh = dh_seq[t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1 - tc * tc)
            c_prev = cells[t - 1] if t > 0 else 0.0
            di = dc * gg
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - gg * gg), do * o * (1 - o)], axis=1)
            dz_all[t] = dz
            dh_next = dz @ w
            dc_next = dc * f
        if w_ih.requires_grad:
            w_ih.accumulate(np.einsum("lbg,lbc->gc", dz_all, xt, optimize=True))
        if w_hh.requires_grad:
            h_prev = np.concatenate([np.zeros((1, b, hidden)), hs[:-1]], axis=0)
            w_hh.accumulate(np.einsum("lbg,lbh->gh", dz_all, h_prev, optimize=True))
        bias.accumulate(dz_all.sum(axis=(0, 1)))
        if x.requires_grad:
            x.accumulate((dz_all @ w_ih.data).transpose(1, 2, 0))

    y = Tensor.make(hs.transpose(1, 2, 0).copy(), (x, w_ih, w_hh, bias), backward, "lstm")
    return y.reshape(hidden, length) if squeeze else y


@dataclass
class BatchNormState:
    """Running statistics for one batchnorm layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.9

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.9) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels), momentum)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    mask: Optional[np.ndarray] = None,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over batch and time.

    In training mode statistics come from positions where ``mask`` (B, L) is
    nonzero and the running estimates are updated as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    x, squeeze = _batched(x)
    b, c, length = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: expected ({c},) affine params")
    if training:
        m = np.ones((b, 1, length)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(b, 1, length)
        count = m.sum()
        mu = (x.data * m).sum(axis=(0, 2)) / count
        centered = x.data - mu[None, :, None]
        var = (centered * centered * m).sum(axis=(0, 2)) / count
        state.mean = state.momentum * state.mean + (1 - state.momentum) * mu
        state.var = state.momentum * state.var + (1 - state.momentum) * var
    else:
        mu, var = state.mean, state.var
        centered = x.data - mu[None, :, None]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv[None, :, None]
    out = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def backward(g):
        gamma.accumulate((g * xhat).sum(axis=(0, 2)))
        beta.accumulate(g.sum(axis=(0, 2)))
        if not x.requires_grad:
            return
        dxhat = g * gamma.data[None, :, None]
        dx = dxhat * inv[None, :, None]
        if training:
            d_mu = -(dxhat.sum(axis=(0, 2))) * inv
            d_var = -0.5 * (dxhat * centered).sum(axis=(0, 2)) * inv ** 3
            dx = dx + m * (d_mu[None, :, None] + 2.0 * d_var[None, :, None] * centered) / count
        x.accumulate(dx)

    y = Tensor.make(out, (x, gamma, beta), backward, "batchnorm")
    return y.reshape(c, length) if squeeze else y


def masked_mean_time(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over the time axis of (B, C, L) counting only unmasked steps."""
    m = np.asarray(mask, dtype=np.float64)[:, None, :]
    return (x * m).sum(axis=2) * (1.0 / m.sum(axis=2))
