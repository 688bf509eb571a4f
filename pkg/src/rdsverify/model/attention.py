"""Selective (attentive) pooling and global temporal attention."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, linear, lstm, softmax
from ..errors import ShapeError
from .params import PavenetParams


def selective_pool(p: PavenetParams, name: str, seq: Tensor, mask: np.ndarray) -> Tensor:
    """(B, C, L) -> (B, embed_dim).

    Each head scores every frame linearly, softmax-normalizes over the valid
    frames, and takes the weighted sum of frames; heads are concatenated and
    projected.
    """
    w = p[f"{name}.score_w"]
    if seq.ndim != 3 or seq.shape[1] != w.shape[1]:
        raise ShapeError(f"selective_pool expects (B, {w.shape[1]}, L), got {seq.shape}")
    b = seq.shape[0]
    scores = w @ seq + p[f"{name}.score_b"].reshape(-1, 1)  # (B, heads, L)
    attn = softmax(scores, axis=2, mask=mask[:, None, :])
    pooled = attn @ seq.transpose(0, 2, 1)  # (B, heads, C)
    return linear(pooled.reshape(b, -1), p[f"{name}.proj.w"], p[f"{name}.proj.b"])


def gta_attention(p: PavenetParams, y: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
    """Returns ``(y * attn + y, attn)`` with attn a per-channel softmax over time of LSTM(y)."""
    y_hat = lstm(y, p["gta.lstm.w_ih"], p["gta.lstm.w_hh"], p["gta.lstm.b"])
    if y_hat.shape != y.shape:
        raise ShapeError("recurrent hidden size must equal the channel count")
    attn = softmax(y_hat, axis=2, mask=mask[:, None, :])
    return y * attn + y, attn
