"""Conv backbone: input CRB, channel split, and densely connected time-delay scaling blocks.

CRB = Conv1d -> ReLU -> BatchNorm. Every block output is re-multiplied by the
padding mask so zero-padded frames stay exactly zero and never leak into valid
frames through the convolution windows.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, batchnorm, concat, conv1d, linear, masked_mean_time, relu, sigmoid
from ..errors import ShapeError
from .params import PavenetParams


def crb(p: PavenetParams, name: str, x: Tensor, mask: np.ndarray, training: bool, dilation: int = 1) -> Tensor:
    h = relu(conv1d(x, p[f"{name}.w"], p[f"{name}.b"], dilation))
    h = batchnorm(h, p[f"{name}.gamma"], p[f"{name}.beta"], p.bn[name], training, mask)
    return h * mask[:, None, :]


def _split(x: Tensor, parts: int) -> list[Tensor]:
    width = x.shape[1] // parts
    return [x[:, i * width: (i + 1) * width, :] for i in range(parts)]


def tds_block(p: PavenetParams, name: str, x: Tensor, mask: np.ndarray, training: bool, dilation: int) -> Tensor:
    """Light-weight Res2Net block (no 1x1 convs) with squeeze-excitation and a residual add."""
    subsets = _split(x, p.config.num_subsets)
    outs = [subsets[0]]
    prev = None
    for i, sub in enumerate(subsets[1:]):
        inp = sub if prev is None else sub + prev
        prev = crb(p, f"{name}.conv{i}", inp, mask, training, dilation)
        outs.append(prev)
    u = concat(outs, axis=1)
    z = relu(linear(masked_mean_time(u, mask), p[f"{name}.se1.w"], p[f"{name}.se1.b"]))
    scale = sigmoid(linear(z, p[f"{name}.se2.w"], p[f"{name}.se2.b"]))
    return (u * scale.reshape(*scale.shape, 1) + x) * mask[:, None, :]


def backbone_forward(p: PavenetParams, x: Tensor, mask: np.ndarray, training: bool = False) -> Tensor:
    """(B, 12, L) features -> (B, C, L) sequence representation."""
    cfg = p.config
    if x.ndim != 3 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"backbone expects (B, {cfg.in_channels}, L), got {x.shape}")
    h = crb(p, "backbone.in", x, mask, training)
    subsets = _split(h, cfg.num_subsets)
    ys = [crb(p, f"backbone.split{i}", s, mask, training) for i, s in enumerate(subsets[:-1])]
    y = concat(ys + [subsets[-1]], axis=1)
    z = [crb(p, "backbone.mid", y, mask, training)]
    for blk, dilation in enumerate(cfg.dilations):
        inp = z[0]
        for prev in z[1:]:
            inp = inp + prev
        z.append(tds_block(p, f"backbone.tds{blk}", inp, mask, training, dilation))
    return crb(p, "backbone.agg", concat(z, axis=1), mask, training)
