"""Full embedding network and writer-ID head."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..autodiff import Tensor, concat, linear, relu, softmax
from ..errors import ShapeError
from ..preprocess import FeatureSequence
from .attention import gta_attention, selective_pool
from .backbone import backbone_forward
from .dpm import KeyPointSet, dpm_refine
from .params import PavenetParams


def pad_batch(seqs: Sequence[np.ndarray], extra: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """End-pad (12, L_i) arrays with zeros; returns (B, 12, L_max + extra), lengths, mask."""
    lengths = np.array([s.shape[1] for s in seqs])
    total = int(lengths.max()) + extra
    x = np.zeros((len(seqs), seqs[0].shape[0], total))
    for i, s in enumerate(seqs):
        x[i, :, : s.shape[1]] = s
    return x, lengths, length_mask(lengths, total)


def length_mask(lengths: np.ndarray, total: int) -> np.ndarray:
    return (np.arange(total)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)


def dpm_forward(p: PavenetParams, s: Tensor, lengths: np.ndarray) -> tuple[Tensor, list[KeyPointSet]]:
    """Style branch: (B, C, L) -> f_s (B, embed_dim) and the key points used."""
    mask = length_mask(lengths, s.shape[2])
    kps: list[KeyPointSet] = []
    if p.config.use_dpm:
        s, kps = dpm_refine(p, s, lengths)
    return selective_pool(p, "dpm.pool", s, mask), kps


def gta_forward(p: PavenetParams, y: Tensor, lengths: np.ndarray) -> Tensor:
    """Global branch: (B, C, L) -> f_g (B, embed_dim)."""
    mask = length_mask(lengths, y.shape[2])
    if p.config.use_gta:
        y = gta_attention(p, y, mask)[0]
    return selective_pool(p, "gta.pool", y, mask)


def embed(p: PavenetParams, x: np.ndarray, lengths: np.ndarray, training: bool = False) -> Tensor:
    """Padded batch (B, 12, L) -> embeddings (B, 2 * embed_dim) = concat(f_s, f_g)."""
    lengths = np.asarray(lengths)
    h = backbone_forward(p, Tensor(x), length_mask(lengths, x.shape[2]), training)
    f_s, _ = dpm_forward(p, h, lengths)
    return concat([f_s, gta_forward(p, h, lengths)], axis=1)


def embed_sequences(p: PavenetParams, seqs: Sequence[FeatureSequence], batch_size: int = 16) -> np.ndarray:
    """Eval-mode embeddings for many sequences, batched by similar length."""
    out = np.zeros((len(seqs), p.config.embedding_size))
    order = np.argsort([s.length for s in seqs], kind="stable")
    for start in range(0, len(order), batch_size):
        chunk = order[start: start + batch_size]
        x, lengths, _ = pad_batch([seqs[i].data for i in chunk])
        out[chunk] = embed(p, x, lengths, training=False).data
    return out


def head_forward(p: PavenetParams, f: Tensor) -> Tensor:
    """Embeddings (B, 2E) -> writer probabilities (B, N_c)."""
    if f.ndim != 2 or f.shape[1] != p.config.embedding_size:
        raise ShapeError(f"head expects (B, {p.config.embedding_size}), got {f.shape}")
    h = relu(linear(f, p["head.fc1.w"], p["head.fc1.b"]))
    return softmax(linear(h, p["head.fc2.w"], p["head.fc2.b"]), axis=1)
