"""Discriminative pattern mining: key points, segments, statistical refinement, mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, concat, maxpool_indices, std
from ..errors import SequenceTooShortError
from .params import PavenetParams

SIGMA_EPS = 1e-6


@dataclass(frozen=True)
class KeyPointSet:
    points: np.ndarray  # (n,) time indices, strongest first
    starts: np.ndarray  # (n,) segment starts u_i
    stops: np.ndarray  # (n,) exclusive segment ends v_i
    segment_length: int

    def segment_indices(self) -> np.ndarray:
        """All time indices covered, segment by segment (overlaps repeat)."""
        return np.concatenate([np.arange(u, v) for u, v in zip(self.starts, self.stops)])


def segment_length(length: int, n: int) -> int:
    """floor(floor(L / 4) / n), clamped to at least 1."""
    return max(1, (length // 4) // n)


def select_keypoints(s: np.ndarray, k: int, n: int) -> np.ndarray:
    """Top-n distinct source time steps of the windowed maxima of ``s`` (C, L).

    Each window maximum names the time step it came from; a time step named by
    several windows or channels keeps its largest value. Ranking is by value,
    ties going to the smaller index.
    """
    length = s.shape[-1]
    if length < k:
        raise SequenceTooShortError(f"sequence of length {length} is shorter than the pooling kernel {k}")
    values, idx = maxpool_indices(Tensor(s), k)
    best = np.full(length, -np.inf)
    np.maximum.at(best, idx.ravel(), values.data.ravel())
    candidates = np.flatnonzero(np.isfinite(best))
    if len(candidates) < n:
        raise SequenceTooShortError(f"only {len(candidates)} distinct key points, need {n}")
    order = np.lexsort((candidates, -best[candidates]))
    return candidates[order[:n]]


def find_keypoints(s: np.ndarray, k: int, n: int) -> KeyPointSet:
    length = s.shape[-1]
    points = select_keypoints(s, k, n)
    ls = segment_length(length, n)
    # centered on the key point; shifted inward at the edges so every segment has ls steps
    starts = np.clip(points - ls // 2, 0, length - ls)
    return KeyPointSet(points, starts, starts + ls, ls)


def position_mask(kp: KeyPointSet, length: int, on: float, off: float) -> np.ndarray:
    m = np.full(length, off)
    for u, v in zip(kp.starts, kp.stops):
        m[u:v] = on
    return m


def dpm_refine(p: PavenetParams, s: Tensor, lengths: np.ndarray) -> tuple[Tensor, list[KeyPointSet]]:
    """Refined sequence ``(s - mu) / sigma * m + s`` for a padded batch (B, C, L).

    mu and sigma are computed per sequence over its segment elements only.
    """
    cfg = p.config
    b, _, total = s.shape
    mus, sigmas, masks, kps = [], [], [], []
    for i in range(b):
        length = int(lengths[i])
        kp = find_keypoints(s.data[i, :, :length], cfg.dpm_k, cfg.dpm_n)
        seg = s[i][:, kp.segment_indices()]
        mus.append(seg.mean().reshape(1))
        sigmas.append(std(seg).reshape(1))
        m = np.zeros(total)
        m[:length] = position_mask(kp, length, cfg.mask_on, cfg.mask_off)
        masks.append(m)
        kps.append(kp)
    mu = concat(mus).reshape(b, 1, 1)
    sigma = concat(sigmas).reshape(b, 1, 1)
    refined = (s - mu) / (sigma + SIGMA_EPS) * np.stack(masks)[:, None, :] + s
    return refined, kps
