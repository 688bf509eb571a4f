"""Coordinated metric loss (lifted-structure triplet + N-pair/angular) and writer-ID loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, exp, log, relu, sqrt
from .errors import DegenerateBatchError, ShapeError

GENUINE, SKILLED, RANDOM = 0, 1, 2


@dataclass(frozen=True)
class MetricLossConfig:
    margin: float = 0.5  # lifted-structure margin alpha
    tan2: float = 1.0  # tan^2 of the angular bound (45 degrees)
    angular_lambda: float = 1.0
    triplet_weight: float = 0.1


def normalize_rows(f: Tensor) -> Tensor:
    norm = sqrt((f * f).sum(axis=1, keepdims=True) + 1e-12)
    return f / norm


def _pair_structure(groups: np.ndarray, roles: np.ndarray):
    """Positive pairs (same group, both genuine) and per-pair negative masks."""
    groups = np.asarray(groups)
    roles = np.asarray(roles)
    pairs, negs = [], []
    for g in np.unique(groups):
        pos = np.flatnonzero((groups == g) & (roles == GENUINE))
        neg = ((groups == g) & (roles != GENUINE)).astype(np.float64)
        for a in range(len(pos)):
            for b in range(a + 1, len(pos)):
                pairs.append((pos[a], pos[b]))
                negs.append(neg)
    if not pairs:
        raise DegenerateBatchError("batch contains no positive (same-writer genuine) pair")
    return np.array(pairs), np.array(negs)


def metric_loss(
    embeddings: Tensor,
    groups: np.ndarray,
    roles: np.ndarray,
    cfg: MetricLossConfig = MetricLossConfig(),
) -> tuple[Tensor, Tensor, Tensor]:
    """Returns ``(triplet_weight * L_tri + L_nang, L_tri, L_nang)``.

    ``groups[i]`` is the anchor writer a sample was drawn for and ``roles[i]``
    one of GENUINE / SKILLED / RANDOM. Positives are genuine pairs within a
    group; the group's forgeries (skilled and random) are its negatives.
    Embeddings are L2-normalized first.
    """
    if embeddings.ndim != 2 or embeddings.shape[0] != len(groups) or len(groups) != len(roles):
        raise ShapeError("embeddings, groups and roles disagree in batch size")
    pairs, neg = _pair_structure(groups, roles)
    n = normalize_rows(embeddings)
    sim = n @ n.T
    b, d = n.shape
    diff = n.reshape(b, 1, d) - n.reshape(1, b, d)
    dist = sqrt((diff * diff).sum(axis=2))

    i, j = pairs[:, 0], pairs[:, 1]
    has_neg = neg.sum(axis=1) > 0
    if has_neg.any():
        ii, jj, mm = i[has_neg], j[has_neg], neg[has_neg]
        e = exp(cfg.margin - dist)
        spread = (e[ii] * mm).sum(axis=1) + (e[jj] * mm).sum(axis=1)
        lifted = log(spread) + dist[ii, jj]
        hinge = relu(lifted)
        l_tri = (hinge * hinge).sum() * (1.0 / (2 * len(ii)))
    else:
        l_tri = Tensor(0.0)

    # ordered (anchor, positive) pairs in both directions
    a = np.concatenate([i, j])
    p = np.concatenate([j, i])
    m = np.concatenate([neg, neg])
    s_ap = sim[a, p].reshape(-1, 1)
    npair = log((exp(sim[a] - s_ap) * m).sum(axis=1) + 1.0)
    t2 = cfg.tan2
    ang_logits = (sim[a] + sim[p]) * (4.0 * t2) - s_ap * (2.0 * (1.0 + t2))
    angular = log((exp(ang_logits) * m).sum(axis=1) + 1.0)
    l_nang = (npair + angular * cfg.angular_lambda).mean()
    return l_tri * cfg.triplet_weight + l_nang, l_tri, l_nang


def id_loss(probabilities: Tensor, targets: np.ndarray, normalization: str = "identities") -> Tensor:
    """Cross entropy against writer identity.

    ``targets[i] = -1`` excludes sample i. ``normalization="identities"`` divides the
    summed cross entropy by the number of identities N_c; ``"batch"`` averages
    over the included samples.
    """
    targets = np.asarray(targets)
    if probabilities.ndim != 2 or probabilities.shape[0] != len(targets):
        raise ShapeError(f"probabilities {probabilities.shape} vs {len(targets)} targets")
    rows = np.flatnonzero(targets >= 0)
    if len(rows) == 0:
        return Tensor(0.0)
    picked = probabilities[rows, targets[rows]]
    total = -log(picked + 1e-300).sum()
    if normalization == "identities":
        return total * (1.0 / probabilities.shape[1])
    if normalization == "batch":
        return total * (1.0 / len(rows))
    raise ValueError(f"unknown normalization {normalization!r}")
