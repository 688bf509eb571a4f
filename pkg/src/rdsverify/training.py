"""Batch sampler, R-Del augmentation, AdamW optimizer and the training loop."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError, InsufficientWritersError
from .losses import GENUINE, RANDOM, SKILLED, MetricLossConfig, id_loss, metric_loss
from .model import PavenetConfig, PavenetParams, embed, head_forward, init_params, pad_batch
from .preprocess import FeatureSequence
from .synth import make_rng
from .traceio import Label

log = logging.getLogger(__name__)

MIN_RDEL_LENGTH = 20
LOG_COLUMNS = ("epoch", "step", "L_tri", "L_nang", "L_ID", "L_total", "lr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    steps_per_epoch: int = 50
    lr0: float = 1e-3
    decay: float = 0.95
    triplet_weight: float = 0.1
    angular_lambda: float = 1.0
    angular_tan2: float = 1.0
    margin: float = 0.5
    rdel_min: float = 0.05
    rdel_max: float = 0.075
    weight_decay: float = 1e-4
    clip_norm: float = 5.0
    id_normalization: str = "identities"
    anchors: int = 2
    per_role: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("epochs and steps_per_epoch must be positive")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if not 0 <= self.rdel_min <= self.rdel_max < 1:
            raise ValueError("rdel range must satisfy 0 <= rdel_min <= rdel_max < 1")
        if self.weight_decay < 0 or self.clip_norm <= 0 or self.margin < 0:
            raise ValueError("weight_decay, margin must be >= 0 and clip_norm > 0")
        if self.id_normalization not in ("identities", "batch"):
            raise ValueError("id_normalization must be 'identities' or 'batch'")
        if self.anchors < 1 or self.per_role < 2:
            raise ValueError("need at least one anchor and two samples per role")

    @property
    def batch_size(self) -> int:
        return self.anchors * 3 * self.per_role

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * self.decay ** epoch

    def metric_config(self) -> MetricLossConfig:
        return MetricLossConfig(self.margin, self.angular_tan2, self.angular_lambda, self.triplet_weight)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _coerce(value: str, typ):
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    if typ in (bool, "bool"):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if typ in (tuple, "tuple"):
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value


def parse_config_text(text: str) -> tuple[dict, dict]:
    """``key = value`` lines; keys are TrainConfig fields or ``model.<PavenetConfig field>``.

    Returns (train overrides, model overrides). ``#`` starts a comment.
    """
    train_fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    model_fields = {f.name: f.type for f in dataclasses.fields(PavenetConfig)}
    train, model = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("model."):
            name = key[len("model."):]
            if name not in model_fields:
                raise ValueError(f"config line {lineno}: unknown model key {name!r}")
            model[name] = _coerce(value, model_fields[name])
        elif key in train_fields:
            train[key] = _coerce(value, train_fields[key])
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    return train, model


def load_config(path) -> tuple[dict, dict]:
    return parse_config_text(Path(path).read_text())


@dataclass
class TrainingSet:
    """Training sequences grouped by the writer they claim to be."""

    genuine: dict[int, list[FeatureSequence]]
    forged: dict[int, list[FeatureSequence]]
    class_of: dict[int, int]  # writer id -> head class index

    @classmethod
    def from_sequences(cls, seqs: Iterable[FeatureSequence]) -> "TrainingSet":
        genuine: dict[int, list] = {}
        forged: dict[int, list] = {}
        for s in seqs:
            target = genuine if s.label is Label.GENUINE else forged
            target.setdefault(s.writer_id, []).append(s)
        writers = sorted(set(genuine) | set(forged))
        return cls(genuine, forged, {w: i for i, w in enumerate(writers)})

    @property
    def writers(self) -> list[int]:
        return sorted(self.class_of)

    @property
    def num_classes(self) -> int:
        return len(self.class_of)

    def target(self, s: FeatureSequence) -> int:
        """Head class of the trace's actual producer, or -1 when unknown."""
        producer = s.producer
        return self.class_of.get(producer, -1) if producer is not None else -1


@dataclass
class Batch:
    x: np.ndarray  # (B, 12, L_max), zero end-padded
    lengths: np.ndarray
    mask: np.ndarray  # (B, L_max), 1 on valid steps
    writer_ids: np.ndarray  # claimed identity (the anchor)
    roles: np.ndarray  # GENUINE / SKILLED / RANDOM
    groups: np.ndarray  # anchor slot 0 .. anchors-1
    targets: np.ndarray  # head class of the producer, -1 if excluded
    sequences: list[FeatureSequence] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.lengths)


def rdel(fs: FeatureSequence, rng: np.random.Generator, rate_range: tuple[float, float] = (0.05, 0.075)) -> FeatureSequence:
    """Randomly delete round(r * L) time steps, r ~ U(rate_range); short sequences pass through."""
    length = fs.length
    if length < MIN_RDEL_LENGTH:
        return fs
    lo, hi = rate_range
    r = rng.uniform(lo, hi) if hi > lo else lo
    n_del = int(round(r * length))
    if n_del == 0:
        return fs
    drop = rng.choice(length, size=n_del, replace=False)
    keep = np.setdiff1d(np.arange(length), drop)
    return fs.with_data(fs.data[:, keep])


def sample_batch(
    data: TrainingSet,
    rng: np.random.Generator,
    anchors: int = 2,
    per_role: int = 3,
    rate_range: Optional[tuple[float, float]] = None,
    extra_pad: int = 0,
) -> Batch:
    """``anchors`` writers x (per_role genuine + per_role skilled + per_role random).

    Random forgeries are one genuine trace from each of ``per_role`` other writers.
    """
    eligible = [
        w for w in data.writers
        if len(data.genuine.get(w, ())) >= per_role and len(data.forged.get(w, ())) >= per_role
    ]
    donors = [w for w in data.writers if data.genuine.get(w)]
    if len(eligible) < anchors or len(donors) < per_role + 1:
        raise InsufficientWritersError(
            f"need {anchors} anchor writers and {per_role} donors besides each anchor; "
            f"have {len(eligible)} eligible, {len(donors)} with genuine traces"
        )
    if len(data.writers) < anchors + per_role:
        raise InsufficientWritersError(f"need at least {anchors + per_role} writers, have {len(data.writers)}")
    seqs, claimed, roles, groups = [], [], [], []
    for slot, w in enumerate(rng.choice(eligible, size=anchors, replace=False)):
        w = int(w)
        others = [d for d in donors if d != w]
        picks = [
            (GENUINE, [data.genuine[w][i] for i in rng.choice(len(data.genuine[w]), per_role, replace=False)]),
            (SKILLED, [data.forged[w][i] for i in rng.choice(len(data.forged[w]), per_role, replace=False)]),
            (RANDOM, [
                data.genuine[d][int(rng.integers(len(data.genuine[d])))]
                for d in rng.choice(others, size=per_role, replace=False)
            ]),
        ]
        for role, chosen in picks:
            for s in chosen:
                seqs.append(s)
                claimed.append(w)
                roles.append(role)
                groups.append(slot)
    if rate_range is not None:
        seqs = [rdel(s, rng, rate_range) for s in seqs]
    return make_batch(seqs, data, claimed, roles, groups, extra_pad)


def make_batch(seqs, data: TrainingSet, claimed, roles, groups, extra_pad: int = 0) -> Batch:
    x, lengths, mask = pad_batch([s.data for s in seqs], extra=extra_pad)
    targets = np.array([data.target(s) for s in seqs])
    return Batch(x, lengths, mask, np.array(claimed), np.array(roles), np.array(groups), targets, list(seqs))


def batch_loss(p: PavenetParams, batch: Batch, cfg: TrainConfig):
    """Forward pass in training mode; returns (L_total, L_tri, L_nang, L_ID) tensors."""
    f = embed(p, batch.x, batch.lengths, training=True)
    l_cm, l_tri, l_nang = metric_loss(f, batch.groups, batch.roles, cfg.metric_config())
    l_id = id_loss(head_forward(p, f), batch.targets, cfg.id_normalization)
    return l_cm + l_id, l_tri, l_nang, l_id


class AdamW:
    """Adam with decoupled weight decay (applied to matrices and kernels only)."""

    def __init__(self, params: PavenetParams, lr: float, weight_decay: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.tensors.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, t in self.params.tensors.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            if self.weight_decay and t.data.ndim >= 2:
                t.data *= 1 - self.lr * self.weight_decay
            t.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_gradients(params: PavenetParams, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [t.grad for t in params.parameters() if t.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


@dataclass
class TrainResult:
    params: PavenetParams
    log: list[dict]


def train_step(p: PavenetParams, opt: AdamW, batch: Batch, cfg: TrainConfig) -> dict:
    p.zero_grad()
    total, l_tri, l_nang, l_id = batch_loss(p, batch, cfg)
    values = {"L_tri": l_tri.item(), "L_nang": l_nang.item(), "L_ID": l_id.item(), "L_total": total.item()}
    total.backward()
    clip_gradients(p, cfg.clip_norm)
    opt.step()
    return values


def train(
    seqs: Sequence[FeatureSequence],
    cfg: TrainConfig = TrainConfig(),
    model_config: Optional[PavenetConfig] = None,
    log_path=None,
) -> TrainResult:
    """Train on the given (training-writer) sequences; the head has one class per writer."""
    cfg.validate()
    data = TrainingSet.from_sequences(seqs)
    if data.num_classes == 0:
        raise DataError("empty training set")
    mc = model_config or PavenetConfig()
    mc = dataclasses.replace(mc, num_writers=data.num_classes)
    mc.validate()
    p = init_params(mc, seed=cfg.seed)
    opt = AdamW(p, cfg.lr0, cfg.weight_decay)
    rng = make_rng(cfg.seed, 1)
    rows: list[dict] = []
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        for step in range(cfg.steps_per_epoch):
            batch = sample_batch(data, rng, cfg.anchors, cfg.per_role, (cfg.rdel_min, cfg.rdel_max))
            values = train_step(p, opt, batch, cfg)
            rows.append({"epoch": epoch, "step": step, **values, "lr": opt.lr})
        last = rows[-cfg.steps_per_epoch:]
        log.info("epoch %d lr %.6g mean loss %.4f", epoch, opt.lr, np.mean([r["L_total"] for r in last]))
    if log_path is not None:
        write_log(rows, log_path)
    return TrainResult(p, rows)


def write_log(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"], r["step"]] + [repr(float(r[c])) for c in LOG_COLUMNS[2:]])
