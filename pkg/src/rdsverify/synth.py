"""Deterministic synthetic writer population for exercising the pipeline.

Every random draw goes through numpy's Philox4x64 counter-based generator,
keyed by ``(seed, writer, session, index, kind)`` so each trace can be
regenerated on its own.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContentLengthError, InvariantError
from .traceio import DatasetManifest, Label, ManifestEntry, RawTrace, save_manifest, save_trace

log = logging.getLogger(__name__)

RNG_ALGORITHM = "philox4x64"
MIN_DIGITS, MAX_DIGITS = 7, 11
SAMPLE_PERIOD_MS = 10.0
MAX_POINTS = 11  # control points per digit, across its strokes

# One canonical shape per digit in a 0.6 x 1.0 cell, y pointing up.
DIGIT_STROKES: dict[str, list[list[tuple[float, float]]]] = {
    "0": [[(0.30, 1.00), (0.08, 0.85), (0.02, 0.50), (0.08, 0.15), (0.30, 0.00),
           (0.52, 0.15), (0.58, 0.50), (0.52, 0.85), (0.30, 1.00)]],
    "1": [[(0.12, 0.80), (0.32, 1.00), (0.32, 0.50), (0.32, 0.00)]],
    "2": [[(0.05, 0.75), (0.15, 0.95), (0.40, 0.98), (0.55, 0.80), (0.50, 0.60),
           (0.05, 0.00), (0.60, 0.00)]],
    "3": [[(0.05, 0.90), (0.30, 1.00), (0.55, 0.85), (0.50, 0.62), (0.25, 0.52),
           (0.55, 0.40), (0.58, 0.15), (0.30, 0.00), (0.03, 0.10)]],
    "4": [[(0.40, 1.00), (0.05, 0.30), (0.60, 0.30)], [(0.45, 0.70), (0.45, 0.00)]],
    "5": [[(0.10, 1.00), (0.07, 0.55), (0.35, 0.62), (0.57, 0.40), (0.50, 0.10),
           (0.25, 0.00), (0.03, 0.10)], [(0.10, 1.00), (0.55, 1.00)]],
    "6": [[(0.50, 0.95), (0.25, 0.85), (0.06, 0.50), (0.08, 0.15), (0.30, 0.00),
           (0.52, 0.15), (0.50, 0.40), (0.28, 0.50), (0.08, 0.35)]],
    "7": [[(0.02, 1.00), (0.58, 1.00), (0.30, 0.45), (0.18, 0.00)]],
    "8": [[(0.50, 0.85), (0.30, 1.00), (0.08, 0.85), (0.15, 0.62), (0.45, 0.38),
           (0.55, 0.15), (0.30, 0.00), (0.05, 0.15), (0.15, 0.38), (0.45, 0.62),
           (0.52, 0.85)]],
    "9": [[(0.52, 0.75), (0.30, 0.95), (0.08, 0.75), (0.20, 0.50), (0.50, 0.62),
           (0.52, 0.75), (0.45, 0.00)]],
}

# (low, high) bounds of every scalar style parameter.
BOUNDS: dict[str, tuple[float, float]] = {
    "slant": (-0.35, 0.35),
    "size": (0.8, 1.25),
    "aspect": (0.75, 1.3),
    "spacing": (0.05, 0.35),
    "baseline": (-0.08, 0.08),
    "density": (3.0, 6.0),
    "speed_profile": (0.0, 1.0),
    "pressure_base": (0.3, 0.9),
    "pressure_slope": (-0.6, 0.6),
    "pressure_wobble": (0.0, 0.2),
    "hyphenation": (0.0, 0.7),
    "penup_density": (1.5, 4.0),
}
SHAPE_JITTER = 0.15  # bound on per-writer control-point offsets
SCALARS = tuple(BOUNDS)

# within-writer, per-trace variation
NOISE = {"shape": 0.02, "slant": 0.03, "size": 0.03, "density": 0.05, "pressure": 0.02, "point": 0.003}


@dataclass(frozen=True, eq=False)
class WriterStyle:
    writer_id: int
    seed: int
    shape: np.ndarray  # (10, MAX_POINTS, 2) control-point offsets per digit
    slant: float
    size: float
    aspect: float
    spacing: float
    baseline: float
    density: float
    speed_profile: float
    pressure_base: float
    pressure_slope: float
    pressure_wobble: float
    hyphenation: float
    penup_density: float

    def vector(self) -> np.ndarray:
        return np.concatenate([[getattr(self, k) for k in SCALARS], self.shape.ravel()])

    def with_vector(self, vec: np.ndarray) -> "WriterStyle":
        vec = np.asarray(vec, dtype=np.float64)
        scalars = {k: float(v) for k, v in zip(SCALARS, vec[: len(SCALARS)])}
        shape = vec[len(SCALARS):].reshape(10, MAX_POINTS, 2).copy()
        return WriterStyle(self.writer_id, self.seed, shape, **scalars)

    def __eq__(self, other):
        if not isinstance(other, WriterStyle):
            return NotImplemented
        return self.writer_id == other.writer_id and np.array_equal(self.vector(), other.vector())

    def within_bounds(self) -> bool:
        ok = all(BOUNDS[k][0] <= getattr(self, k) <= BOUNDS[k][1] for k in SCALARS)
        return ok and bool(np.all(np.abs(self.shape) <= SHAPE_JITTER))

    def for_session(self, session: int, drift: float) -> "WriterStyle":
        """Session 2 moves every parameter by a fixed fraction of its range."""
        if session == 1 or drift == 0:
            return self
        rng = make_rng(self.seed, 0xD21F7)
        direction = rng.choice([-1.0, 1.0], size=self.vector().shape)
        span = np.concatenate([[b[1] - b[0] for b in BOUNDS.values()], np.full(self.shape.size, 2 * SHAPE_JITTER)])
        return self.with_vector(clip_to_bounds(self.vector() + drift * span * direction))


def clip_to_bounds(vec: np.ndarray) -> np.ndarray:
    out = vec.copy()
    for i, k in enumerate(SCALARS):
        out[i] = np.clip(out[i], *BOUNDS[k])
    out[len(SCALARS):] = np.clip(out[len(SCALARS):], -SHAPE_JITTER, SHAPE_JITTER)
    return out


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def make_rng(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


def gen_population(num_writers: int, seed: int) -> list[WriterStyle]:
    if num_writers < 1:
        raise ValueError("num_writers must be >= 1")
    styles = []
    for wid in range(num_writers):
        rng = make_rng(seed, wid)
        scalars = {k: float(rng.uniform(*BOUNDS[k])) for k in SCALARS}
        shape = np.clip(rng.normal(0.0, 0.06, size=(10, MAX_POINTS, 2)), -SHAPE_JITTER, SHAPE_JITTER)
        styles.append(WriterStyle(wid, derive_seed(seed, wid), shape, **scalars))
    return styles


def random_content(rng: np.random.Generator) -> str:
    n = int(rng.integers(MIN_DIGITS, MAX_DIGITS + 1))
    return "".join(str(d) for d in rng.integers(0, 10, size=n))


def _polyline_points(ctrl: np.ndarray, count: int, profile: float) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``count`` points along a polyline; returns points and time fraction u."""
    seg = np.hypot(*np.diff(ctrl, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    u = np.linspace(0.0, 1.0, count)
    frac = (1 - profile) * u + profile * (1 - np.cos(np.pi * u)) / 2
    s = frac * arc[-1]
    return np.stack([np.interp(s, arc, ctrl[:, 0]), np.interp(s, arc, ctrl[:, 1])], axis=1), u


def _layout_strokes(style: WriterStyle, content: str, rng: np.random.Generator, slant, size):
    """Control polylines for every stroke, tagged with the index of their digit."""
    strokes = []
    cursor = 0.0
    for k, ch in enumerate(content):
        offsets = style.shape[int(ch)] + rng.normal(0.0, NOISE["shape"], size=(MAX_POINTS, 2))
        used = 0
        for template in DIGIT_STROKES[ch]:
            pts = np.asarray(template, dtype=np.float64)
            pts = pts + offsets[used: used + len(pts)]
            used += len(pts)
            x = pts[:, 0] * style.aspect + slant * pts[:, 1]
            y = pts[:, 1] + style.baseline * k
            strokes.append((k, np.stack([cursor + x * size, y * size], axis=1)))
        cursor += (0.6 * style.aspect + style.spacing) * size
    return strokes


def _render(style: WriterStyle, content: str, noise_seed: int):
    if not (MIN_DIGITS <= len(content) <= MAX_DIGITS) or not content.isdigit():
        raise ContentLengthError(f"content must be {MIN_DIGITS}-{MAX_DIGITS} digits, got {content!r}")
    rng = make_rng(noise_seed)
    slant = style.slant + rng.normal(0.0, NOISE["slant"])
    size = style.size * (1 + rng.normal(0.0, NOISE["size"]))
    density = style.density * (1 + rng.normal(0.0, NOISE["density"]))
    strokes = _layout_strokes(style, content, rng, slant, size)

    # merge strokes joined by hyphenation between adjacent digits
    groups = [strokes[0][1]]
    for (k_prev, _), (k, ctrl) in zip(strokes[:-1], strokes[1:]):
        if k != k_prev and rng.random() < style.hyphenation:
            groups[-1] = np.vstack([groups[-1], ctrl])
        else:
            groups.append(ctrl)

    xs, ys, ps, downs = [], [], [], []
    for g, ctrl in enumerate(groups):
        length = float(np.sum(np.hypot(*np.diff(ctrl, axis=0).T)))
        count = max(3, int(round(length * density)))
        pts, u = _polyline_points(ctrl, count, style.speed_profile)
        envelope = 0.5 + 0.5 * np.minimum(1.0, np.minimum(4 * u, 4 * (1 - u)))
        wobble = style.pressure_wobble * np.sin(2 * np.pi * 3 * u + g)
        pressure = (style.pressure_base + style.pressure_slope * (u - 0.5) + wobble) * envelope
        pressure = pressure + rng.normal(0.0, NOISE["pressure"], size=count)
        xs.append(pts[:, 0])
        ys.append(pts[:, 1])
        ps.append(np.maximum(pressure, 0.01))
        downs.append(np.ones(count, dtype=bool))
        if g + 1 < len(groups):
            start, end = ctrl[-1], groups[g + 1][0]
            n_up = max(2, int(round(np.hypot(*(end - start)) * style.penup_density)))
            w = np.linspace(0.0, 1.0, n_up + 2)[1:-1]
            xs.append(start[0] + w * (end[0] - start[0]))
            ys.append(start[1] + w * (end[1] - start[1]))
            ps.append(np.zeros(n_up))
            downs.append(np.zeros(n_up, dtype=bool))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    x = x + rng.normal(0.0, NOISE["point"], size=x.shape)
    y = y + rng.normal(0.0, NOISE["point"], size=y.shape)
    t = np.arange(len(x), dtype=np.float64) * SAMPLE_PERIOD_MS
    return x, y, np.concatenate(ps), t, np.concatenate(downs)


def gen_genuine(style: WriterStyle, content: str, session: int, noise_seed: int, drift: float = 0.05) -> RawTrace:
    x, y, p, t, down = _render(style.for_session(session, drift), content, noise_seed)
    return RawTrace(x, y, p, t, down, writer_id=style.writer_id, session=session,
                    label=Label.GENUINE, content=content)


def blend_styles(victim: WriterStyle, forger: WriterStyle, beta: float) -> WriterStyle:
    vec = victim.vector() * (1.0 - beta) + forger.vector() * beta
    return victim.with_vector(vec)


def gen_skilled_forgery(
    victim: WriterStyle,
    forger: WriterStyle,
    content: str,
    noise_seed: int,
    beta: float = 0.35,
    session: int = 1,
    drift: float = 0.05,
) -> RawTrace:
    """Imitation of ``victim`` by ``forger``: a convex blend of the two styles."""
    if victim.writer_id == forger.writer_id:
        raise InvariantError("victim and forger must differ")
    style = blend_styles(victim.for_session(session, drift), forger, beta)
    x, y, p, t, down = _render(style, content, noise_seed)
    return RawTrace(x, y, p, t, down, writer_id=victim.writer_id, session=session,
                    label=Label.SKILLED_FORGERY, content=content, producer_id=forger.writer_id)


@dataclass
class SynthConfig:
    num_writers: int = 30
    per_session_count: int = 10
    beta: float = 0.35
    drift: float = 0.05
    seed: int = 0
    train_writers: Optional[int] = None
    rng: str = RNG_ALGORITHM

    def validate(self) -> None:
        if self.num_writers < 2:
            raise ValueError("num_writers must be >= 2 (forgeries need a second writer)")
        if self.per_session_count < 1:
            raise ValueError("per_session_count must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0.0 <= self.drift < 1.0:
            raise ValueError("drift must lie in [0, 1)")
        if self.train_writers is not None and not 0 <= self.train_writers <= self.num_writers:
            raise ValueError("train_writers must lie in [0, num_writers]")
        if self.rng != RNG_ALGORITHM:
            raise ValueError(f"only the {RNG_ALGORITHM} generator is supported")

    @property
    def n_train(self) -> int:
        if self.train_writers is not None:
            return self.train_writers
        return (2 * self.num_writers) // 3


def forger_assignment(num_writers: int, seed: int) -> list[int]:
    """Random derangement: writer w's forgeries are produced by forgers[w] != w."""
    rng = make_rng(seed, 0xF0F0)
    while True:
        perm = rng.permutation(num_writers)
        if np.all(perm != np.arange(num_writers)):
            return [int(v) for v in perm]


@dataclass
class SynthRecord:
    trace: RawTrace
    relpath: str


def generate_dataset(cfg: SynthConfig) -> list[SynthRecord]:
    cfg.validate()
    styles = gen_population(cfg.num_writers, cfg.seed)
    forgers = forger_assignment(cfg.num_writers, cfg.seed)
    records = []
    for w, style in enumerate(styles):
        for session in (1, 2):
            for i in range(cfg.per_session_count):
                content = random_content(make_rng(cfg.seed, w, session, i, 2))
                g = gen_genuine(style, content, session, derive_seed(cfg.seed, w, session, i, 0), cfg.drift)
                records.append(SynthRecord(g, f"traces/w{w:03d}_s{session}_g{i:02d}.txt"))
        for session in (1, 2):
            for i in range(cfg.per_session_count):
                content = random_content(make_rng(cfg.seed, w, session, i, 2))
                f = gen_skilled_forgery(style, styles[forgers[w]], content,
                                        derive_seed(cfg.seed, w, session, i, 1),
                                        beta=cfg.beta, session=session, drift=cfg.drift)
                records.append(SynthRecord(f, f"traces/w{w:03d}_s{session}_f{i:02d}.txt"))
    return records


def write_dataset(cfg: SynthConfig, out_dir) -> DatasetManifest:
    """Write traces plus ``manifest.txt``, ``train.txt`` and ``test.txt``."""
    records = generate_dataset(cfg)
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        save_trace(rec.trace, out / rec.relpath)
        tr = rec.trace
        entries.append(ManifestEntry(Path(rec.relpath), tr.writer_id, tr.session, tr.label, tr.producer_id, tr.content))
    manifest = DatasetManifest(tuple(entries), cfg.seed, out)
    save_manifest(manifest, out / "manifest.txt")
    n_train = cfg.n_train
    save_manifest(manifest.subset(range(n_train)), out / "train.txt")
    save_manifest(manifest.subset(range(n_train, cfg.num_writers)), out / "test.txt")
    log.info("wrote %d traces for %d writers to %s", len(entries), cfg.num_writers, out)
    return manifest
