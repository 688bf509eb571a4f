"""Template verifier, DTW baseline and EER / ROC computation."""

from __future__ import annotations

import csv
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import EmptyPopulationError, EmptySequenceError, InsufficientGenuineError
from .preprocess import FeatureSequence
from .synth import make_rng
from .traceio import Label

ROLES = ("genuine", "skilled", "random")
RANDOM_CAP = 50


class Protocol(enum.Enum):
    FOUR_VS_ONE = "4v1"
    ONE_VS_ONE = "1v1"


class Scope(enum.Enum):
    ACROSS = "across"  # templates and queries span both sessions
    SINGLE = "single"  # session 1 only


def _frames(a) -> np.ndarray:
    data = a.data if isinstance(a, FeatureSequence) else np.asarray(a, dtype=np.float64)
    if data.ndim == 1:
        data = data[None, :]
    if data.shape[-1] == 0:
        raise EmptySequenceError("DTW needs non-empty sequences")
    return data.T  # (L, channels)


def dtw_align(a, b) -> tuple[float, list[tuple[int, int]]]:
    """Minimum accumulated Euclidean frame cost over monotone unit-step paths, and that path.

    Inputs are FeatureSequences or (channels, L) arrays. Traceback prefers the
    diagonal step, then the step in ``a``, then the step in ``b``.
    """
    fa, fb = _frames(a), _frames(b)
    la, lb = len(fa), len(fb)
    cost = cdist(fa, fb)
    acc = np.full((la + 1, lb + 1), np.inf)
    acc[0, 0] = 0.0
    # sweep anti-diagonals i + j = d (1-based cell coordinates)
    for d in range(2, la + lb + 1):
        i = np.arange(max(1, d - lb), min(la, d - 1) + 1)
        j = d - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = cost[i - 1, j - 1] + best
    path = [(la - 1, lb - 1)]
    i, j = la, lb
    while (i, j) != (1, 1):
        steps = ((i - 1, j - 1), (i - 1, j), (i, j - 1))
        i, j = min(steps, key=lambda s: acc[s])
        path.append((i - 1, j - 1))
    return float(acc[la, lb]), path[::-1]


def dtw_distance(a, b) -> tuple[float, list[tuple[int, int]]]:
    """Accumulated cost divided by warping-path length, and the path."""
    total, path = dtw_align(a, b)
    return total / len(path), path


def verify_score(query, templates, distance: Optional[Callable] = None) -> float:
    """Mean query-to-template distance over mean pairwise template distance.

    A single template (or templates that all coincide) gives the raw mean distance.
    ``distance`` defaults to the Euclidean norm of the difference.
    """
    if len(templates) == 0:
        raise InsufficientGenuineError("verify_score needs at least one template")
    dist = distance or (lambda u, v: float(np.linalg.norm(np.asarray(u) - np.asarray(v))))
    to_query = np.mean([dist(query, t) for t in templates])
    if len(templates) < 2:
        return float(to_query)
    spread = np.mean([
        dist(templates[i], templates[j]) for i in range(len(templates)) for j in range(i + 1, len(templates))
    ])
    return float(to_query / spread) if spread > 1e-12 else float(to_query)


@dataclass(frozen=True)
class Trial:
    templates: tuple[int, ...]  # indices into the writer's ordered genuine list
    queries: tuple[int, ...]


def select_templates(sessions: Sequence[int], protocol: Protocol, scope: Scope = Scope.ACROSS) -> list[Trial]:
    """Template / genuine-query split for one writer.

    ``sessions[i]`` is the session of the writer's i-th genuine trace, in
    acquisition order.
    """
    sessions = np.asarray(sessions)
    pool = np.flatnonzero(sessions == 1) if scope is Scope.SINGLE else np.arange(len(sessions))
    if protocol is Protocol.ONE_VS_ONE:
        if len(pool) < 2:
            raise InsufficientGenuineError(f"1v1 needs 2 genuine traces, have {len(pool)}")
        return [Trial((int(t),), tuple(int(q) for q in pool if q != t)) for t in pool]
    if scope is Scope.ACROSS:
        s1, s2 = pool[sessions[pool] == 1], pool[sessions[pool] == 2]
        if len(s1) < 2 or len(s2) < 2:
            raise InsufficientGenuineError("across-session 4v1 needs two genuine traces per session")
        chosen = np.concatenate([s1[:2], s2[:2]])
    else:
        if len(pool) < 4:
            raise InsufficientGenuineError(f"4v1 needs 4 templates, have {len(pool)} genuine traces")
        chosen = pool[:4]
    queries = [int(q) for q in pool if q not in set(chosen.tolist())]
    if not queries:
        raise InsufficientGenuineError("no genuine query left after choosing templates")
    return [Trial(tuple(int(c) for c in chosen), tuple(queries))]


@dataclass
class ScoreSet:
    """Per writer, per role ("genuine" / "skilled" / "random"): list of scores."""

    scores: dict[int, dict[str, list[float]]] = field(default_factory=dict)

    def add(self, writer: int, role: str, score: float) -> None:
        if not np.isfinite(score):
            raise ValueError(f"non-finite score for writer {writer}")
        self.scores.setdefault(writer, {r: [] for r in ROLES})[role].append(float(score))

    @property
    def writers(self) -> list[int]:
        return sorted(self.scores)

    def population(self, role: str, writer: Optional[int] = None) -> np.ndarray:
        writers = self.writers if writer is None else [writer]
        return np.array([s for w in writers for s in self.scores[w][role]])


@dataclass
class EerResult:
    eer_global: float  # percent
    eer_local: float  # percent
    threshold: float  # global threshold at the crossing
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray

    def formatted(self) -> str:
        return f"{self.eer_global:.2f}/{self.eer_local:.2f}"


def error_rates(genuine: np.ndarray, impostor: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Candidate thresholds (-inf and every distinct score) with FAR and FRR; accept iff score <= t."""
    genuine = np.sort(np.asarray(genuine, dtype=np.float64))
    impostor = np.sort(np.asarray(impostor, dtype=np.float64))
    if len(genuine) == 0 or len(impostor) == 0:
        raise EmptyPopulationError("EER needs non-empty genuine and impostor populations")
    thresholds = np.concatenate([[-np.inf], np.unique(np.concatenate([genuine, impostor]))])
    far = np.searchsorted(impostor, thresholds, side="right") / len(impostor)
    frr = (len(genuine) - np.searchsorted(genuine, thresholds, side="right")) / len(genuine)
    return thresholds, far, frr


def eer_from_rates(thresholds: np.ndarray, far: np.ndarray, frr: np.ndarray) -> tuple[float, float]:
    """(EER fraction, threshold) at the first sign change of FAR - FRR, linearly interpolated."""
    diff = far - frr
    k = int(np.argmax(diff >= 0))  # diff ends at +1, so a crossing exists
    if diff[k] == 0:
        return float(far[k]), float(thresholds[k])
    t = diff[k - 1] / (diff[k - 1] - diff[k])
    eer = far[k - 1] + t * (far[k] - far[k - 1])
    lo = thresholds[k - 1]
    thr = thresholds[k] if not np.isfinite(lo) else lo + t * (thresholds[k] - lo)
    return float(eer), float(thr)


def eer(genuine, impostor) -> float:
    """Equal error rate as a fraction in [0, 1]."""
    return eer_from_rates(*error_rates(genuine, impostor))[0]


def compute_eer(scores: ScoreSet, kind: str) -> EerResult:
    """Global (pooled threshold) and local (per-writer, averaged) EER for one forgery kind, in percent."""
    if kind not in ("skilled", "random"):
        raise ValueError(f"unknown forgery kind {kind!r}")
    if not scores.writers:
        raise EmptyPopulationError("no writers scored")
    thresholds, far, frr = error_rates(scores.population("genuine"), scores.population(kind))
    e_global, thr = eer_from_rates(thresholds, far, frr)
    local = [eer(scores.population("genuine", w), scores.population(kind, w)) for w in scores.writers]
    return EerResult(100.0 * e_global, 100.0 * float(np.mean(local)), thr, thresholds, far, frr)


@dataclass
class WriterData:
    genuine: list[int]  # indices into the evaluated sequence list, acquisition order
    forged: list[int]


def group_test_set(seqs: Sequence[FeatureSequence]) -> dict[int, WriterData]:
    out: dict[int, WriterData] = {}
    for i, s in enumerate(seqs):
        wd = out.setdefault(s.writer_id, WriterData([], []))
        (wd.genuine if s.label is Label.GENUINE else wd.forged).append(i)
    for wd in out.values():
        wd.genuine.sort(key=lambda i: seqs[i].session)  # stable: keeps acquisition order within a session
    return out


@dataclass
class EvalResult:
    scores: ScoreSet
    skilled: EerResult
    random: EerResult
    protocol: Protocol
    scope: Scope
    method: str


def embedding_distance(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.linalg.norm(u - v))


def dtw_pair_distance(a: FeatureSequence, b: FeatureSequence) -> float:
    return dtw_distance(a, b)[0]


def score_writers(
    items: Sequence,
    seqs: Sequence[FeatureSequence],
    distance: Callable,
    protocol: Protocol = Protocol.FOUR_VS_ONE,
    scope: Scope = Scope.ACROSS,
    random_cap: int = RANDOM_CAP,
    seed: int = 0,
    threads: int = 1,
) -> ScoreSet:
    """Score every test writer's genuine, skilled and random-forgery queries.

    ``items[i]`` is what ``distance`` compares for ``seqs[i]`` (an embedding or
    the sequence itself). Random forgeries are genuine traces of the other
    writers, subsampled to ``random_cap`` per writer.
    """
    groups = group_test_set(seqs)
    rng = make_rng(seed, 2)
    jobs = []  # (writer, role, query index, template indices)
    for w in sorted(groups):
        wd = groups[w]
        sessions = [seqs[i].session for i in wd.genuine]
        if scope is Scope.SINGLE:
            in_scope = lambda i: seqs[i].session == 1  # noqa: E731
        else:
            in_scope = lambda i: True  # noqa: E731
        others = [i for v in sorted(groups) if v != w for i in groups[v].genuine if in_scope(i)]
        if len(others) > random_cap:
            others = sorted(rng.choice(others, size=random_cap, replace=False).tolist())
        forged = [i for i in wd.forged if in_scope(i)]
        for trial in select_templates(sessions, protocol, scope):
            templates = tuple(wd.genuine[t] for t in trial.templates)
            jobs += [(w, "genuine", wd.genuine[q], templates) for q in trial.queries]
            jobs += [(w, "skilled", q, templates) for q in forged]
            jobs += [(w, "random", q, templates) for q in others]

    cache: dict[tuple[int, int], float] = {}

    def pair(i: int, j: int) -> float:
        key = (min(i, j), max(i, j))
        if key not in cache:
            cache[key] = distance(items[key[0]], items[key[1]])
        return cache[key]

    pairs = sorted({(min(q, t), max(q, t)) for _, _, q, ts in jobs for t in ts}
                   | {(min(a, b), max(a, b)) for _, _, _, ts in jobs for a in ts for b in ts if a < b})
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(lambda ij: distance(items[ij[0]], items[ij[1]]), pairs))
        cache.update(zip(pairs, values))

    out = ScoreSet()
    for w, role, q, templates in jobs:
        out.add(w, role, verify_score(q, templates, pair))
    return out


def evaluate(
    seqs: Sequence[FeatureSequence],
    params=None,
    protocol: Protocol = Protocol.FOUR_VS_ONE,
    scope: Scope = Scope.ACROSS,
    random_cap: int = RANDOM_CAP,
    seed: int = 0,
    threads: int = 1,
    batch_size: int = 16,
) -> EvalResult:
    """Evaluate a trained model (``params``) or, with ``params=None``, the DTW baseline."""
    if params is None:
        items, distance, method = list(seqs), dtw_pair_distance, "dtw"
    else:
        from .model import embed_sequences

        emb = embed_sequences(params, seqs, batch_size)
        emb = emb / np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), 1e-12)
        items, distance, method = list(emb), embedding_distance, "pavenet"
    scores = score_writers(items, seqs, distance, protocol, scope, random_cap, seed, threads)
    return EvalResult(scores, compute_eer(scores, "skilled"), compute_eer(scores, "random"), protocol, scope, method)


def write_scores_csv(result: EvalResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["writer_id", "protocol", "role", "score"])
        for writer in result.scores.writers:
            for role in ROLES:
                for s in result.scores.scores[writer][role]:
                    w.writerow([writer, result.protocol.value, role, repr(s)])


def write_roc_csv(result: EvalResult, path, kinds: Sequence[str] = ("skilled", "random")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "threshold", "FAR", "FRR"])
        for kind in kinds:
            r = getattr(result, kind)
            for t, a, b in zip(r.thresholds, r.far, r.frr):
                w.writerow([kind, repr(float(t)), repr(float(a)), repr(float(b))])


def format_report(result: EvalResult, kinds: Sequence[str] = ("skilled", "random")) -> str:
    lines = [
        f"method: {result.method}",
        f"protocol: {result.protocol.value} {result.scope.value}-session",
        f"writers: {len(result.scores.writers)}",
        "forgery  EER_g/EER_l (%)",
    ]
    for kind in kinds:
        lines.append(f"{kind:<8} {getattr(result, kind).formatted()}")
    return "\n".join(lines) + "\n"


def write_outputs(result: EvalResult, out_dir, kinds: Sequence[str] = ("skilled", "random")) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.txt", "scores": out / "scores.csv", "roc": out / "roc.csv"}
    paths["report"].write_text(format_report(result, kinds))
    write_scores_csv(result, paths["scores"])
    write_roc_csv(result, paths["roc"], kinds)
    return paths
