"""Trace data model and the on-disk text formats.

Trace file::

    x y p t pen
    12.5 -3.0 0.41 0 1
    ...

Manifest file, one entry per line (``#`` starts a comment, ``# seed N`` records
the generator seed)::

    traces/w000_s1_g00.txt 0 1 genuine
    traces/w000_s1_f00.txt 0 1 forgery 7

The optional fifth column names the writer who actually produced a forgery.
Paths are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import DuplicateEntryError, InvariantError, MissingFileError, ParseError

TRACE_HEADER = "x y p t pen"


class Label(enum.Enum):
    GENUINE = "genuine"
    SKILLED_FORGERY = "forgery"


@dataclass(frozen=True)
class PenSample:
    x: float
    y: float
    p: float
    t: float
    pen_down: bool


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class RawTrace:
    """One handwritten digit string as parallel per-sample arrays."""

    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    t: np.ndarray
    pen_down: np.ndarray
    writer_id: int = 0
    session: int = 1
    label: Label = Label.GENUINE
    content: str = ""
    producer_id: Optional[int] = None

    def __post_init__(self):
        for name in ("x", "y", "p", "t"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.float64))
        object.__setattr__(self, "pen_down", _frozen(self.pen_down, bool))
        n = len(self.x)
        if any(len(getattr(self, k)) != n for k in ("y", "p", "t", "pen_down")):
            raise InvariantError("sample arrays differ in length")
        if n < 2:
            raise InvariantError(f"trace needs at least 2 samples, got {n}")
        if np.any(np.diff(self.t) < 0):
            raise InvariantError("timestamps decrease")
        if np.any(self.p < 0):
            raise InvariantError("negative pressure")
        if not self.pen_down.any():
            raise InvariantError("trace has no pen-down sample")
        if self.session not in (1, 2):
            raise InvariantError(f"session must be 1 or 2, got {self.session}")

    def __len__(self) -> int:
        return len(self.x)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RawTrace):
            return NotImplemented
        return (
            all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("x", "y", "p", "t", "pen_down"))
            and (self.writer_id, self.session, self.label, self.content, self.producer_id)
            == (other.writer_id, other.session, other.label, other.content, other.producer_id)
        )

    @property
    def samples(self) -> list[PenSample]:
        return [
            PenSample(float(x), float(y), float(p), float(t), bool(d))
            for x, y, p, t, d in zip(self.x, self.y, self.p, self.t, self.pen_down)
        ]

    @classmethod
    def from_samples(cls, samples: Iterable[PenSample], **meta) -> "RawTrace":
        samples = list(samples)
        cols = {k: [getattr(s, k) for s in samples] for k in ("x", "y", "p", "t", "pen_down")}
        return cls(**cols, **meta)

    def replace(self, **changes) -> "RawTrace":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return RawTrace(**fields)


def save_trace(trace: RawTrace, path) -> None:
    lines = [TRACE_HEADER]
    for x, y, p, t, d in zip(trace.x, trace.y, trace.p, trace.t, trace.pen_down):
        lines.append(f"{float(x)!r} {float(y)!r} {float(p)!r} {float(t)!r} {int(d)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trace(path, **meta) -> RawTrace:
    """Read a trace file. ``meta`` fills writer/session/label fields."""
    path = Path(path)
    text = path.read_text(encoding="utf-8").splitlines()
    if not text or text[0].split() != TRACE_HEADER.split():
        raise ParseError(f"{path}: missing header line {TRACE_HEADER!r}")
    rows = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ParseError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            x, y, p, t = (float(v) for v in parts[:4])
            pen = int(parts[4])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if pen not in (0, 1):
            raise ParseError(f"{path}:{lineno}: pen must be 0 or 1")
        rows.append((x, y, p, t, pen))
    if not rows:
        raise InvariantError(f"{path}: trace needs at least 2 samples, got 0")
    arr = np.array(rows, dtype=np.float64)
    return RawTrace(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4] > 0, **meta)


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    writer_id: int
    session: int
    label: Label
    producer_id: Optional[int] = None
    content: str = ""

    def load(self) -> RawTrace:
        return load_trace(
            self.path,
            writer_id=self.writer_id,
            session=self.session,
            label=self.label,
            producer_id=self.producer_id,
            content=self.content,
        )


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...] = ()
    seed: Optional[int] = None
    root: Path = field(default=Path("."))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def writers(self) -> list[int]:
        return sorted({e.writer_id for e in self.entries})

    def counts(self) -> Counter:
        """Entry counts keyed by (writer_id, session, label)."""
        return Counter((e.writer_id, e.session, e.label) for e in self.entries)

    def subset(self, writers: Iterable[int]) -> "DatasetManifest":
        keep = set(writers)
        return DatasetManifest(tuple(e for e in self.entries if e.writer_id in keep), self.seed, self.root)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    root = path.parent
    entries: list[ManifestEntry] = []
    seen: set[Path] = set()
    seed = None
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "seed":
                seed = int(parts[1])
            continue
        parts = line.split()
        if len(parts) not in (4, 5, 6):
            raise ParseError(f"{path}:{lineno}: expected 'path writer_id session label [producer|-] [content]'")
        try:
            writer, session = int(parts[1]), int(parts[2])
            label = Label(parts[3])
            producer = int(parts[4]) if len(parts) >= 5 and parts[4] != "-" else None
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        content = parts[5] if len(parts) == 6 else ""
        if content and not content.isdigit():
            raise ParseError(f"{path}:{lineno}: content must be digits, got {content!r}")
        file = (root / parts[0]).resolve()
        if file in seen:
            raise DuplicateEntryError(f"{path}:{lineno}: {parts[0]} listed twice")
        if not file.is_file():
            raise MissingFileError(f"{path}:{lineno}: {parts[0]} does not exist")
        seen.add(file)
        entries.append(ManifestEntry(file, writer, session, label, producer, content))
    writers = sorted({e.writer_id for e in entries})
    if writers and writers != list(range(writers[0], writers[-1] + 1)):
        raise InvariantError(f"{path}: writer ids are not contiguous")
    return DatasetManifest(tuple(entries), seed, root)


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    lines = []
    if manifest.seed is not None:
        lines.append(f"# seed {manifest.seed}")
    for e in manifest.entries:
        rel = Path(e.path)
        if rel.is_absolute():
            rel = rel.relative_to(path.parent.resolve())
        line = f"{rel.as_posix()} {e.writer_id} {e.session} {e.label.value}"
        if e.producer_id is not None or e.content:
            line += f" {'-' if e.producer_id is None else e.producer_id}"
        if e.content:
            line += f" {e.content}"
        lines.append(line)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def validate_pairing(manifest: DatasetManifest) -> list[str]:
    """Warn for every writer whose genuine and skilled-forgery counts differ."""
    genuine = Counter()
    forged = Counter()
    for e in manifest.entries:
        (genuine if e.label is Label.GENUINE else forged)[e.writer_id] += 1
    warnings = []
    for w in manifest.writers:
        if genuine[w] != forged[w]:
            warnings.append(f"writer {w}: {genuine[w]} genuine vs {forged[w]} skilled forgeries")
    return warnings
