"""RawTrace -> 12-channel time-function feature sequence."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ShapeError
from .traceio import Label, RawTrace

CHANNELS = ("dx", "dy", "v", "theta", "cos", "sin", "dv", "dtheta", "rho", "dv_c", "a", "p")
NUM_CHANNELS = len(CHANNELS)
EPS = 1e-6


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    data: np.ndarray  # (12, L)
    writer_id: int = 0
    session: int = 1
    label: Label = Label.GENUINE
    producer_id: Optional[int] = None
    content: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != NUM_CHANNELS:
            raise ShapeError(f"expected ({NUM_CHANNELS}, L) features, got {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def length(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "FeatureSequence":
        return FeatureSequence(data, self.writer_id, self.session, self.label, self.producer_id, self.content)

    @property
    def producer(self) -> Optional[int]:
        """Writer who physically wrote the trace, if known."""
        if self.label is Label.GENUINE:
            return self.writer_id
        return self.producer_id


def center_scale(trace: RawTrace) -> RawTrace:
    """Move the bounding-box center to the origin and fit into [-1, 1], keeping aspect ratio."""
    x, y = trace.x, trace.y
    cx = (x.max() + x.min()) / 2
    cy = (y.max() + y.min()) / 2
    half = max(x.max() - x.min(), y.max() - y.min()) / 2
    nx, ny = x - cx, y - cy
    if half > 0:
        nx, ny = nx / half, ny / half
    return trace.replace(x=nx, y=ny)


def normalize_pressure(trace: RawTrace) -> RawTrace:
    p = trace.p
    span = p.max() - p.min()
    if span > 0:
        p = (p - p.min()) / span
    else:
        p = np.zeros_like(p)
    return trace.replace(p=p)


def resample_double(trace: RawTrace) -> RawTrace:
    """Cubic-spline interpolation against sample index onto twice as many points."""
    n = len(trace)
    src = np.arange(n, dtype=np.float64)
    dst = np.linspace(0.0, n - 1.0, 2 * n)
    out = {}
    for name in ("x", "y", "p"):
        values = getattr(trace, name)
        out[name] = CubicSpline(src, values)(dst)
    # endpoints must be reproduced exactly, not to spline roundoff
    for name in ("x", "y", "p"):
        values = getattr(trace, name)
        out[name][0], out[name][-1] = values[0], values[-1]
    out["p"] = np.maximum(out["p"], 0.0)
    out["t"] = np.interp(dst, src, trace.t)
    out["pen_down"] = trace.pen_down[np.rint(dst).astype(int)]
    return trace.replace(**out)


def _fdiff(a: np.ndarray) -> np.ndarray:
    d = np.empty_like(a)
    d[:-1] = a[1:] - a[:-1]
    d[-1] = d[-2] if len(a) > 1 else 0.0
    return d


def _wrap(angle: np.ndarray) -> np.ndarray:
    return (angle + np.pi) % (2 * np.pi) - np.pi


def time_functions(trace: RawTrace) -> FeatureSequence:
    dx = _fdiff(trace.x)
    dy = _fdiff(trace.y)
    v = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    dv = _fdiff(v)
    # angle differences are taken on the circle so a crossing of +-pi is not a 2pi jump
    dtheta = _wrap(_fdiff(theta))
    if len(theta) > 1:
        dtheta[-1] = dtheta[-2]
    rho = np.log(np.maximum(v, EPS) / np.maximum(np.abs(dtheta), EPS))
    dv_c = v * dtheta
    a = np.hypot(dv, dv_c)
    data = np.stack([dx, dy, v, theta, np.cos(theta), np.sin(theta), dv, dtheta, rho, dv_c, a, trace.p])
    return FeatureSequence(data, trace.writer_id, trace.session, trace.label, trace.producer_id, trace.content)


def zscore(fs: FeatureSequence) -> FeatureSequence:
    data = fs.data
    mean = data.mean(axis=1, keepdims=True)
    std = data.std(axis=1, keepdims=True)
    const = std[:, 0] <= 1e-12
    std[const] = 1.0
    out = (data - mean) / std
    out[const] = 0.0
    return fs.with_data(out)


def preprocess(trace: RawTrace) -> FeatureSequence:
    """Full pipeline: center/scale, pressure min-max, doubling, time functions, z-score."""
    trace = resample_double(normalize_pressure(center_scale(trace)))
    return zscore(time_functions(trace))


def write_feature_csv(fs: FeatureSequence, path) -> None:
    lines = [",".join(CHANNELS)]
    for row in fs.data.T:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
