"""Synthetic drifting classification streams.

Class ``c`` is a Gaussian blob whose centre sits on a circle of radius 2 at
angle ``2*pi*c/C + drift_rate * t``.  ``t`` in [0, 1] is the position in the
overall stream: the seed set D0 occupies the earliest stretch and each split
D1..DN the following windows in order, so later data is rotated further.  The
validation set samples ``t`` over the whole range and is shared by every
method trained on the stream.

Export format (text)::

    # gemstream-stream v1 input_dim=<d> class_count=<C> n_splits=<N> columns=part,t,label,x0..x<d-1>
    <part>,<t>,<label>,<x0>,...

``part`` is ``d0``, ``s1``..``sN`` or ``val``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import InvalidSpec, TooFewSamples
from .model import Batch

STREAM_HEADER = "# gemstream-stream v1"
RADIUS = 2.0


@dataclass(frozen=True)
class StreamSpec:
    input_dim: int = 2
    class_count: int = 4
    d0_size: int = 4_000
    increment_size: int = 2_000
    n_splits: int = 10
    drift_rate: float = 0.8
    cluster_spread: float = 0.55
    val_size: int = 2_000
    seed: int = 0

    def validate(self) -> "StreamSpec":
        for name in ("class_count", "d0_size", "increment_size", "val_size"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be at least 1")
        if self.input_dim < 2:
            raise InvalidSpec("input_dim must be at least 2 (class centres live on a circle)")
        if self.class_count < 2:
            raise InvalidSpec("class_count must be at least 2")
        if self.n_splits < 0:
            raise InvalidSpec("n_splits must be non-negative")
        if self.n_splits > self.increment_size:
            raise InvalidSpec("n_splits cannot exceed increment_size")
        if not self.drift_rate >= 0:
            raise InvalidSpec("drift_rate must be non-negative")
        if not self.cluster_spread > 0:
            raise InvalidSpec("cluster_spread must be positive")
        return self

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def to_dict(self):
        return asdict(self)


@dataclass
class Stream:
    d0: Batch
    splits: list
    validation: Batch

    @property
    def n_splits(self):
        return len(self.splits)


def even_sizes(total: int, n: int) -> list[int]:
    """Chunk sizes differing by at most one, remainder to the earliest chunks."""
    q, r = divmod(total, n)
    return [q + 1 if i < r else q for i in range(n)]


def portion_windows(spec: StreamSpec) -> list[tuple[float, float]]:
    """``t`` windows of D0 followed by each split, in stream order."""
    inc = spec.increment_size if spec.n_splits > 0 else 0
    total = spec.d0_size + inc
    edges = [0, spec.d0_size]
    if spec.n_splits:
        for size in even_sizes(spec.increment_size, spec.n_splits):
            edges.append(edges[-1] + size)
    return [(a / total, b / total) for a, b in zip(edges[:-1], edges[1:])]


def class_angle(spec: StreamSpec, label, t):
    return 2.0 * math.pi * np.asarray(label) / spec.class_count + spec.drift_rate * np.asarray(t)


def class_mean(spec: StreamSpec, label: int, t: float) -> np.ndarray:
    mean = np.zeros(spec.input_dim)
    ang = float(class_angle(spec, label, t))
    mean[0], mean[1] = RADIUS * math.cos(ang), RADIUS * math.sin(ang)
    return mean


def _draw(spec: StreamSpec, n: int, lo: float, hi: float, rng) -> Batch:
    labels = rng.permutation(np.arange(n) % spec.class_count)
    t = rng.uniform(lo, hi, size=n)
    ang = class_angle(spec, labels, t)
    X = spec.cluster_spread * rng.standard_normal((n, spec.input_dim))
    X[:, 0] += RADIUS * np.cos(ang)
    X[:, 1] += RADIUS * np.sin(ang)
    return Batch(X, labels, t)


def generate_stream(spec: StreamSpec) -> Stream:
    spec.validate()
    d0_seq, inc_seq, val_seq = np.random.SeedSequence(spec.seed).spawn(3)
    windows = portion_windows(spec)

    d0 = _draw(spec, spec.d0_size, *windows[0], np.random.default_rng(d0_seq))
    splits = []
    if spec.n_splits:
        rng = np.random.default_rng(inc_seq)
        sizes = even_sizes(spec.increment_size, spec.n_splits)
        for size, (lo, hi) in zip(sizes, windows[1:]):
            splits.append(_draw(spec, size, lo, hi, rng))
    validation = _draw(spec, spec.val_size, 0.0, 1.0, np.random.default_rng(val_seq))
    return Stream(d0, splits, validation)


def split_even(data: Batch, n: int, seed) -> list[Batch]:
    """Seeded random permutation cut into ``n`` near-equal contiguous chunks."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if len(data) < n:
        raise TooFewSamples(f"cannot split {len(data)} rows into {n} non-empty parts")
    perm = np.random.default_rng(seed).permutation(len(data))
    out, pos = [], 0
    for size in even_sizes(len(data), n):
        out.append(data.take(perm[pos:pos + size]))
        pos += size
    return out


def _parts(stream: Stream):
    yield "d0", stream.d0
    for i, s in enumerate(stream.splits, start=1):
        yield f"s{i}", s
    yield "val", stream.validation


def export_stream(stream: Stream, path, class_count: int) -> None:
    dim = stream.d0.features.shape[1]
    header = (
        f"{STREAM_HEADER} input_dim={dim} class_count={class_count} "
        f"n_splits={stream.n_splits} columns=part,t,label,x0..x{dim - 1}"
    )
    lines = [header]
    for part, batch in _parts(stream):
        t = batch.t if batch.t is not None else np.full(len(batch), np.nan)
        for ti, y, x in zip(t, batch.labels, batch.features):
            lines.append(f"{part},{float(ti)!r},{int(y)},{','.join(repr(float(v)) for v in x)}")
    Path(path).write_text("\n".join(lines) + "\n")


def import_stream(path) -> tuple[Stream, int]:
    """Read an exported stream; returns the stream and its class count."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(STREAM_HEADER):
        raise InvalidSpec(f"{path}: not a gemstream stream export")
    meta = dict(kv.split("=", 1) for kv in lines[0][len(STREAM_HEADER):].split())
    n_splits = int(meta["n_splits"])
    rows: dict[str, list] = {}
    for line in lines[1:]:
        if line.strip():
            part, rest = line.split(",", 1)
            rows.setdefault(part, []).append([float(v) for v in rest.split(",")])

    def batch(part):
        arr = np.array(rows.get(part, []), dtype=np.float64)
        return Batch(arr[:, 2:], arr[:, 1].astype(np.int64), arr[:, 0])

    stream = Stream(batch("d0"), [batch(f"s{i}") for i in range(1, n_splits + 1)], batch("val"))
    return stream, int(meta["class_count"])
