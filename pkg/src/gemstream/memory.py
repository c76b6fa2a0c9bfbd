"""Episodic memory: a reservoir-sampled buffer of past labelled samples.

The buffer keeps a uniform sample of everything ever offered to it, so it
needs no notion of task boundaries.  Replay draws come either uniformly or
weighted by how badly a candidate's gradient disagrees with the current
update direction (``1 - cosine``).

Snapshot format (text, one record per line)::

    gemstream-buffer v1 capacity=<int> seen=<int> input_dim=<int>
    <split_id>,<label>,<insert_step>,<x0>,<x1>,...

Floats are written with ``repr`` and round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyBuffer, InvalidSpec, ZeroNormReference
from .model import Batch

BUFFER_HEADER = "gemstream-buffer v1"


@dataclass(frozen=True)
class MemoryEntry:
    features: np.ndarray
    label: int
    split_id: int
    insert_step: int


@dataclass
class MemoryBuffer:
    capacity: int
    entries: list = field(default_factory=list)
    seen: int = 0
    _cache: Batch | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise InvalidSpec("buffer capacity must be at least 1")

    def __len__(self):
        return len(self.entries)

    def insert(self, entry: MemoryEntry, rng: np.random.Generator) -> "MemoryBuffer":
        """Offer one entry (reservoir sampling over the whole stream).

        RNG draw order, relied on by the snapshot tests: below capacity no
        draw is made; at capacity one uniform ``u`` decides acceptance
        (``u < capacity / seen'``) and, only if accepted, one integer picks
        the slot to overwrite.
        """
        self.seen += 1
        if len(self.entries) < self.capacity:
            self.entries.append(entry)
            self._cache = None
        elif rng.random() < self.capacity / self.seen:
            self.entries[int(rng.integers(len(self.entries)))] = entry
            self._cache = None
        return self

    def offer_batch(self, batch: Batch, split_id: int, step: int, rng) -> None:
        for x, y in zip(batch.features, batch.labels):
            self.insert(MemoryEntry(x.copy(), int(y), split_id, step), rng)

    def sample_random(self, k: int, rng: np.random.Generator) -> list:
        return sample_random(self, k, rng)

    def as_batch(self) -> Batch:
        """All stored samples as one batch (cached until the next change)."""
        if self._cache is None:
            if not self.entries:
                raise EmptyBuffer("buffer is empty")
            self._cache = entries_to_batch(self.entries)
        return self._cache

    def sample_batch(self, k: int, rng: np.random.Generator) -> Batch:
        """Same draws as :func:`sample_random`, returned as a batch."""
        if len(self) == 0:
            raise EmptyBuffer("cannot sample from an empty buffer")
        if k < 1:
            raise ValueError("k must be at least 1")
        return self.as_batch().take(rng.integers(len(self), size=k))

    def save(self, path) -> None:
        dim = self.entries[0].features.shape[0] if self.entries else 0
        lines = [f"{BUFFER_HEADER} capacity={self.capacity} seen={self.seen} input_dim={dim}"]
        for e in self.entries:
            feats = ",".join(repr(float(x)) for x in e.features)
            lines.append(f"{e.split_id},{e.label},{e.insert_step},{feats}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "MemoryBuffer":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith(BUFFER_HEADER):
            raise InvalidSpec(f"{path}: not a gemstream buffer snapshot")
        meta = dict(kv.split("=") for kv in lines[0][len(BUFFER_HEADER):].split())
        buf = cls(int(meta["capacity"]), seen=int(meta["seen"]))
        for line in lines[1:]:
            if not line.strip():
                continue
            split_id, label, step, *feats = line.split(",")
            buf.entries.append(
                MemoryEntry(np.array([float(x) for x in feats]), int(label), int(split_id), int(step))
            )
        return buf


def entries_to_batch(entries) -> Batch:
    return Batch(
        np.stack([e.features for e in entries]),
        np.array([e.label for e in entries], dtype=np.int64),
    )


def selective_scores(direction, candidate_grads) -> np.ndarray:
    """``1 - cos(direction, candidate)`` per candidate, in [0, 2]."""
    w = np.asarray(direction, dtype=np.float64)
    G = np.atleast_2d(np.asarray(candidate_grads, dtype=np.float64))
    wn = np.linalg.norm(w)
    gn = np.linalg.norm(G, axis=1)
    if wn == 0.0 or np.any(gn == 0.0):
        raise ZeroNormReference("cosine score needs non-zero gradients on both sides")
    cos = (G @ w) / (gn * wn)
    return np.clip(1.0 - cos, 0.0, 2.0)


def sample_random(buffer: MemoryBuffer, k: int, rng: np.random.Generator) -> list:
    """``k`` uniform draws with replacement."""
    if len(buffer) == 0:
        raise EmptyBuffer("cannot sample from an empty buffer")
    if k < 1:
        raise ValueError("k must be at least 1")
    idx = rng.integers(len(buffer), size=k)
    return [buffer.entries[i] for i in idx]


def selection_probabilities(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    total = scores.sum()
    if total <= 0.0:
        return np.full(scores.shape[0], 1.0 / scores.shape[0])
    return scores / total


def sample_selective(k: int, scores, pool, rng: np.random.Generator) -> list:
    """``k`` draws from ``pool`` with replacement, weighted by ``scores``.

    Falls back to uniform when every score is zero.
    """
    if len(pool) == 0:
        raise EmptyBuffer("candidate pool is empty")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] != len(pool):
        raise ValueError(f"{scores.shape[0]} scores for {len(pool)} candidates")
    idx = rng.choice(len(pool), size=k, replace=True, p=selection_probabilities(scores))
    return [pool[i] for i in idx]
