"""Online continual-learning protocol and the methods compared under it.

A run first trains a seed model M0 on D0 for ``epochs_d0`` epochs, then
visits the splits D1..DN in order for ``epochs_per_split`` epochs each.
Methods differ only in what they train on and how they turn a mini-batch
into an update direction:

* ``AllData``  retrains from scratch on D0..Dn at every split
* ``NewData``  fine-tunes on Dn with plain SGD
* ``OGem``     fine-tunes on Dn with gradients projected against replayed
  memory gradients (single relaxed constraint or full multi-constraint QP)
* ``Ewc`` / ``Mas``  fine-tune on Dn with a quadratic penalty whose weights
  are estimated from the episodic memory at each split boundary

Validation accuracy is logged after every epoch plus a summary row at the
end of each split.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import memory as mem
from .errors import InvalidSpec, MissingImportance
from .model import (
    Architecture,
    Batch,
    Params,
    accuracy,
    gradient,
    init_params,
    per_sample_gradients,
    per_sample_output_norm_gradients,
    sgd_step,
)
from .qp import QpConfig, project_multi, project_single
from .stream import Stream

METHOD_KINDS = ("AllData", "NewData", "OGem", "Ewc", "Mas")
CSV_COLUMNS = ["split", "epoch", "method", "val_acc", "val_err", "cum_steps", "cum_wall_s"]
SUMMARY_EPOCH = "end"

# Penalty strengths for the regularisation baselines.  EWC's Fisher diagonal
# and MAS's output-sensitivity live on different scales.  Both were picked on
# held-out stream seeds (best median error among settings that never diverged).
DEFAULT_LAMBDA = {"Ewc": 200.0, "Mas": 2.0}

# Rows per replayed memory gradient; equal to the default buffer capacity so a
# reference gradient summarises roughly the whole episodic memory.
DEFAULT_MEMORY_BATCH = 1_000


@dataclass(frozen=True)
class MethodSpec:
    kind: str
    constraint_mode: str = "single"
    refs_per_step: int | None = None
    candidate_pool: int = 8
    sampling: str = "selective"
    slack: float = 0.0
    reg_lambda: float | None = None
    importance_samples: int = 200
    memory_batch_size: int | None = None
    label: str | None = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise InvalidSpec(f"unknown method kind {self.kind!r}; expected one of {METHOD_KINDS}")
        if self.constraint_mode not in ("single", "multi"):
            raise InvalidSpec("constraint_mode must be 'single' or 'multi'")
        if self.sampling not in ("random", "selective"):
            raise InvalidSpec("sampling must be 'random' or 'selective'")
        if self.candidate_pool < 1 or self.importance_samples < 1:
            raise InvalidSpec("candidate_pool and importance_samples must be positive")
        if self.refs_per_step is not None and self.refs_per_step < 1:
            raise InvalidSpec("refs_per_step must be positive")
        if self.constraint_mode == "single" and self.refs_per_step not in (None, 1):
            raise InvalidSpec("single-constraint mode uses exactly one reference per step")
        if self.memory_batch_size is not None and self.memory_batch_size < 1:
            raise InvalidSpec("memory_batch_size must be positive")
        if self.slack < 0:
            raise InvalidSpec("slack must be non-negative")
        if self.reg_lambda is not None and self.reg_lambda < 0:
            raise InvalidSpec("reg_lambda must be non-negative")

    @property
    def k(self) -> int:
        if self.refs_per_step is not None:
            return self.refs_per_step
        return 1 if self.constraint_mode == "single" else 3

    @property
    def lam(self) -> float:
        if self.reg_lambda is not None:
            return self.reg_lambda
        return DEFAULT_LAMBDA.get(self.kind, 0.0)

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "OGem":
            suffix = "" if self.constraint_mode == "single" else "-multi"
            return f"OGem-{self.sampling}{suffix}"
        return self.kind


@dataclass(frozen=True)
class TrainConfig:
    epochs_d0: int = 50
    epochs_per_split: int = 10
    batch_size: int = 32
    lr: float = 0.05
    memory_capacity: int = 1_000
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs_d0", "epochs_per_split", "batch_size", "memory_capacity"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be positive")
        if not self.lr > 0:
            raise InvalidSpec("lr must be positive")


@dataclass
class MetricsRow:
    split: int
    epoch: int | str
    method: str
    val_acc: float
    cum_steps: int
    cum_wall_s: float

    @property
    def val_err(self) -> float:
        return 1.0 - self.val_acc

    @property
    def is_summary(self) -> bool:
        return self.epoch == SUMMARY_EPOCH


@dataclass
class MetricsLog:
    method: str
    rows: list = field(default_factory=list)
    unprojected_steps: int = 0

    def epoch_rows(self):
        return [r for r in self.rows if not r.is_summary]

    def summary_rows(self):
        return [r for r in self.rows if r.is_summary]

    def final(self) -> MetricsRow:
        return self.summary_rows()[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(
                [
                    r.split,
                    r.epoch,
                    r.method,
                    f"{r.val_acc:.6g}",
                    f"{r.val_err:.6g}",
                    r.cum_steps,
                    f"{r.cum_wall_s:.6g}",
                ]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsLog":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        rows = []
        for rec in reader:
            epoch = rec["epoch"]
            rows.append(
                MetricsRow(
                    int(rec["split"]),
                    epoch if epoch == SUMMARY_EPOCH else int(epoch),
                    rec["method"],
                    float(rec["val_acc"]),
                    int(rec["cum_steps"]),
                    float(rec["cum_wall_s"]),
                )
            )
        method = rows[0].method if rows else ""
        return cls(method, rows)


@dataclass
class TrainerState:
    params: Params
    buffer: mem.MemoryBuffer
    rng: np.random.Generator
    last_projected: np.ndarray | None = None
    importance: np.ndarray | None = None
    anchor: np.ndarray | None = None
    step: int = 0
    unprojected_steps: int = 0


def steps_per_epoch(n_rows: int, batch_size: int) -> int:
    return math.ceil(n_rows / batch_size)


def seed_steps(d0_size: int, cfg: TrainConfig) -> int:
    return cfg.epochs_d0 * steps_per_epoch(d0_size, cfg.batch_size)


def expected_cum_steps(kind: str, d0_size: int, split_sizes, cfg: TrainConfig) -> list[int]:
    """Cumulative SGD steps at the end of the seed phase and of every split."""
    out = [seed_steps(d0_size, cfg)]
    seen = d0_size
    for n, size in enumerate(split_sizes, start=1):
        seen += size
        if kind == "AllData":
            epochs = cfg.epochs_d0 + n * cfg.epochs_per_split
            out.append(out[-1] + epochs * steps_per_epoch(seen, cfg.batch_size))
        else:
            out.append(out[-1] + cfg.epochs_per_split * steps_per_epoch(size, cfg.batch_size))
    return out


def post_seed_step_ratio(d0_size: int, split_sizes, cfg: TrainConfig) -> float:
    """Incremental-method steps after the seed phase over AllData's."""
    inc = expected_cum_steps("OGem", d0_size, split_sizes, cfg)
    full = expected_cum_steps("AllData", d0_size, split_sizes, cfg)
    return (inc[-1] - inc[0]) / (full[-1] - full[0])


def _run_epochs(state, data, epochs, cfg, step_fn, on_epoch=None):
    n = len(data)
    for epoch in range(1, epochs + 1):
        perm = state.rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            step_fn(state, data.take(perm[start:start + cfg.batch_size]), epoch)
            state.step += 1
        if on_epoch is not None:
            on_epoch(state, epoch)
    return state


def _sgd(cfg):
    def step(state, batch, epoch):
        state.params = sgd_step(state.params, gradient(state.params, batch), cfg.lr)

    return step


def train_seed(arch: Architecture, d0: Batch, cfg: TrainConfig, rng=None, on_epoch=None) -> TrainerState:
    """Train M0 on D0 and fill the episodic memory from it."""
    if len(d0) == 0:
        raise InvalidSpec("D0 must be non-empty")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    state = TrainerState(
        params=init_params(arch, int(rng.integers(2**63))),
        buffer=mem.MemoryBuffer(cfg.memory_capacity),
        rng=rng,
    )
    state.buffer.offer_batch(d0, split_id=0, step=0, rng=rng)
    return _run_epochs(state, d0, cfg.epochs_d0, cfg, _sgd(cfg), on_epoch)


def _memory_gradient(state, size):
    return gradient(state.params, state.buffer.sample_batch(size, state.rng))


def _choose_refs(state, g, method: MethodSpec, cfg: TrainConfig) -> list[np.ndarray]:
    size = method.memory_batch_size or DEFAULT_MEMORY_BATCH
    if method.sampling == "random":
        return [_memory_gradient(state, size) for _ in range(method.k)]

    candidates = [_memory_gradient(state, size) for _ in range(method.candidate_pool)]
    direction = state.last_projected
    if direction is None or not np.any(direction):
        direction = g
    scores = mem.selective_scores(direction, np.stack(candidates))
    return mem.sample_selective(method.k, scores, candidates, state.rng)


def ogem_step(
    state: TrainerState,
    new_batch: Batch,
    method: MethodSpec,
    cfg: TrainConfig,
    qp_cfg: QpConfig | None = None,
    split_id: int = 0,
    offer: bool = True,
) -> TrainerState:
    """One projected SGD update; optionally offers the batch to memory afterwards."""
    g = gradient(state.params, new_batch)
    if len(state.buffer) == 0:
        omega = g
        state.unprojected_steps += 1
    else:
        qp_cfg = qp_cfg or QpConfig(slack=method.slack)
        refs = _choose_refs(state, g, method, cfg)
        if method.constraint_mode == "single":
            omega = project_single(g, refs[0], qp_cfg)
        else:
            omega = project_multi(g, refs, qp_cfg)
    state.params = sgd_step(state.params, omega, cfg.lr)
    state.last_projected = omega
    if offer:
        state.buffer.offer_batch(new_batch, split_id, state.step, state.rng)
    return state


def _rows(data: Batch, sample_count, rng):
    if sample_count is None or sample_count == len(data):
        return data
    rng = np.random.default_rng(0) if rng is None else rng
    return data.take(rng.integers(len(data), size=sample_count))


def ewc_importance(params: Params, data: Batch, sample_count=None, rng=None) -> np.ndarray:
    """Diagonal empirical Fisher: mean squared per-sample loss gradient.

    With ``sample_count=None`` every row of ``data`` is used once; otherwise
    ``sample_count`` rows are drawn with replacement.
    """
    if len(data) == 0:
        raise InvalidSpec("importance needs data")
    G = per_sample_gradients(params, _rows(data, sample_count, rng))
    return np.mean(G * G, axis=0)


def mas_importance(params: Params, data: Batch, sample_count=None, rng=None) -> np.ndarray:
    """Mean absolute gradient of the squared logit norm, per parameter."""
    if len(data) == 0:
        raise InvalidSpec("importance needs data")
    G = per_sample_output_norm_gradients(params, _rows(data, sample_count, rng).features)
    return np.mean(np.abs(G), axis=0)


def regularized_gradient(state: TrainerState, new_batch: Batch, method: MethodSpec) -> np.ndarray:
    if state.importance is None or state.anchor is None:
        raise MissingImportance("importance and anchor must be set before regularised training")
    g = gradient(state.params, new_batch)
    if method.lam == 0:
        return g
    return g + method.lam * state.importance * (state.params.values - state.anchor)


def refresh_importance(state: TrainerState, method: MethodSpec) -> None:
    """Re-estimate importance from the memory buffer and re-anchor at theta."""
    entries = state.buffer.sample_random(method.importance_samples, state.rng)
    data = mem.entries_to_batch(entries)
    fn = ewc_importance if method.kind == "Ewc" else mas_importance
    state.importance = fn(state.params, data)
    state.anchor = state.params.values.copy()


def run_method(
    method: MethodSpec,
    stream: Stream,
    arch: Architecture,
    cfg: TrainConfig,
    qp_cfg: QpConfig | None = None,
) -> MetricsLog:
    log = MetricsLog(method.name)
    clock = {"start": time.perf_counter()}
    val = stream.validation

    def record(state, split, epoch):
        log.rows.append(
            MetricsRow(
                split,
                epoch,
                method.name,
                accuracy(state.params, val),
                state.step,
                time.perf_counter() - clock["start"],
            )
        )

    def epoch_logger(split):
        return lambda state, epoch: record(state, split, epoch)

    rng = np.random.default_rng(cfg.seed)
    state = train_seed(arch, stream.d0, cfg, rng=rng, on_epoch=epoch_logger(0))
    record(state, 0, SUMMARY_EPOCH)

    if method.kind == "AllData":
        init_seed = int(rng.integers(2**63))
        seen = [stream.d0]
        total_steps = state.step
        for n, split in enumerate(stream.splits, start=1):
            seen.append(split)
            data = Batch.concat(seen)
            fresh = TrainerState(init_params(arch, init_seed), state.buffer, rng, step=total_steps)
            epochs = cfg.epochs_d0 + n * cfg.epochs_per_split
            _run_epochs(fresh, data, epochs, cfg, _sgd(cfg), epoch_logger(n))
            total_steps = fresh.step
            record(fresh, n, SUMMARY_EPOCH)
        return log

    for n, split in enumerate(stream.splits, start=1):
        if method.kind in ("Ewc", "Mas"):
            refresh_importance(state, method)

        def step(state, batch, epoch, n=n):
            first_pass = epoch == 1
            if method.kind == "OGem":
                ogem_step(state, batch, method, cfg, qp_cfg, split_id=n, offer=first_pass)
                return
            if method.kind == "NewData":
                direction = gradient(state.params, batch)
            else:
                direction = regularized_gradient(state, batch, method)
            state.params = sgd_step(state.params, direction, cfg.lr)
            if first_pass:
                state.buffer.offer_batch(batch, n, state.step, state.rng)

        _run_epochs(state, split, cfg.epochs_per_split, cfg, step, epoch_logger(n))
        record(state, n, SUMMARY_EPOCH)

    log.unprojected_steps = state.unprojected_steps
    return log


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
