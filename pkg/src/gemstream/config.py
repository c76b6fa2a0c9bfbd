"""Experiment configuration: one JSON document, validated before anything runs.

Example::

    {
      "stream":  {"n_splits": 10, "drift_rate": 0.8},
      "model":   {"hidden_dim": 16},
      "train":   {"epochs_d0": 50, "epochs_per_split": 10},
      "qp":      {"tolerance": 1e-10},
      "methods": [{"kind": "NewData"}, {"kind": "OGem", "sampling": "random"}],
      "seeds":   [0, 1, 2],
      "out_dir": "runs/default"
    }

Only ``stream`` is always required; ``run`` also needs ``methods`` and
``out_dir``.  Omitted fields take their defaults.  Run seed ``s`` uses stream
seed ``stream.seed + s`` and training seed ``s``.  ``GEMSTREAM_SEED``
replaces the seed list with that single seed.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import MISSING, asdict, dataclass, fields, replace
from pathlib import Path

from .continual import MethodSpec, TrainConfig
from .errors import ConfigError, GemStreamError
from .model import Architecture
from .qp import QpConfig
from .stream import StreamSpec

SEED_ENV = "GEMSTREAM_SEED"
TOP_LEVEL = ("stream", "model", "train", "qp", "methods", "seeds", "out_dir")
DEFAULT_HIDDEN = 16


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamSpec
    hidden_dim: int = DEFAULT_HIDDEN
    train: TrainConfig = TrainConfig()
    qp: QpConfig = QpConfig()
    methods: tuple = ()
    seeds: tuple = (0,)
    out_dir: str | None = None

    def arch(self) -> Architecture:
        return Architecture(self.stream.input_dim, self.hidden_dim, self.stream.class_count)

    def stream_for(self, seed: int) -> StreamSpec:
        return replace(self.stream, seed=self.stream.seed + seed)

    def train_for(self, seed: int) -> TrainConfig:
        return replace(self.train, seed=seed)

    def normalized(self) -> dict:
        """Every field spelled out, defaults included; stable for hashing."""
        return {
            "stream": self.stream.to_dict(),
            "model": {"hidden_dim": self.hidden_dim},
            "train": {k: v for k, v in asdict(self.train).items() if k != "seed"},
            "qp": asdict(self.qp),
            "methods": [asdict(m) for m in self.methods],
            "seeds": list(self.seeds),
        }

    def config_hash(self) -> str:
        """sha256 over the normalized config; the output directory is not part of it."""
        text = json.dumps(self.normalized(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


# fields whose default is None (or absent) and so say nothing about their type
OPTIONAL_TYPES = {
    "kind": str,
    "refs_per_step": int,
    "memory_batch_size": int,
    "reg_lambda": float,
    "label": str,
}


def _type_ok(value, want) -> bool:
    if isinstance(value, bool):
        return want is bool
    if want is float:
        return isinstance(value, (int, float))
    return isinstance(value, want)


def _check_types(cls, data: dict, where: str) -> None:
    """Values must match the type of the field's default (ints accepted for floats)."""
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.default is None or f.default is MISSING:
            want = OPTIONAL_TYPES.get(f.name)
            if want is None or value is None:
                continue
        else:
            want = type(f.default)
        if not _type_ok(value, want):
            raise ConfigError(f"'{where}.{f.name}' must be {want.__name__}, got {value!r}")


def _section(raw: dict, key: str, cls, skip=()):
    data = raw.get(key, {})
    if not isinstance(data, dict):
        raise ConfigError(f"'{key}' must be an object")
    allowed = {f.name for f in fields(cls)} - set(skip)
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{key}': {', '.join(unknown)}")
    _check_types(cls, data, key)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{key}': {exc}") from exc


def _methods(raw) -> tuple:
    if not isinstance(raw, list) or not raw:
        raise ConfigError("'methods' must be a non-empty list")
    allowed = {f.name for f in fields(MethodSpec)}
    out = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "kind" not in item:
            raise ConfigError(f"methods[{i}] needs a 'kind'")
        unknown = sorted(set(item) - allowed)
        if unknown:
            raise ConfigError(f"unknown key(s) in methods[{i}]: {', '.join(unknown)}")
        _check_types(MethodSpec, item, f"methods[{i}]")
        try:
            out.append(MethodSpec(**item))
        except (TypeError, GemStreamError) as exc:
            raise ConfigError(f"invalid methods[{i}]: {exc}") from exc
    names = [m.name for m in out]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError(f"duplicate method names {dupes}; set 'label' to tell them apart")
    return tuple(out)


def _seeds(raw) -> tuple:
    if not isinstance(raw, list) or not raw or not all(
        isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in raw
    ):
        raise ConfigError("'seeds' must be a non-empty list of non-negative integers")
    if len(set(raw)) != len(raw):
        raise ConfigError("'seeds' has duplicates")
    return tuple(raw)


def env_seed(environ=None) -> int | None:
    value = (os.environ if environ is None else environ).get(SEED_ENV)
    if value is None or value == "":
        return None
    try:
        seed = int(value)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {value!r}") from None
    if seed < 0:
        raise ConfigError(f"{SEED_ENV} must be non-negative")
    return seed


def parse_config(raw, require=("stream",), environ=None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    for key in require:
        if key not in raw:
            raise ConfigError(f"missing required key '{key}'")

    stream = _section(raw, "stream", StreamSpec)
    try:
        stream.validate()
    except GemStreamError as exc:
        raise ConfigError(f"invalid 'stream': {exc}") from exc

    model = raw.get("model", {})
    if not isinstance(model, dict) or set(model) - {"hidden_dim"}:
        raise ConfigError("'model' accepts only 'hidden_dim'")
    hidden = model.get("hidden_dim", DEFAULT_HIDDEN)
    if not isinstance(hidden, int) or isinstance(hidden, bool) or hidden < 0:
        raise ConfigError("'model.hidden_dim' must be a non-negative integer")

    train = _section(raw, "train", TrainConfig, skip=("seed",))
    qp = _section(raw, "qp", QpConfig)
    methods = _methods(raw["methods"]) if "methods" in raw else ()
    seeds = _seeds(raw.get("seeds", [0]))
    override = env_seed(environ)
    if override is not None:
        seeds = (override,)

    out_dir = raw.get("out_dir")
    if out_dir is not None and (not isinstance(out_dir, str) or not out_dir):
        raise ConfigError("'out_dir' must be a non-empty string")
    return ExperimentConfig(stream, hidden, train, qp, methods, seeds, out_dir)


def load_config(path, require=("stream",), environ=None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(raw, require, environ)
