"""Experiment configuration: YAML document -> validated dataclasses.

Unknown keys are rejected and every error names the dotted key path, e.g.
``train.learning_rate: must be > 0``.  See README for the full schema.
"""

import dataclasses
import hashlib
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

METHODS = ("cb", "zf", "gnn_pretrained", "gnn_finetuned", "gnn_scratch")
GNN_METHODS = ("gnn_pretrained", "gnn_finetuned", "gnn_scratch")


@dataclass
class Scenario:
    users: int
    aps: int

    def check(self):
        _require(self.users >= 1, "users", "must be >= 1")
        _require(self.aps >= 1, "aps", "must be >= 1")


@dataclass
class SyntheticDomain:
    count: int = 2000
    area_side_m: float = 10.0
    carrier_ghz: float = 3.5
    d_min_m: float = 1.0

    def check(self):
        _require(self.count >= 1, "count", "must be >= 1")
        _require(self.area_side_m > 0, "area_side_m", "must be > 0")
        _require(self.carrier_ghz > 0, "carrier_ghz", "must be > 0")
        _require(self.d_min_m > 0, "d_min_m", "must be > 0")


@dataclass
class MeasuredDomain:
    path: str
    unit_scale: float = 1.0
    # positions kept (strongest first) before forming samples of 3+ users
    top_n: int | None = None
    # samples drawn without replacement for 3+ users; default C(N, 2)
    sample_count: int | None = None

    def check(self):
        _require(self.unit_scale > 0, "unit_scale", "must be > 0")
        _require(self.top_n is None or self.top_n >= 1, "top_n", "must be >= 1")
        _require(self.sample_count is None or self.sample_count >= 1, "sample_count",
                 "must be >= 1")


@dataclass
class TargetDomain:
    measured: MeasuredDomain | None = None
    synthetic: SyntheticDomain | None = None

    def check(self):
        _require((self.measured is None) != (self.synthetic is None), "",
                 "exactly one of 'measured' or 'synthetic' is required")


@dataclass
class DatasetConfig:
    synthetic: SyntheticDomain = field(default_factory=SyntheticDomain)
    target: TargetDomain | None = None
    fractions: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    normalize_gain: bool = True

    def check(self):
        _require(len(self.fractions) == 3 and all(f >= 0 for f in self.fractions)
                 and abs(sum(self.fractions) - 1.0) <= 1e-9,
                 "fractions", "must be three non-negative numbers summing to 1")


@dataclass
class ModelConfig:
    hidden_width: int = 64
    leaky_slope: float = 0.01
    self_inclusive: bool = True

    def check(self):
        _require(self.hidden_width >= 1, "hidden_width", "must be >= 1")
        _require(self.leaky_slope >= 0, "leaky_slope", "must be >= 0")


@dataclass
class TrainSection:
    learning_rate: float = 0.005
    epochs: int = 20
    batch_size: int = 512
    train_snr_db: float = 10.0
    total_power: float = 1.0

    def check(self):
        _require(self.learning_rate > 0, "learning_rate", "must be > 0")
        _require(self.epochs >= 1, "epochs", "must be >= 1")
        _require(self.batch_size >= 1, "batch_size", "must be >= 1")
        _require(self.total_power > 0, "total_power", "must be > 0")


@dataclass
class FinetuneSection:
    learning_rate: float = 0.005
    epochs: int = 20
    batch_size: int = 128
    freeze: int = 4

    def check(self):
        _require(self.learning_rate > 0, "learning_rate", "must be > 0")
        _require(self.epochs >= 1, "epochs", "must be >= 1")
        _require(self.batch_size >= 1, "batch_size", "must be >= 1")
        _require(0 <= self.freeze <= 8, "freeze", "must be in 0..8")


@dataclass
class EvalSection:
    snr_sweep_db: list[float] = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0,
                                                               25.0, 30.0])
    methods: list[str] | None = None
    freeze_sweep: list[int] | None = None
    # "target" or "source"; default is target when one is configured
    domains: list[str] | None = None
    zf_cond_max: float = 1e12

    def check(self):
        snr = self.snr_sweep_db
        _require(len(snr) >= 1, "snr_sweep_db", "must be non-empty")
        _require(all(b > a for a, b in zip(snr, snr[1:])), "snr_sweep_db",
                 "must be strictly increasing")
        if self.methods is not None:
            _require(len(self.methods) >= 1, "methods", "select at least one method")
            for m in self.methods:
                _require(m in METHODS, "methods", f"unknown method {m!r}; choose from {METHODS}")
            _require(len(set(self.methods)) == len(self.methods), "methods", "duplicate method")
        if self.freeze_sweep is not None:
            _require(len(self.freeze_sweep) >= 1, "freeze_sweep", "must be non-empty")
            for l in self.freeze_sweep:
                _require(0 <= l <= 8, "freeze_sweep", f"freeze level {l} not in 0..8")
        if self.domains is not None:
            for d in self.domains:
                _require(d in ("target", "source"), "domains", f"unknown domain {d!r}")
        _require(self.zf_cond_max > 1, "zf_cond_max", "must be > 1")


@dataclass
class ExperimentConfig:
    scenario: Scenario
    dataset: DatasetConfig
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: str = "runs/latest"
    seed: int = 0

    def check(self):
        _require(self.seed >= 0, "seed", "must be >= 0")

    @property
    def has_target(self):
        return self.dataset.target is not None

    @property
    def methods(self):
        if self.eval.methods is not None:
            return list(self.eval.methods)
        if self.has_target:
            return list(METHODS)
        return ["cb", "zf", "gnn_pretrained"]

    @property
    def domains(self):
        if self.eval.domains is not None:
            return list(self.eval.domains)
        return ["target"] if self.has_target else ["source"]

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self, *sections):
        """SHA-256 of the canonical JSON of the whole config or selected sections."""
        doc = self.to_dict()
        if sections:
            doc = {k: doc[k] for k in sections}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


class _CheckFailed(Exception):
    def __init__(self, key, message):
        self.key = key
        self.message = message


def _require(ok, key, message):
    if not ok:
        raise _CheckFailed(key, message)


def _join(path, key):
    if not key:
        return path
    return f"{path}.{key}" if path else key


def _convert(tp, value, path):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {type(value).__name__}", path)
        return [_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        if not math.isfinite(value):
            raise ConfigError(f"expected a finite number, got {value!r}", path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    raise TypeError(f"unsupported config type {tp}")


def _build(cls, data, path=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping, got {type(data).__name__}", path or None)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError("unknown key", _join(path, str(key)))
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            kwargs[f.name] = _convert(hints[f.name], data[f.name], _join(path, f.name))
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError("required key is missing", _join(path, f.name))
    obj = cls(**kwargs)
    try:
        obj.check()
    except _CheckFailed as exc:
        raise ConfigError(exc.message, _join(path, exc.key) or None) from None
    return obj


def config_from_dict(doc):
    return _build(ExperimentConfig, doc)


def parse_config(source, overrides=None):
    """Load a config from a YAML path or a dict, applying flat ``overrides``.

    ``overrides`` maps top-level keys (``seed``, ``output``) to values and
    comes from CLI flags.
    """
    if isinstance(source, dict):
        doc = dict(source)
    else:
        path = Path(source)
        try:
            with open(path) as f:
                doc = yaml.safe_load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if doc is None:
            doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    return config_from_dict(doc)
