"""Experiment configuration: TOML in, validated dataclasses out.

Every field has a default, so an empty file (plus a data source) is a valid
experiment.  Unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .ingest import SyntheticConfig
from .neural.optim import OPTIMIZERS
from .preprocess import AUGMENTATION_MODES, DEFAULT_REPLICATION, SCALING_MODES, TEST_SCHEMES
from .simclock import JITTERS

MODES = ("central", "sync", "async")
RULE_FORMS = ("convex", "literal")
WEIGHT_NORMS = ("proportional", "client-normalized")


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


def _choice(path, value, options):
    if value not in options:
        raise ConfigError(path, f"expected one of {', '.join(options)}, got {value!r}")


def _positive(path, value, strict=True):
    if strict and not value > 0:
        raise ConfigError(path, f"must be > 0, got {value!r}")
    if not strict and not value >= 0:
        raise ConfigError(path, f"must be >= 0, got {value!r}")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    directory: str = ""
    missing_threshold: float = 0.6
    scaling: str = "global"
    augmentation: str = "base"
    test_scheme: str = "fair"
    holdout_clients: int = 1
    replication: dict = field(default_factory=lambda: dict(DEFAULT_REPLICATION))
    noise_mean: float = 0.0
    noise_std: float = 1e-4
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def __post_init__(self):
        _choice("data.source", self.source, ("synthetic", "directory"))
        if self.source == "directory" and not self.directory:
            raise ConfigError("data.directory", "required when data.source = \"directory\"")
        if not 0 < self.missing_threshold <= 1:
            raise ConfigError("data.missing_threshold", "must lie in (0, 1]")
        _choice("data.scaling", self.scaling, SCALING_MODES)
        _choice("data.augmentation", self.augmentation, AUGMENTATION_MODES)
        _choice("data.test_scheme", self.test_scheme, TEST_SCHEMES)
        _positive("data.holdout_clients", self.holdout_clients)
        _positive("data.noise_std", self.noise_std, strict=False)
        for name, k in self.replication.items():
            if not isinstance(k, int) or isinstance(k, bool) or k < 0:
                raise ConfigError(f"data.replication.{name}", "must be a non-negative integer")


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple[int, ...] = (64, 16)
    leaky_slope: float = 0.01
    optimizer: str = "sgdm"
    learning_rate: float = 0.01
    batch_size: int = 128
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # "auto": carried across epochs in central mode, reset every local round in FL
    persist_optimizer_state: Any = "auto"

    def __post_init__(self):
        if not self.hidden or any(not isinstance(h, int) or h < 1 for h in self.hidden):
            raise ConfigError("model.hidden", "needs at least one positive layer width")
        _positive("model.leaky_slope", self.leaky_slope, strict=False)
        _choice("model.optimizer", self.optimizer, OPTIMIZERS)
        _positive("model.learning_rate", self.learning_rate)
        if self.batch_size < 1:
            raise ConfigError("model.batch_size", f"must be >= 1, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise ConfigError("model.momentum", "must lie in [0, 1)")
        if self.persist_optimizer_state not in ("auto", True, False):
            raise ConfigError("model.persist_optimizer_state", "expected true, false or \"auto\"")

    def persist_state(self, mode: str) -> bool:
        if self.persist_optimizer_state == "auto":
            return mode == "central"
        return bool(self.persist_optimizer_state)


@dataclass(frozen=True)
class FederationConfig:
    local_epochs: int = 2
    clients_per_round: Any = "all"
    mixing_ratio: float = 0.8
    rule_form: str = "convex"
    async_weight_norm: str = "proportional"
    max_rounds: int = 100
    max_virtual_duration: float = 2400.0
    target_avg_updates: float = 0.0
    early_stop_patience: int = 50
    eval_period: float = 20.0

    def __post_init__(self):
        _positive("federation.local_epochs", self.local_epochs, strict=False)
        if self.clients_per_round != "all" and (
                not isinstance(self.clients_per_round, int) or self.clients_per_round < 1):
            raise ConfigError("federation.clients_per_round", "expected a positive integer or \"all\"")
        if not 0 < self.mixing_ratio <= 1:
            raise ConfigError("federation.mixing_ratio", "must lie in (0, 1]")
        _choice("federation.rule_form", self.rule_form, RULE_FORMS)
        _choice("federation.async_weight_norm", self.async_weight_norm, WEIGHT_NORMS)
        _positive("federation.max_rounds", self.max_rounds, strict=False)
        _positive("federation.max_virtual_duration", self.max_virtual_duration)
        _positive("federation.target_avg_updates", self.target_avg_updates, strict=False)
        if self.early_stop_patience < 1:
            raise ConfigError("federation.early_stop_patience", "must be >= 1")
        _positive("federation.eval_period", self.eval_period)


@dataclass(frozen=True)
class SimulationConfig:
    seconds_per_sample: float = 0.01
    jitter: str = "lognormal"
    jitter_sigma: float = 0.1
    jitter_width: float = 0.1
    pre_eval_delay: float = 0.0
    pre_merge_delay: float = 0.0
    write_events: bool = True

    def __post_init__(self):
        _positive("simulation.seconds_per_sample", self.seconds_per_sample)
        _choice("simulation.jitter", self.jitter, JITTERS)
        _positive("simulation.jitter_sigma", self.jitter_sigma, strict=False)
        if not 0 <= self.jitter_width < 1:
            raise ConfigError("simulation.jitter_width", "must lie in [0, 1)")
        _positive("simulation.pre_eval_delay", self.pre_eval_delay, strict=False)
        _positive("simulation.pre_merge_delay", self.pre_merge_delay, strict=False)


@dataclass(frozen=True)
class SeedConfig:
    data: int = 0
    model: int = 0
    selection: int = 0
    latency: int = 0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"seeds.{f.name}", "must be non-negative")


@dataclass(frozen=True)
class MetricsConfig:
    report_class: str = "running"
    summary_window: int = 5

    def __post_init__(self):
        if self.summary_window < 1:
            raise ConfigError("metrics.summary_window", "must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "async"
    output_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def __post_init__(self):
        _choice("mode", self.mode, MODES)

    def with_overrides(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``{"model.batch_size": 32}``."""
        data = to_dict(self)
        for key, value in overrides.items():
            node = data
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
                if not isinstance(node, dict):
                    raise ConfigError(key, "path does not name a section")
            node[parts[-1]] = value
        return from_dict(data)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seeds=SeedConfig(seed, seed, seed, seed))


_SECTIONS = {"data": DataConfig, "model": ModelConfig, "federation": FederationConfig,
             "simulation": SimulationConfig, "seeds": SeedConfig, "metrics": MetricsConfig}


def _coerce(path: str, value, default):
    """Check ``value`` against the type of the field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
    elif isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {value!r}")
    elif isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return tuple(value)
    elif isinstance(default, dict) and not isinstance(value, dict):
        raise ConfigError(path, f"expected a table, got {value!r}")
    return value


def _build(cls, raw: dict, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(prefix, "expected a table")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}" if prefix else unknown[0], "unknown key")
    defaults = cls()
    kwargs = {}
    for key, value in raw.items():
        path = f"{prefix}.{key}" if prefix else key
        default = getattr(defaults, key)
        if cls is DataConfig and key == "synthetic":
            kwargs[key] = _build_synthetic(value, path)
        elif cls is ExperimentConfig and key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, path)
        elif key in ("clients_per_round", "persist_optimizer_state"):
            kwargs[key] = value
        else:
            kwargs[key] = _coerce(path, value, default)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix or "<root>", str(exc)) from None


def _build_synthetic(raw: dict, prefix: str) -> SyntheticConfig:
    if not isinstance(raw, dict):
        raise ConfigError(prefix, "expected a table")
    names = {f.name for f in dataclasses.fields(SyntheticConfig)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}", "unknown key")
    kwargs = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        elif key in ("class_separation", "noise_std", "feature_shift", "feature_scale",
                     "missing_rate", "label_concentration") and isinstance(value, int):
            value = float(value)
        kwargs[key] = value
    try:
        return SyntheticConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix, str(exc)) from None


def from_dict(raw: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, raw, "")


def _plain(value):
    if dataclasses.is_dataclass(value):
        out = {}
        for f in dataclasses.fields(value):
            v = getattr(value, f.name)
            if v is None:
                continue
            out[f.name] = _plain(v)
        return out
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def to_dict(cfg: ExperimentConfig) -> dict:
    return _plain(cfg)


def dumps(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def loads(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(source, f"invalid TOML: {exc}") from None
    return from_dict(raw)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
    return loads(text, str(path))


def config_hash(cfg: ExperimentConfig) -> str:
    """Digest of every field that can change results (the output location cannot)."""
    data = to_dict(cfg)
    data.pop("output_dir", None)
    data["simulation"].pop("write_events", None)
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
