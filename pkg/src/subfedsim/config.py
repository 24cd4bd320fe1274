"""Experiment configuration: defaults, JSON (de)serialization, dotted overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

METHODS = ("CUFL", "Local", "FedAvg", "FedProx", "FedAvgCL")


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    kind: str = "sbm"            # sbm | er | ba | dir
    path: str | None = None      # for kind=dir
    blocks: int = 2
    block_size: int = 200
    p_in: float = 0.08
    p_cross: float = 0.005
    n: int = 100                 # er/ba node count
    p: float = 0.05              # er edge probability
    m: int = 2                   # ba attachment count
    dx: int = 16
    num_classes: int = 2


@dataclass
class PartitionSpec:
    kind: str = "bisection"      # bisection | louvain | overlap | file
    base_parts: int = 2
    copies_per_part: int = 2
    frac: float = 0.5


@dataclass
class ModelSpec:
    hidden: int = 128
    lr: float = 0.01


@dataclass
class IesSpec:
    gamma: float = 0.001
    zeta: float = 1.5
    lr_train: float = 0.0005
    lr_aggr: float = 0.00001
    init_value: float = 0.5
    steps: int = 10
    embeddings: str = "hidden"   # hidden | logits


@dataclass
class FedSpec:
    beta: float = 0.001
    tau: float | str = 5.0       # number or "adaptive"
    tau_update_interval: int = 1
    prune_frac: float = 0.3
    tau_init: float = 5.0
    tau_patience: int = 5
    tau_rho: float = 1.25
    tau_min: float = 3.0
    tau_max: float = 10.0


@dataclass
class ReferenceSpec:
    kind: str = "sbm"            # sbm | er | ba
    blocks: int = 5
    block_size: int = 100
    p_in: float = 0.1
    p_cross: float = 0.0
    n: int = 500
    p: float = 0.05
    m: int = 2


@dataclass
class WarmupSpec:
    rounds: int = 10
    steps: int = 10


@dataclass
class ExperimentConfig:
    method: str = "CUFL"
    seed: int = 0
    rounds: int = 50
    epochs: int = 1
    num_clients: int = 4
    split_ratios: tuple = (2.0, 4.0, 4.0)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    ies: IesSpec = field(default_factory=IesSpec)
    fed: FedSpec = field(default_factory=FedSpec)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    warmup: WarmupSpec = field(default_factory=WarmupSpec)
    dump_rounds: tuple | None = None   # None -> (1, rounds)

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        for name, v in (("model.lr", self.model.lr), ("ies.lr_train", self.ies.lr_train),
                        ("ies.lr_aggr", self.ies.lr_aggr)):
            if v <= 0:
                raise ConfigError(f"{name} must be positive")
        if isinstance(self.fed.tau, str) and self.fed.tau != "adaptive":
            raise ConfigError("fed.tau must be a number or 'adaptive'")
        if not 0.0 <= self.fed.prune_frac < 1.0:
            raise ConfigError("fed.prune_frac must lie in [0, 1)")
        if self.dataset.kind not in ("sbm", "er", "ba", "dir"):
            raise ConfigError("dataset.kind must be sbm, er, ba or dir")
        if self.dataset.kind == "dir" and not self.dataset.path:
            raise ConfigError("dataset.path is required for dataset.kind='dir'")
        if self.partition.kind not in ("bisection", "louvain", "overlap", "file"):
            raise ConfigError("partition.kind must be bisection, louvain, overlap or file")
        if self.partition.kind == "file" and self.dataset.kind != "dir":
            raise ConfigError("partition.kind='file' requires dataset.kind='dir'")

    def effective_dump_rounds(self) -> tuple:
        if self.dump_rounds is not None:
            return tuple(self.dump_rounds)
        if self.rounds == 0:
            return ()
        return (1, self.rounds)


def _sub_dataclass(name):
    f = ExperimentConfig.__dataclass_fields__.get(name)
    if f is None:
        return None
    if f.default_factory is not dataclasses.MISSING and dataclasses.is_dataclass(f.default_factory):
        return f.default_factory
    return None


def to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["split_ratios"] = list(cfg.split_ratios)
    if cfg.dump_rounds is not None:
        d["dump_rounds"] = list(cfg.dump_rounds)
    return d


def _apply_section(obj, data: dict, path: str):
    valid = {f.name for f in fields(obj)}
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(
                f"unknown config key {path + key!r}; valid keys: {sorted(valid)}")
        setattr(obj, key, value)


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    cfg = ExperimentConfig()
    valid = {f.name for f in fields(cfg)}
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {sorted(valid)}")
        sub = _sub_dataclass(key)
        if sub is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key!r} must be an object")
            section = sub()
            _apply_section(section, value, key + ".")
            setattr(cfg, key, section)
        elif key == "split_ratios":
            cfg.split_ratios = tuple(float(x) for x in value)
        elif key == "dump_rounds":
            cfg.dump_rounds = None if value is None else tuple(int(x) for x in value)
        else:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def load_config(path: str) -> ExperimentConfig:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: ExperimentConfig, overrides: list) -> ExperimentConfig:
    """Apply repeatable `--set dotted.key=value` overrides and revalidate."""
    data = to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must be of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        node = data
        for k in keys[:-1]:
            if k not in node or not isinstance(node[k], dict):
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}; valid keys: {sorted(node)}")
        node[keys[-1]] = _parse_value(raw)
    return from_dict(data)
