"""Workbench configuration.

One JSON file with sections {data, model, env, policy, eval, service}.
Defaults are the standard operating point of the framework; experiments
override individual keys, the rest fall through to these values.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


@dataclass
class DataConfig:
    path: str = "data/dataset.jsonl"
    format: str = "jsonl"  # jsonl | tsv
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 13
    workdir: str = "artifacts"


@dataclass
class KGConfig:
    """Affinity-embedding pretraining (translation KG model over the graph)."""

    dim: int = 64
    margin: float = 1.0
    epochs: int = 500
    negatives: int = 1
    lr: float = 0.01
    seed: int = 17


@dataclass
class ModelConfig:
    dim: int = 64                    # embedding dimension D
    graph_layers: int = 2            # relational graph conv layers
    fusion_layers: int = 2           # transformer fusion layers
    heads: int = 2
    ffn_mult: int = 4
    temperature: float = 0.5         # contrastive softmax temperature
    contrastive_weight: float = 0.01
    lr: float = 5e-4
    epochs: int = 30
    batch_size: int = 64
    negatives_item: int = 1          # negative items per positive
    negatives_attr: int = 2          # negative attributes per positive
    rejected_attrs_max: int = 3      # synthesized offline feedback bounds
    rejected_items_max: int = 10
    freeze_graph: bool = False       # keep graph conv weights fixed during pretraining
    seed: int = 29
    kg: KGConfig = field(default_factory=KGConfig)

    def __post_init__(self) -> None:
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.contrastive_weight < 0:
            raise ValueError("contrastive_weight must be non-negative")


@dataclass
class RewardConfig:
    rec_acc: float = 1.0
    rec_rej: float = -0.1
    ask_acc: float = 0.01
    ask_rej: float = -0.1
    ask_unk: float = -0.1
    quit: float = -0.3

    def __post_init__(self) -> None:
        if not (self.rec_acc > 0 > self.quit):
            raise ValueError("expected rec_acc > 0 > quit")

    def as_list(self) -> list[float]:
        return [self.rec_acc, self.rec_rej, self.ask_acc, self.ask_rej, self.ask_unk, self.quit]


@dataclass
class EnvConfig:
    max_turns: int = 10              # T
    list_size: int = 10              # K, recommendation list length
    session_min: int = 2             # shortest session (one previous subsession)
    session_max: int = 4
    activation_count: int = 2
    sessions_per_user: int = 1
    reject_filters_items: bool = False
    rewards: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self) -> None:
        if self.max_turns < 1 or self.list_size < 1:
            raise ValueError("max_turns and list_size must be >= 1")
        if not (2 <= self.session_min <= self.session_max):
            raise ValueError("need 2 <= session_min <= session_max")


@dataclass
class DaggerConfig:
    iterations: int = 5
    episodes_per_iter: int = 100
    epochs_per_iter: int = 40
    batch_size: int = 128
    dataset_cap: int = 50_000


@dataclass
class ReinforceConfig:
    batches: int = 40
    episodes_per_batch: int = 32


@dataclass
class PolicyConfig:
    hidden: int = 64
    lr: float = 1e-3
    discount: float = 0.7            # gamma
    seed: int = 41
    dagger: DaggerConfig = field(default_factory=DaggerConfig)
    reinforce: ReinforceConfig = field(default_factory=ReinforceConfig)


@dataclass
class EvalConfig:
    agent: str = "policy"            # policy | expert | maxe | random | oracle
    split: str = "test"              # train | valid | test | all
    seed: int = 97
    log_path: str = "episodes.jsonl"
    emit_json: bool = False


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8977
    agent: str = "policy"            # policy | rule (greedy ask-until-small threshold rule)
    log_path: str = "service_episodes.jsonl"
    static_dir: str = ""             # optional built frontend to serve at /
    session_ttl_seconds: int = 3600
    seed: int = 53


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _merge(cls: type, base: Any, overrides: dict[str, Any]) -> Any:
    """Rebuild a dataclass from `base` with `overrides` applied recursively."""
    kwargs: dict[str, Any] = {}
    for f in dataclasses.fields(cls):
        current = getattr(base, f.name)
        if f.name not in overrides:
            kwargs[f.name] = current
            continue
        value = overrides[f.name]
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            kwargs[f.name] = _merge(type(current), current, value)
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[f.name] = tuple(value)
        else:
            kwargs[f.name] = value
    unknown = set(overrides) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    return cls(**kwargs)


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> Config:
    """Defaults, then the JSON file (if given), then explicit overrides."""
    cfg = Config()
    if path is not None:
        raw = json.loads(Path(path).read_text())
        cfg = _merge(Config, cfg, raw)
    if overrides:
        cfg = _merge(Config, cfg, overrides)
    return cfg
