"""Namespaced run configuration resolved from flags, environment variables,
and an optional JSON config file (flag > env > file > default)."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

from kgconv.errors import ConfigurationError

ENV_PREFIX = "KGCONV"


@dataclass
class DataConfig:
    conversations: str = ""      # directory with train/valid/test.jsonl
    triplets: str = ""           # tab-separated triplet file
    pos_lexicon: str = ""        # empty -> bundled lexicon
    stopwords: str = ""          # empty -> bundled list
    vocab_cap: int = 20000
    keyword_min_count: int = 10
    context_cap: int = 8
    seed: int = 11               # negative sampling


@dataclass
class ModelConfig:
    d1: int = 200
    d2: int = 200
    d: int = 200
    relation_buckets: int = 12
    lambda_k: float = 0.01
    use_concepts: bool = True
    use_keywords: bool = True
    embeddings: str = ""         # optional pretrained embedding file
    seed: int = 13


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.001
    decay: float = 0.9
    patience: int = 5
    seed: int = 5
    topk: int = 3


@dataclass
class SimConfig:
    n: int = 1000
    max_agent_turns: int = 8
    pool_size: int = 100
    seed: int = 17
    strategy: str = "ckg"        # or "embedding" (ablation)


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


NAMESPACES = {"data": DataConfig, "model": ModelConfig,
              "train": TrainConfig, "sim": SimConfig}


def _parse_value(raw: str, ftype):
    if ftype is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"expected a boolean, got {raw!r}")
    return ftype(raw)


def add_config_arguments(parser) -> None:
    parser.add_argument("--config", default=None, help="JSON config file")
    for ns, cls in NAMESPACES.items():
        for f in fields(cls):
            parser.add_argument(f"--{ns}.{f.name}", dest=f"{ns}__{f.name}",
                                default=None, metavar=str(f.type))


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    file_values = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_values = json.load(fh)
    for ns, cls in NAMESPACES.items():
        section = getattr(cfg, ns)
        for f in fields(cls):
            raw = None
            flag = getattr(args, f"{ns}__{f.name}", None)
            env = os.environ.get(f"{ENV_PREFIX}_{ns.upper()}_{f.name.upper()}")
            if flag is not None:
                raw = flag
            elif env is not None:
                raw = env
            elif ns in file_values and f.name in file_values[ns]:
                value = file_values[ns][f.name]
                setattr(section, f.name, value)
                continue
            if raw is not None:
                setattr(section, f.name, _parse_value(str(raw), type(getattr(section, f.name))))
    return cfg
