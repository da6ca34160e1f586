"""Run configuration: a nested YAML document with strict keys."""

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional

import yaml

from .compositor import ALL_COMPONENTS, DEFAULT_CFG
from .losses import LossConfig
from .model import ModelConfig


@dataclass
class DatasetConfig:
    seed: int = 0
    count: int = 1000
    size: List[int] = field(default_factory=lambda: [256, 256])
    cases: List[str] = field(default_factory=lambda: ["mixed"])
    case_weights: Optional[List[float]] = None
    generator: Dict[str, dict] = field(default_factory=dict)


@dataclass
class OptimizerConfig:
    lr: float = 3e-4
    beta1: float = 0.5
    beta2: float = 0.999
    schedule: str = "cosine"
    epochs: int = 80
    batch_size: int = 1
    grad_accumulation: int = 1
    flip_prob: float = 0.5
    seed: int = 0
    keep_checkpoints: int = 2


@dataclass
class PathsConfig:
    data_dir: str = "data"
    run_dir: str = "runs/default"


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        if self.optimizer.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.optimizer.schedule!r}")
        if self.optimizer.batch_size != 1:
            raise ValueError("only batch_size 1 is supported; use grad_accumulation")
        for kind, opts in self.dataset.generator.items():
            if kind not in DEFAULT_CFG:
                raise ValueError(f"unsupported degradation kind in generator config: {kind!r}")
            unknown = set(opts) - set(DEFAULT_CFG[kind])
            if unknown:
                raise ValueError(f"unknown generator options for {kind}: {sorted(unknown)}")
        for comp in self.model.components:
            if comp not in ALL_COMPONENTS:
                raise ValueError(f"unsupported degradation kind in model components: {comp!r}")

    @property
    def components(self):
        return tuple(self.model.components)

    def to_dict(self):
        return dataclasses.asdict(self)


_SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "optimizer": OptimizerConfig,
    "paths": PathsConfig,
}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ValueError(f"{where} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**data)


def from_dict(data):
    data = data or {}
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return RunConfig(**{name: _build(cls, data.get(name, {}), name)
                        for name, cls in _SECTIONS.items()})


def bundled_configs():
    root = resources.files("cbdnet").joinpath("data/configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_config(path_or_name):
    """Load a YAML run config from a path or a bundled profile name."""
    path = Path(path_or_name)
    if path.exists():
        text = path.read_text(encoding="utf-8")
    elif str(path_or_name) in bundled_configs():
        text = (resources.files("cbdnet").joinpath(f"data/configs/{path_or_name}.yaml")
                .read_text(encoding="utf-8"))
    else:
        raise FileNotFoundError(f"no config file or bundled profile named {path_or_name!r}")
    return from_dict(yaml.safe_load(text))


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
