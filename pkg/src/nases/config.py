"""Run configuration: one flat dataclass, loadable from a sectioned TOML file.

Sections only group keys for readability; every key maps to the field of the
same name regardless of section, so ``[search] sigma = 0.2`` and a top-level
``sigma = 0.2`` mean the same thing.
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .evaluator.base import EvalBudget
from .space import SpaceConfig


class ConfigError(ValueError):
    pass


SECTIONS = {
    "space": ["layers", "skips"],
    "autoencoder": [
        "embed_dim", "hidden", "pretrain_epochs", "pretrain_batches", "pretrain_batch",
        "pretrain_lr", "pretrain_one_hot", "holdout",
    ],
    "search": ["iterations", "sigma", "controller_lr", "baseline_decay"],
    "evaluator": [
        "evaluator", "target_seed", "epochs_e1", "epochs_e2", "batch_size", "filters",
        "classes", "double_at_reduction", "cutout", "momentum", "weight_decay",
        "l_max", "l_min", "t0",
    ],
    "data": ["data", "subset", "synthetic_images", "synthetic_test_images"],
    "seeds": ["pretrain_seed", "search_seed", "eval_seed"],
    "output": ["out_dir", "record_timing"],
}


@dataclass
class SearchConfig:
    # space
    layers: int = 15
    skips: bool = True
    # autoencoder
    embed_dim: int = 0  # 0 -> derived from the space
    hidden: int = 64
    pretrain_epochs: int = 50
    pretrain_batches: int = 256
    pretrain_batch: int = 64
    pretrain_lr: float = 1e-5
    pretrain_one_hot: bool = False
    holdout: int = 4096
    # search
    iterations: int = 300
    sigma: float = 0.1
    controller_lr: float = 1e-5
    baseline_decay: float = 0.95
    # evaluator
    evaluator: str = "synthetic"
    target_seed: int = 0
    epochs_e1: int = 70
    epochs_e2: int = 630
    batch_size: int = 128
    filters: int = 40
    classes: int = 10
    double_at_reduction: bool = True
    cutout: int = 0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    l_max: float = 0.05
    l_min: float = 0.001
    t0: int = 10
    # data
    data: str = "synthetic"  # "synthetic" or a directory of CIFAR-10 binary batches
    subset: int = 0  # images per class, 0 = all
    synthetic_images: int = 2000
    synthetic_test_images: int = 1000
    # seeds
    pretrain_seed: int = 0
    search_seed: int = 0
    eval_seed: int = 0
    # output
    out_dir: str = "runs/nases"
    record_timing: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if self.evaluator not in ("synthetic", "child"):
            raise ConfigError(f"unknown evaluator {self.evaluator!r}; use 'synthetic' or 'child'")

    @property
    def space(self) -> SpaceConfig:
        return SpaceConfig(self.layers, self.skips)

    @property
    def budget(self) -> EvalBudget:
        return EvalBudget(self.epochs_e1, self.epochs_e2, self.batch_size, self.eval_seed)

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    def replace(self, **changes) -> "SearchConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, data: dict) -> "SearchConfig":
        flat = {}
        for key, value in data.items():
            if isinstance(value, dict):
                for k, v in value.items():
                    flat[k] = v
            else:
                flat[key] = value
        unknown = sorted(set(flat) - set(cls.field_names()))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**flat)

    @classmethod
    def load(cls, path) -> "SearchConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_mapping(data)

    def to_toml(self) -> str:
        values = dataclasses.asdict(self)
        lines = []
        for section, keys in SECTIONS.items():
            lines.append(f"[{section}]")
            for k in keys:
                lines.append(f"{k} = {_toml_value(values[k])}")
            lines.append("")
        return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return repr(v)
