"""Experiment configuration: JSON file + flag overrides, all seeds derived from one master seed."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .dataset import PhantomConfig
from .errors import ConfigurationError
from .model import ModelSpec
from .seeds import STREAMS, derive_seed
from .training import TrainConfig

CONFIG_NAME = "config.json"


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_hgg: int = 210
    n_lgg: int = 75
    folds: int = 5
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    jobs: int = 1

    def seeds(self) -> dict[str, int]:
        return {name: derive_seed(self.seed, name) for name in STREAMS}

    def resolved(self) -> ExperimentConfig:
        """Copy with every subordinate seed filled in from the master seed."""
        s = self.seeds()
        return replace(
            self,
            phantom=replace(self.phantom, seed=s["data"]),
            train=replace(self.train, seed=s["batches"]),
            model=replace(self.model, seed=s["init"]),
        )

    def spec(self, in_channels: int) -> ModelSpec:
        return replace(self.resolved().model, in_channels=in_channels)

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigurationError(f"seed must be unsigned, got {self.seed}")
        if self.folds < 2:
            raise ConfigurationError(f"folds must be >= 2, got {self.folds}")
        if self.n_hgg < self.folds or self.n_lgg < self.folds:
            raise ConfigurationError(
                f"each grade needs at least {self.folds} subjects (got {self.n_hgg} HGG, {self.n_lgg} LGG)")
        self.phantom.validate()
        self.train.validate()
        replace(self.model, in_channels=4).validate()
        if self.phantom.image_size % 2 ** (self.model.n_levels - 1):
            raise ConfigurationError(
                f"image_size {self.phantom.image_size} not divisible by 2^(n_levels-1)")

    def to_dict(self) -> dict[str, Any]:
        r = self.resolved()
        model = asdict(r.model)
        model.pop("in_channels")
        return {
            "seed": r.seed,
            "n_hgg": r.n_hgg,
            "n_lgg": r.n_lgg,
            "folds": r.folds,
            "phantom": asdict(r.phantom),
            "train": asdict(r.train),
            "model": model,
            "seeds": r.seeds(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, directory: str | os.PathLike) -> Path:
        path = Path(directory) / CONFIG_NAME
        path.write_text(self.dumps(), encoding="utf-8")
        return path


def _merge(obj, values: Mapping[str, Any], section: str):
    known = {f.name for f in fields(obj)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    cast = {}
    for key, value in values.items():
        if isinstance(value, list):
            value = tuple(value)
        cast[key] = value
    return replace(obj, **cast)


def from_dict(data: Mapping[str, Any], base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    data = dict(data)
    data.pop("seeds", None)  # derived, never read back
    for section in ("phantom", "train", "model"):
        if section in data:
            values = dict(data.pop(section))
            values.pop("seed", None)
            values.pop("in_channels", None)
            cfg = replace(cfg, **{section: _merge(getattr(cfg, section), values, section)})
    return _merge(cfg, data, "top level")


def load(path: str | os.PathLike, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    return from_dict(data, base)
