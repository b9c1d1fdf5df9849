"""Experiment configuration files (TOML or JSON).

Example::

    seed = 7

    [data]
    source = "synth"            # or "csv" / "dataset"
    synth = { num_users = 300, num_items = 150, funnel_probs = [0.4, 0.1] }

    [model]
    name = "nmtr-gmf"
    embedding_size = 16

    [train]
    epochs = 50
    learning_rate = 0.05

    [eval]
    ks = [50, 80, 100, 200]
    groups = ["5-8", "9-12", ">12"]

The top-level ``seed`` fills in every seed not given explicitly.
"""

from __future__ import annotations

import copy
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import SynthConfig
from .registry import ModelConfig, check_name
from .training import TrainConfig, validate_loss_weights

DATA_SOURCES = ("synth", "csv", "dataset")


class ConfigError(ValueError):
    pass


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        return tomllib.loads(text)
    if path.suffix.lower() == ".json":
        return json.loads(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return tomllib.loads(text)


def _pick(cls, d: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    return cls(**kwargs)


@dataclass
class ExperimentConfig:
    model_name: str = "nmtr-gmf"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: dict = field(default_factory=lambda: {"source": "synth"})
    ks: tuple[int, ...] = (50, 80, 100, 200)
    groups: tuple[str, ...] | None = None
    exclude: str = "target"
    validation: bool = False
    validation_k: int = 100
    eval_every: int = 1
    checkpoint_every: int = 0
    seed: int = 0
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, seed: int | None = None) -> "ExperimentConfig":
        raw = copy.deepcopy(raw)
        if seed is not None:
            raw["seed"] = seed
        top_seed = int(raw.get("seed", 0))
        known_top = {"seed", "data", "model", "train", "eval", "out"}
        if set(raw) - known_top:
            raise ConfigError(f"unknown top-level keys: {sorted(set(raw) - known_top)}")

        model_raw = dict(raw.get("model", {}))
        try:
            name = check_name(model_raw.pop("name", "nmtr-gmf"))
        except ValueError as exc:
            raise ConfigError(f"[model] {exc}") from None
        model_raw.setdefault("seed", top_seed)
        try:
            model = ModelConfig.from_dict(model_raw)
        except ValueError as exc:
            raise ConfigError(f"[model] {exc}") from None

        train_raw = dict(raw.get("train", {}))
        validation = bool(train_raw.pop("validation", False))
        validation_k = int(train_raw.pop("validation_k", 100))
        eval_every = int(train_raw.pop("eval_every", 1))
        checkpoint_every = int(train_raw.pop("checkpoint_every", 0))
        train_raw.setdefault("seed", top_seed)
        try:
            train = _pick(TrainConfig, train_raw, "train")
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[train] {exc}") from None
        if train.loss_weights is not None:
            try:
                validate_loss_weights(train.loss_weights, len(train.loss_weights))
            except ValueError as exc:
                raise ConfigError(f"[train] {exc}") from None

        data = dict(raw.get("data", {"source": "synth"}))
        source = data.get("source", "synth")
        if source not in DATA_SOURCES:
            raise ConfigError(f"[data] source must be one of {DATA_SOURCES}, got {source!r}")
        if source in ("csv", "dataset"):
            if "path" not in data:
                raise ConfigError(f"[data] source {source!r} needs a path")
            if not Path(data["path"]).exists():
                raise ConfigError(f"[data] file not found: {data['path']}")
        if source == "csv" and "behaviors" not in data:
            raise ConfigError("[data] csv source needs an ordered 'behaviors' list")
        data.setdefault("split_seed", top_seed)

        ev = dict(raw.get("eval", {}))
        cfg = cls(
            model_name=name, model=model, train=train, data=data,
            ks=tuple(int(k) for k in ev.get("ks", (50, 80, 100, 200))),
            groups=tuple(ev["groups"]) if ev.get("groups") else None,
            exclude=ev.get("exclude", "target"),
            validation=validation, validation_k=validation_k, eval_every=eval_every,
            checkpoint_every=checkpoint_every, seed=top_seed, raw=raw,
        )
        return cfg

    @classmethod
    def load(cls, path, seed: int | None = None) -> "ExperimentConfig":
        return cls.from_dict(read_config_file(path), seed)

    def synth_config(self) -> SynthConfig:
        d = dict(self.data.get("synth", {}))
        d.setdefault("seed", self.seed)
        try:
            return _pick(SynthConfig, d, "data.synth")
        except TypeError as exc:
            raise ConfigError(f"[data.synth] {exc}") from None

    def check_loss_weights(self, num_behaviors: int) -> None:
        """Reject bad λ before any training starts."""
        if self.train.loss_weights is None or not self.model_name.startswith("nmtr-"):
            return
        try:
            validate_loss_weights(self.train.loss_weights, num_behaviors)
        except ValueError as exc:
            raise ConfigError(f"[train] {exc}") from None

    def to_dict(self) -> dict:
        return self.raw
