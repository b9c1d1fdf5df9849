"""Model names exposed on the command line and how each one is built and trained."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .baselines import (
    CmfModel,
    McSamplingDist,
    default_mc_dist,
    train_bpr,
    train_cmf,
    train_mc,
    train_single,
)
from .data import BehaviorDataset
from .model import NmtrModel
from .training import TrainConfig, TrainResult, train

MODEL_NAMES = (
    "bpr", "gmf", "mlp", "neumf", "cmf",
    "mc-bpr", "mc-gmf", "mc-mlp", "mc-neumf",
    "nmtr-gmf", "nmtr-mlp", "nmtr-neumf",
)


@dataclass
class ModelConfig:
    embedding_size: int = 64
    mlp_layers: int = 3
    final_width: int | None = None
    embedding_std: float = 0.01
    seed: int = 0
    # cmf: one weight per behavior
    cmf_weights: tuple[float, ...] | None = None
    # mc-*: stratum weights (see McSamplingDist)
    mc_negative: tuple[float, ...] | None = None
    mc_positive: tuple[float, ...] | None = None

    @classmethod
    def from_dict(cls, d: dict | None) -> "ModelConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"name", "unit"}
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)


def check_name(name: str) -> str:
    if name not in MODEL_NAMES:
        raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    return name


def unit_of(name: str) -> str:
    """Interaction unit behind a model name (``"mf"`` for the inner product)."""
    tail = name.split("-")[-1]
    return "mf" if tail == "bpr" else tail


def is_multi_level(name: str) -> bool:
    return name.startswith("nmtr-") or name == "cmf"


def build_model(name: str, num_users: int, num_items: int, behavior_names, cfg: ModelConfig):
    check_name(name)
    names = tuple(behavior_names)
    if name == "cmf":
        return CmfModel(num_users, num_items, len(names), cfg.embedding_size, cfg.cmf_weights, cfg.seed,
                        cfg.embedding_std, names)
    levels = names if is_multi_level(name) else names[-1:]
    return NmtrModel.build(num_users, num_items, len(levels), unit_of(name), cfg.embedding_size,
                           cfg.mlp_layers, cfg.seed, embedding_std=cfg.embedding_std,
                           final_width=cfg.final_width, behavior_names=levels)


def build_for(name: str, ds: BehaviorDataset, cfg: ModelConfig):
    return build_model(name, ds.num_users, ds.num_items, ds.schema.names, cfg)


def fit_model(name: str, model, ds: BehaviorDataset, train_cfg: TrainConfig, cfg: ModelConfig,
              callback=None) -> TrainResult:
    check_name(name)
    if name.startswith("nmtr-"):
        return train(model, ds, train_cfg, callback=callback, **(
            {} if train_cfg.mode == "sequential" else {"unit": unit_of(name)}))
    if name == "cmf":
        return train_cmf(ds, train_cfg, model=model, callback=callback)
    if name == "bpr":
        return train_bpr(model, ds, train_cfg, callback=callback)
    if name.startswith("mc-"):
        if cfg.mc_negative is None:
            dist = default_mc_dist(ds.num_behaviors)
        else:
            dist = McSamplingDist(tuple(cfg.mc_negative),
                                  None if cfg.mc_positive is None else tuple(cfg.mc_positive))
        return train_mc(model, ds, dist, train_cfg, callback=callback)
    return train_single(model, ds, train_cfg, callback=callback)
