"""JSON checkpoint manifest: a versioned header plus ``{name, shape, values}`` per parameter."""

from __future__ import annotations

import json

import numpy as np

from .registry import ModelConfig, build_model, check_name

FORMAT = "nmtr-checkpoint"
VERSION = 1


def checkpoint_dict(name: str, model, cfg: ModelConfig) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "model": name,
        "model_config": cfg.to_dict(),
        "spec": model.spec(),
        "params": [
            {"name": p.name, "shape": list(p.shape), "values": p.value.ravel().tolist()}
            for p in model.params()
        ],
    }


def save_checkpoint(path, name: str, model, cfg: ModelConfig) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(name, model, cfg), fh)


def load_checkpoint(path):
    """Returns ``(name, model, model_config)``."""
    with open(path) as fh:
        data = json.load(fh)
    if data.get("format") != FORMAT:
        raise ValueError(f"{path}: not an {FORMAT} file")
    if data.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {data.get('version')}")
    name = check_name(data["model"])
    cfg = ModelConfig.from_dict(data["model_config"])
    spec = data["spec"]
    model = build_model(name, spec["num_users"], spec["num_items"], spec["behaviors"], cfg)
    by_name = {p.name: p for p in model.params()}
    for entry in data["params"]:
        p = by_name.get(entry["name"])
        if p is None:
            raise ValueError(f"{path}: unexpected parameter {entry['name']!r}")
        values = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if values.shape != p.shape:
            raise ValueError(f"{path}: shape mismatch for {entry['name']!r}")
        p.value[...] = values
    return name, model, cfg
