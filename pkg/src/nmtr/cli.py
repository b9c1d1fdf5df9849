"""``nmtr`` command line: ingest, synth, split, train, eval, sweep.

Every command writes into ``<out>/<run_id>/`` together with a
``manifest.json`` recording the command, the resolved config and the seed.
Unless ``--run-id`` is given the id is derived from those, so reruns of the
same experiment land in the same directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, read_config_file
from .data import (
    BehaviorDataset,
    BehaviorSchema,
    DataError,
    SplitDataset,
    SynthConfig,
    filter_multi_behavior_users,
    ingest_csv,
    leave_one_out_split,
    synthesize_cascade,
)
from .evaluation import evaluate
from .registry import build_for, fit_model
from .training import TrainingDiverged, with_weights

log = logging.getLogger("nmtr")


# helpers


def _run_dir(args, command: str, payload: dict) -> Path:
    if args.run_id:
        run_id = args.run_id
    else:
        digest = hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()
        run_id = f"{command}-{digest[:10]}"
    path = Path(args.out) / run_id
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _manifest(run: Path, command: str, config: dict, seed, **extra) -> None:
    _write_json(run / "manifest.json", {"command": command, "config": config, "seed": seed,
                                        "version": __version__, **extra})


def _parse_list(text: str | None, cast=str):
    if text is None:
        return None
    return [cast(x.strip()) for x in text.split(",") if x.strip()]


def _parse_columns(text: str | None) -> dict:
    out = {}
    for part in _parse_list(text) or []:
        key, _, col = part.partition("=")
        if not col:
            raise ConfigError(f"bad column mapping {part!r}; expected field=column")
        out[key.strip()] = col.strip()
    return out


def _load_config(args) -> ExperimentConfig:
    raw = read_config_file(args.config) if args.config else {}
    return ExperimentConfig.from_dict(raw, args.seed)


def _dataset_from_config(cfg: ExperimentConfig) -> BehaviorDataset:
    data = cfg.data
    source = data.get("source", "synth")
    if source == "synth":
        ds = synthesize_cascade(cfg.synth_config())
    elif source == "csv":
        ds = ingest_csv(data["path"], BehaviorSchema(data["behaviors"]), data.get("columns"))
    else:
        ds = BehaviorDataset.load(data["path"])
    if data.get("filter_multi_behavior", False):
        ds = filter_multi_behavior_users(ds)
    return ds


def _split_for(args, cfg: ExperimentConfig) -> SplitDataset:
    if getattr(args, "split", None):
        return SplitDataset.load(args.split)
    if getattr(args, "dataset", None):
        ds = BehaviorDataset.load(args.dataset)
    else:
        ds = _dataset_from_config(cfg)
    return leave_one_out_split(ds, int(cfg.data.get("split_seed", cfg.seed)))


def fit(cfg: ExperimentConfig, split: SplitDataset, checkpoint_dir: Path | None = None):
    """Train ``cfg``'s model on the split's training part.

    With validation on, one random training target item per user is held out
    and the parameters of the best epoch by validation HR@K are kept.
    Returns ``(model, train_result, best_epoch, val_hr)``.
    """
    cfg.check_loss_weights(split.train.num_behaviors)
    train_ds = split.train
    val = None
    if cfg.validation:
        val = leave_one_out_split(train_ds, cfg.train.seed, by_timestamp=False)
        if not val.test_items:
            raise DataError("validation needs users with at least two training target interactions")
        train_ds = val.train
    model = build_for(cfg.model_name, train_ds, cfg.model)
    best = {"epoch": None, "hr": -1.0, "values": None}
    val_hr = {}

    def on_epoch(epoch, m, loss):
        if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_dir / f"checkpoint_epoch{epoch:04d}.json", cfg.model_name, m, cfg.model)
        if val is None or epoch % cfg.eval_every:
            return
        k = min(cfg.validation_k, train_ds.num_items)
        hr = evaluate(m, val, ks=(k,), exclude=cfg.exclude).hr[k]
        val_hr[epoch] = hr
        if hr > best["hr"]:
            best.update(epoch=epoch, hr=hr, values=[p.value.copy() for p in m.params()])

    result = fit_model(cfg.model_name, model, train_ds, cfg.train, cfg.model, callback=on_epoch)
    if best["values"] is not None:
        for p, v in zip(model.params(), best["values"]):
            p.value[...] = v
    return model, result, best["epoch"], val_hr


def simplex_grid(num_behaviors: int, divisions: int) -> list[tuple[Fraction, ...]]:
    """All weight vectors with entries in ``{0, 1/d, ..., 1}`` summing to one."""
    if num_behaviors < 1 or divisions < 1:
        raise ValueError("need at least one behavior and one division")
    points = []
    for combo in itertools.product(range(divisions + 1), repeat=num_behaviors - 1):
        if sum(combo) <= divisions:
            points.append(tuple(Fraction(c, divisions) for c in combo)
                          + (Fraction(divisions - sum(combo), divisions),))
    return points


# commands


def cmd_ingest(args) -> int:
    cfg_raw = read_config_file(args.config) if args.config else {}
    data = dict(cfg_raw.get("data", {}))
    path = args.csv or data.get("path")
    behaviors = _parse_list(args.behaviors) or data.get("behaviors")
    if not path:
        raise ConfigError("ingest needs --csv (or data.path in the config)")
    if not behaviors:
        raise ConfigError("ingest needs --behaviors (lowest level first, target last)")
    columns = {**data.get("columns", {}), **_parse_columns(args.columns)}
    if not Path(path).exists():
        raise FileNotFoundError(f"no such file: {path}")
    ds = ingest_csv(path, BehaviorSchema(behaviors), columns)
    if args.filter_multi_behavior or data.get("filter_multi_behavior", False):
        ds = filter_multi_behavior_users(ds)
    payload = {"csv": str(path), "behaviors": behaviors, "columns": columns,
               "filter_multi_behavior": bool(args.filter_multi_behavior)}
    run = _run_dir(args, "ingest", payload)
    ds.save(run / "dataset.npz")
    summary = ds.summary()
    _write_json(run / "summary.json", summary)
    _manifest(run, "ingest", payload, args.seed)
    print(json.dumps(summary))
    print(run)
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    synth = cfg.synth_config()
    overrides = {
        "num_users": args.users, "num_items": args.items, "num_behaviors": args.behaviors,
        "latent_dim": args.latent_dim, "signal_scale": args.signal_scale,
        "funnel_probs": tuple(_parse_list(args.funnel, float)) if args.funnel else None,
    }
    for k, v in overrides.items():
        if v is not None:
            setattr(synth, k, v)
    if args.seed is not None:
        synth.seed = args.seed
    ds = synthesize_cascade(synth)
    payload = {k: getattr(synth, k) for k in SynthConfig.__dataclass_fields__}
    run = _run_dir(args, "synth", payload)
    ds.save(run / "dataset.npz")
    summary = ds.summary()
    _write_json(run / "summary.json", summary)
    _manifest(run, "synth", payload, synth.seed)
    print(json.dumps(summary))
    print(run)
    return 0


def cmd_split(args) -> int:
    if not Path(args.dataset).exists():
        raise FileNotFoundError(f"no such file: {args.dataset}")
    ds = BehaviorDataset.load(args.dataset)
    seed = 0 if args.seed is None else args.seed
    split = leave_one_out_split(ds, seed, by_timestamp=not args.random)
    payload = {"dataset": str(args.dataset), "seed": seed, "random": bool(args.random)}
    run = _run_dir(args, "split", payload)
    split.save(run / "split.npz")
    summary = {"test_users": len(split.test_items), "train": split.train.summary()}
    _write_json(run / "summary.json", summary)
    _manifest(run, "split", payload, seed)
    print(json.dumps(summary))
    print(run)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    split = _split_for(args, cfg)
    cfg.check_loss_weights(split.train.num_behaviors)
    payload = {"config": cfg.raw, "split": args.split, "dataset": args.dataset}
    run = _run_dir(args, "train", payload)
    _write_json(run / "config.json", cfg.raw)
    split.save(run / "split.npz")

    model, result, best_epoch, val_hr = fit(cfg, split, run)
    save_checkpoint(run / "checkpoint.json", cfg.model_name, model, cfg.model)
    with open(run / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "wall_ms", "phase", "val_hr"])
        for row in result.trace_rows():
            w.writerow([row["epoch"], repr(row["loss"]), f"{row['wall_ms']:.3f}", row["phase"],
                        "" if row["epoch"] not in val_hr else repr(val_hr[row["epoch"]])])
    _manifest(run, "train", cfg.raw, cfg.seed, model=cfg.model_name, best_epoch=best_epoch,
              epochs_run=len(result.losses))
    if args.evaluate:
        report = evaluate(model, split, cfg.ks, cfg.groups, cfg.exclude)
        report.write(run / "report.json", run / "report.csv", cfg.model_name)
    print(run)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args) if args.config else None
    checkpoint = args.checkpoint or (args.run and str(Path(args.run) / "checkpoint.json"))
    split_path = args.split or (args.run and str(Path(args.run) / "split.npz"))
    if not checkpoint or not split_path:
        raise ConfigError("eval needs --checkpoint and --split (or --run DIR)")
    for p in (checkpoint, split_path):
        if not Path(p).exists():
            raise FileNotFoundError(f"no such file: {p}")
    name, model, _ = load_checkpoint(checkpoint)
    split = SplitDataset.load(split_path)
    ks = _parse_list(args.ks, int) or (list(cfg.ks) if cfg else [50, 80, 100, 200])
    groups = _parse_list(args.groups) or (list(cfg.groups) if cfg and cfg.groups else None)
    exclude = args.exclude or (cfg.exclude if cfg else "target")
    report = evaluate(model, split, ks, groups, exclude, workers=args.workers)
    payload = {"checkpoint": str(checkpoint), "split": str(split_path), "ks": ks, "groups": groups,
               "exclude": exclude}
    run = _run_dir(args, "eval", payload)
    report.write(run / "report.json", run / "report.csv", name)
    _manifest(run, "eval", payload, args.seed)
    print(json.dumps(report.to_dict()))
    print(run)
    return 0


def _sweep_point(raw: dict, seed, weights: list[float], split_path: str | None):
    cfg = ExperimentConfig.from_dict(raw, seed)
    if split_path:
        split = SplitDataset.load(split_path)
    else:
        split = leave_one_out_split(_dataset_from_config(cfg), int(cfg.data.get("split_seed", cfg.seed)))
    cfg.train = with_weights(cfg.train, weights)
    model, _, best_epoch, _ = fit(cfg, split)
    report = evaluate(model, split, cfg.ks, None, cfg.exclude)
    return {"weights": weights, "best_epoch": best_epoch,
            "HR": {str(k): v for k, v in report.hr.items()},
            "NDCG": {str(k): v for k, v in report.ndcg.items()}}


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if not cfg.model_name.startswith("nmtr-"):
        raise ConfigError("the loss-weight sweep applies to nmtr-* models")
    split = _split_for(args, cfg)
    R = split.train.num_behaviors
    if args.divisions:
        divisions = args.divisions
    elif args.step:
        divisions = round(1.0 / args.step)
        if abs(divisions * args.step - 1.0) > 1e-9:
            raise ConfigError(f"step {args.step} does not divide 1")
    else:
        divisions = 6 if R == 3 else 10
    grid = simplex_grid(R, divisions)
    payload = {"config": cfg.raw, "divisions": divisions, "split": args.split, "dataset": args.dataset}
    run = _run_dir(args, "sweep", payload)
    points_dir = run / "points"
    points_dir.mkdir(exist_ok=True)
    split_path = run / "split.npz"
    if not split_path.exists():
        split.save(split_path)

    todo = []
    for point in grid:
        pid = "_".join(str(int(w * divisions)) for w in point)
        if not (points_dir / f"{pid}.json").exists():
            todo.append((pid, [float(w) for w in point]))
    log.info("sweep: %d grid points, %d to compute", len(grid), len(todo))

    def save(pid, res):
        _write_json(points_dir / f"{pid}.json", res)

    if args.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            futures = {pid: pool.submit(_sweep_point, cfg.raw, cfg.seed, w, str(split_path)) for pid, w in todo}
            for pid, fut in futures.items():
                save(pid, fut.result())
    else:
        for pid, w in todo:
            save(pid, _sweep_point(cfg.raw, cfg.seed, w, str(split_path)))

    ks = list(cfg.ks)
    with open(run / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"lambda_{r + 1}" for r in range(R)] + [f"HR@{k}" for k in ks] + [f"NDCG@{k}" for k in ks])
        for point in grid:
            pid = "_".join(str(int(x * divisions)) for x in point)
            with open(points_dir / f"{pid}.json") as pf:
                res = json.load(pf)
            w.writerow([repr(float(x)) for x in point] + [res["HR"][str(k)] for k in ks]
                       + [res["NDCG"][str(k)] for k in ks])
    _manifest(run, "sweep", cfg.raw, cfg.seed, divisions=divisions, points=len(grid), computed=len(todo))
    print(json.dumps({"points": len(grid), "computed": len(todo), "skipped": len(grid) - len(todo)}))
    print(run)
    return 0


# argument parsing


def build_parser() -> argparse.ArgumentParser:
    def add_global(p, default):
        # Accepted before or after the subcommand; the subcommand copy only
        # overrides when given explicitly.
        p.add_argument("--config", default=default(None), help="TOML or JSON experiment config")
        p.add_argument("--seed", type=int, default=default(None), help="overrides every unset seed")
        p.add_argument("--out", default=default("runs"), help="output root (default: runs)")
        p.add_argument("--run-id", default=default(None), help="output subdirectory name")
        p.add_argument("-v", "--verbose", action="store_true", default=default(False))

    common = argparse.ArgumentParser(add_help=False)
    add_global(common, lambda _: argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="nmtr", description="Multi-behavior recommendation experiments")
    add_global(parser, lambda v: v)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="CSV log -> dataset")
    p.add_argument("--csv")
    p.add_argument("--behaviors", help="comma-separated, lowest level first, target last")
    p.add_argument("--columns", help="field=column pairs, e.g. user=uid,item=iid")
    p.add_argument("--filter-multi-behavior", action="store_true",
                   help="keep only users with two or more behavior types")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="synthetic cascade dataset")
    p.add_argument("--users", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--behaviors", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--signal-scale", type=float)
    p.add_argument("--funnel", help="comma-separated per-level pass probabilities")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", parents=[common], help="leave-one-out split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--random", action="store_true", help="hold out a random item even when timestamps exist")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--dataset", help="dataset.npz to split and train on")
    p.add_argument("--split", help="split.npz to train on")
    p.add_argument("--evaluate", action="store_true", help="also write a test report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--run", help="train run directory (checkpoint.json + split.npz)")
    p.add_argument("--checkpoint")
    p.add_argument("--split")
    p.add_argument("--ks", help="comma-separated cutoffs (default 50,80,100,200)")
    p.add_argument("--groups", help="sparsity groups, e.g. 5-8,9-12,>12")
    p.add_argument("--exclude", choices=["target", "any", "none"])
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="loss-weight grid over the simplex")
    p.add_argument("--dataset")
    p.add_argument("--split")
    p.add_argument("--divisions", type=int, help="grid resolution 1/d")
    p.add_argument("--step", type=float, help="grid step, e.g. 0.1")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, FileNotFoundError, TrainingDiverged, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
