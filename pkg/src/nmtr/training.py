"""Joint multi-task training of the cascaded model.

A mini-batch is built by drawing observed ``(u, i)`` pairs and, for every
behavior the pair is observed under, emitting one positive instance plus
``negative_ratio`` negatives drawn from items ``u`` has not interacted with
under that behavior. The loss is the λ-weighted log loss over all instances,
averaged per instance within a batch.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import BehaviorDataset, DataError
from .model import NmtrModel
from .numeric import DTYPE, Optimizer

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
MAX_REJECTIONS = 100


class TrainingDiverged(RuntimeError):
    pass


def validate_loss_weights(weights, num_behaviors: int) -> tuple[float, ...]:
    w = tuple(float(x) for x in weights)
    if len(w) != num_behaviors:
        raise ValueError(f"loss weights have {len(w)} entries for {num_behaviors} behaviors")
    if any(x < 0 or not math.isfinite(x) for x in w):
        raise ValueError(f"loss weights must be finite and non-negative: {w}")
    if abs(sum(w) - 1.0) > 1e-9:
        raise ValueError(f"loss weights must sum to 1, got {sum(w)!r}")
    return w


def default_loss_weights(num_behaviors: int, unit: str = "gmf") -> tuple[float, ...]:
    if num_behaviors == 2:
        return (0.5, 0.5) if unit == "mlp" else (0.4, 0.6)
    return tuple([1.0 / num_behaviors] * num_behaviors)


@dataclass
class TrainConfig:
    loss_weights: tuple[float, ...] | None = None
    negative_ratio: int = 4
    batch_size: int = 256
    epochs: int = 20
    optimizer: str = "adagrad"
    learning_rate: float = 0.01
    l2: tuple[float, float] = (0.0, 1e-5)
    seed: int = 0
    mode: str = "multi_task"
    # "multiset": a pair seen under k behaviors is k times as likely; "distinct": uniform
    pair_sampling: str = "multiset"

    def __post_init__(self):
        if self.negative_ratio < 1:
            raise ValueError("negative_ratio must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.mode not in ("multi_task", "sequential"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.pair_sampling not in ("multiset", "distinct"):
            raise ValueError(f"unknown pair_sampling {self.pair_sampling!r}")
        if len(self.l2) != 2 or min(self.l2) < 0:
            raise ValueError("l2 must be a pair of non-negative floats (embeddings, other)")
        self.l2 = tuple(float(x) for x in self.l2)
        if self.loss_weights is not None:
            self.loss_weights = tuple(float(x) for x in self.loss_weights)

    def weights_for(self, num_behaviors: int, unit: str = "gmf") -> tuple[float, ...]:
        w = self.loss_weights if self.loss_weights is not None else default_loss_weights(num_behaviors, unit)
        return validate_loss_weights(w, num_behaviors)


@dataclass(frozen=True)
class TrainingInstance:
    user: int
    item: int
    level: int
    label: int


@dataclass
class InstanceBatch:
    users: np.ndarray
    items: np.ndarray
    levels: np.ndarray
    labels: np.ndarray
    num_pairs: int = 0

    def __len__(self):
        return len(self.users)

    def instances(self) -> list[TrainingInstance]:
        return [TrainingInstance(*t) for t in zip(self.users.tolist(), self.items.tolist(),
                                                  self.levels.tolist(), self.labels.tolist())]


# loss


def joint_loss(probs, labels, levels, weights) -> float:
    """``-sum_r w_r (sum_pos log y + sum_neg log(1 - y))`` with logs clamped at 1e-12."""
    probs = np.asarray(probs, dtype=DTYPE)
    labels = np.asarray(labels, dtype=DTYPE)
    levels = np.asarray(levels, dtype=np.int64)
    w = np.asarray(weights, dtype=DTYPE)
    if len(levels) and (levels.max() >= len(w) or levels.min() < 0):
        raise ValueError(f"instance level out of range for {len(w)} loss weights")
    ll = labels * np.log(np.maximum(probs, LOG_CLAMP)) + (1 - labels) * np.log(np.maximum(1 - probs, LOG_CLAMP))
    return float(-(w[levels] * ll).sum())


def joint_loss_upstream(probs, labels, levels, weights) -> np.ndarray:
    """Per-instance ``d joint_loss / d y`` matching the clamped loss."""
    probs = np.asarray(probs, dtype=DTYPE)
    labels = np.asarray(labels, dtype=DTYPE)
    w = np.asarray(weights, dtype=DTYPE)[np.asarray(levels, dtype=np.int64)]
    pos = np.where(probs > LOG_CLAMP, 1.0 / np.maximum(probs, LOG_CLAMP), 0.0)
    neg = np.where(1 - probs > LOG_CLAMP, 1.0 / np.maximum(1 - probs, LOG_CLAMP), 0.0)
    return -w * (labels * pos - (1 - labels) * neg)


# sampling


def sample_negatives(ds: BehaviorDataset, users: np.ndarray, level: int | np.ndarray,
                     rng: np.random.Generator, exclude=None) -> np.ndarray:
    """Uniform items ``j`` with ``(u, j)`` unobserved under ``level`` (rejection sampling).

    ``exclude(users, items) -> bool mask`` overrides the membership test.
    """
    users = np.asarray(users, dtype=np.int64)
    levels = np.broadcast_to(np.asarray(level, dtype=np.int64), users.shape)
    if exclude is None:
        def exclude(us, js, lv):
            hit = np.zeros(len(us), dtype=bool)
            for r in np.unique(lv):
                m = lv == r
                hit[m] = ds.contains_many(us[m], js[m], int(r))
            return hit
    N = ds.num_items
    items = rng.integers(N, size=len(users))
    bad = exclude(users, items, levels)
    for _ in range(MAX_REJECTIONS):
        if not bad.any():
            return items
        idx = np.flatnonzero(bad)
        items[idx] = rng.integers(N, size=len(idx))
        bad[idx] = exclude(users[idx], items[idx], levels[idx])
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise DataError(f"could not sample a negative for user {users[k]} at level {levels[k]} "
                        f"after {MAX_REJECTIONS} tries")
    return items


class CascadeSampler:
    """Draws mini-batches of positive/negative instances across behavior levels."""

    def __init__(self, ds: BehaviorDataset, negative_ratio: int = 4, levels=None,
                 pair_sampling: str = "multiset"):
        self.ds = ds
        self.negative_ratio = int(negative_ratio)
        self.levels = list(range(ds.num_behaviors)) if levels is None else [int(r) for r in levels]
        chosen = [ds.pairs[r] for r in self.levels]
        if sum(len(c) for c in chosen) == 0:
            raise DataError("no observed interactions to sample from")
        stacked = np.concatenate(chosen, axis=0)
        distinct = np.unique(stacked[:, 0] * ds.num_items + stacked[:, 1])
        self.epoch_pairs = len(distinct)
        if pair_sampling == "multiset":
            self.pool = stacked
        else:
            self.pool = np.stack([distinct // ds.num_items, distinct % ds.num_items], axis=1)
        self._saturated = [ds.user_counts(r) >= ds.num_items for r in self.levels]
        member = np.stack([ds.contains_many(self.pool[:, 0], self.pool[:, 1], r) for r in self.levels], axis=1)
        self._per_pair = max(float(member.sum(axis=1).mean()) * (1 + self.negative_ratio), 1.0)

    def _membership(self, users, items):
        return np.stack([self.ds.contains_many(users, items, r) for r in self.levels], axis=1)

    def sample(self, batch_size: int, rng: np.random.Generator) -> InstanceBatch:
        K = 1 + self.negative_ratio
        users = np.empty(0, dtype=np.int64)
        items = np.empty(0, dtype=np.int64)
        member = np.empty((0, len(self.levels)), dtype=bool)
        total = 0
        while total < batch_size:
            n = int(math.ceil((batch_size - total) / self._per_pair)) + 4
            pick = self.pool[rng.integers(len(self.pool), size=n)]
            m = self._membership(pick[:, 0], pick[:, 1])
            users = np.concatenate([users, pick[:, 0]])
            items = np.concatenate([items, pick[:, 1]])
            member = np.concatenate([member, m])
            total += int(m.sum()) * K
        per_pair = np.cumsum(member.sum(axis=1) * K)
        stop = int(np.searchsorted(per_pair, batch_size)) + 1
        users, items, member = users[:stop], items[:stop], member[:stop]

        pair_idx, lvl_idx = np.nonzero(member)
        pos_u = users[pair_idx]
        pos_i = items[pair_idx]
        pos_r = np.asarray(self.levels, dtype=np.int64)[lvl_idx]
        for k, r in enumerate(self.levels):
            sat = self._saturated[k][pos_u[lvl_idx == k]]
            if sat.any():
                u = int(pos_u[lvl_idx == k][sat][0])
                raise DataError(f"user {u} interacted with every item under level {r}; "
                                "negative sampling is impossible")
        neg_u = np.repeat(pos_u, self.negative_ratio)
        neg_r = np.repeat(pos_r, self.negative_ratio)
        neg_i = sample_negatives(self.ds, neg_u, neg_r, rng)

        P = len(pos_u)
        out_u = np.empty((P, K), dtype=np.int64)
        out_i = np.empty((P, K), dtype=np.int64)
        out_u[:, 0] = pos_u
        out_u[:, 1:] = neg_u.reshape(P, -1)
        out_i[:, 0] = pos_i
        out_i[:, 1:] = neg_i.reshape(P, -1)
        out_r = np.repeat(pos_r[:, None], K, axis=1)
        out_y = np.zeros((P, K), dtype=np.int64)
        out_y[:, 0] = 1
        return InstanceBatch(out_u.ravel(), out_i.ravel(), out_r.ravel(), out_y.ravel(), num_pairs=stop)


def sample_minibatch(ds: BehaviorDataset, batch_size: int, negative_ratio: int,
                     rng: np.random.Generator, levels=None) -> InstanceBatch:
    return CascadeSampler(ds, negative_ratio, levels).sample(batch_size, rng)


# training loops


@dataclass
class TrainResult:
    model: NmtrModel
    losses: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    phases: list[int] = field(default_factory=list)

    def trace_rows(self) -> list[dict]:
        return [{"epoch": e + 1, "loss": loss, "wall_ms": ms, "phase": ph}
                for e, (loss, ms, ph) in enumerate(zip(self.losses, self.wall_ms, self.phases))]


def apply_l2(model, l2: tuple[float, float]) -> None:
    """Set the regularisation of embedding params and of everything else."""
    emb = {id(p) for p in model.embeddings.params()}
    for p in model.params():
        p.l2 = l2[0] if id(p) in emb else l2[1]


def make_optimizer(model, config: TrainConfig) -> Optimizer:
    return Optimizer(model.params(), kind=config.optimizer, learning_rate=config.learning_rate)


def _run_phase(model: NmtrModel, ds: BehaviorDataset, config: TrainConfig, weights, levels,
               rng, result: TrainResult, phase: int, callback=None, grad_hook=None) -> None:
    sampler = CascadeSampler(ds, config.negative_ratio, levels, config.pair_sampling)
    opt = make_optimizer(model, config)
    opt.zero_grad()
    R = model.num_behaviors
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        consumed = 0
        loss_sum = 0.0
        n_inst = 0
        while consumed < sampler.epoch_pairs:
            batch = sampler.sample(config.batch_size, rng)
            consumed += batch.num_pairs
            B = len(batch)
            cascade = model.forward(batch.users, batch.items)
            rows = np.arange(B)
            probs = cascade.probs[rows, batch.levels]
            loss = joint_loss(probs, batch.labels, batch.levels, weights)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"phase {phase} epoch {epoch + 1}: loss is {loss}")
            upstream = np.zeros((B, R), dtype=DTYPE)
            upstream[rows, batch.levels] = joint_loss_upstream(probs, batch.labels, batch.levels, weights) / B
            model.backward(upstream, cascade)
            if grad_hook is not None:
                grad_hook(model)
            opt.step()
            loss_sum += loss
            n_inst += B
        mean = loss_sum / max(n_inst, 1)
        result.losses.append(mean)
        result.wall_ms.append((time.perf_counter() - t0) * 1000.0)
        result.phases.append(phase)
        log.debug("phase %d epoch %d loss %.6f", phase, epoch + 1, mean)
        if callback is not None:
            callback(len(result.losses), model, mean)


def train_multitask(model: NmtrModel, ds: BehaviorDataset, config: TrainConfig,
                    callback=None, grad_hook=None, unit: str = "gmf") -> TrainResult:
    """Train all behavior levels jointly under the λ-weighted loss.

    ``callback(epoch, model, loss)`` runs after each epoch; ``grad_hook(model)``
    runs after each backward pass, before the optimizer step.
    """
    if ds.num_behaviors != model.num_behaviors:
        raise ValueError(f"dataset has {ds.num_behaviors} behaviors, model has {model.num_behaviors}")
    weights = config.weights_for(model.num_behaviors, unit)
    apply_l2(model, config.l2)
    rng = np.random.default_rng(config.seed)
    result = TrainResult(model)
    _run_phase(model, ds, config, weights, None, rng, result, 0, callback, grad_hook)
    return result


def train_sequential(model: NmtrModel, ds: BehaviorDataset, config: TrainConfig,
                     callback=None, grad_hook=None) -> TrainResult:
    """Train level 1, then level 2, and so on, each phase seeing only its own level.

    Each phase gets the full epoch budget and a fresh optimizer; nothing is
    frozen between phases.
    """
    if ds.num_behaviors != model.num_behaviors:
        raise ValueError(f"dataset has {ds.num_behaviors} behaviors, model has {model.num_behaviors}")
    R = model.num_behaviors
    apply_l2(model, config.l2)
    rng = np.random.default_rng(config.seed)
    result = TrainResult(model)
    for r in range(R):
        weights = tuple(1.0 if k == r else 0.0 for k in range(R))
        levels = None if R == 1 else [r]
        _run_phase(model, ds, config, weights, levels, rng, result, r, callback, grad_hook)
    return result


def train(model: NmtrModel, ds: BehaviorDataset, config: TrainConfig, **kwargs) -> TrainResult:
    if config.mode == "sequential":
        kwargs.pop("unit", None)
        return train_sequential(model, ds, config, **kwargs)
    return train_multitask(model, ds, config, **kwargs)


def with_weights(config: TrainConfig, weights) -> TrainConfig:
    return replace(config, loss_weights=tuple(weights))
