"""Comparison models: single-behavior NCF, BPR-MF, CMF and multi-channel BPR.

Single-behavior NCF and the pairwise (BPR / MC) predictors reuse
``NmtrModel`` with one level; with unit ``"mf"`` its score is ``p . q + b_i``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import BehaviorDataset, DataError
from .model import NmtrModel
from .numeric import DTYPE, Optimizer, Param, embedding_normal
from .training import (
    CascadeSampler,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    apply_l2,
    make_optimizer,
    sample_negatives,
    train_multitask,
)

log = logging.getLogger(__name__)


# single-behavior NCF


def build_single(ds: BehaviorDataset, unit: str = "gmf", embedding_size: int = 64, mlp_layers: int = 3,
                 seed: int = 0, embedding_std: float = 0.01) -> NmtrModel:
    return NmtrModel.build(ds.num_users, ds.num_items, 1, unit, embedding_size, mlp_layers, seed,
                           embedding_std=embedding_std, behavior_names=(ds.schema.target,))


def train_single(model: NmtrModel, ds: BehaviorDataset, config: TrainConfig, **kwargs) -> TrainResult:
    """Pointwise log-loss NCF on the target behavior alone."""
    target_only = ds if ds.num_behaviors == 1 else ds.restrict_to_target()
    cfg = replace(config, loss_weights=(1.0,), mode="multi_task")
    return train_multitask(model, target_only, cfg, **kwargs)


# pairwise losses


def bpr_loss(x_pos, x_neg) -> float:
    """``sum -log sigmoid(x_pos - x_neg)``, computed stably."""
    diff = np.asarray(x_pos, dtype=DTYPE) - np.asarray(x_neg, dtype=DTYPE)
    return float(np.logaddexp(0.0, -diff).sum())


def bpr_grad(x_pos, x_neg) -> np.ndarray:
    """``d bpr_loss / d x_pos`` per triple (the negative side gets the opposite sign)."""
    diff = np.asarray(x_pos, dtype=DTYPE) - np.asarray(x_neg, dtype=DTYPE)
    return -np.exp(-np.logaddexp(0.0, diff))


def pairwise_step(model: NmtrModel, users, pos, neg) -> float:
    """Forward/backward one batch of ``(u, i, j)`` triples on a one-level model."""
    T = len(users)
    cascade = model.forward(np.concatenate([users, users]), np.concatenate([pos, neg]))
    x = cascade.logits[:, 0]
    loss = bpr_loss(x[:T], x[T:])
    g = bpr_grad(x[:T], x[T:]) / T
    model.backward_logits(np.concatenate([g, -g])[:, None], cascade)
    return loss


def _train_pairwise(model: NmtrModel, config: TrainConfig, draw, epoch_positives: int,
                    callback=None) -> TrainResult:
    apply_l2(model, config.l2)
    opt = make_optimizer(model, config)
    opt.zero_grad()
    rng = np.random.default_rng(config.seed)
    per_batch = max(1, math.ceil(config.batch_size / config.negative_ratio))
    result = TrainResult(model)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        done, loss_sum, n = 0, 0.0, 0
        while done < epoch_positives:
            users, pos, neg = draw(per_batch, rng)
            done += per_batch
            if len(users) == 0:
                continue
            loss = pairwise_step(model, users, pos, neg)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"epoch {epoch + 1}: loss is {loss}")
            opt.step()
            loss_sum += loss
            n += len(users)
        result.losses.append(loss_sum / max(n, 1))
        result.wall_ms.append((time.perf_counter() - t0) * 1000.0)
        result.phases.append(0)
        if callback is not None:
            callback(epoch + 1, model, result.losses[-1])
    return result


# BPR


def build_bpr_mf(ds: BehaviorDataset, embedding_size: int = 64, seed: int = 0,
                 embedding_std: float = 0.01) -> NmtrModel:
    return build_single(ds, "mf", embedding_size, seed=seed, embedding_std=embedding_std)


def train_bpr(model: NmtrModel, ds: BehaviorDataset, config: TrainConfig, callback=None) -> TrainResult:
    """BPR on the target behavior with uniform positives and uniform unobserved negatives."""
    t = ds.schema.target_index
    target = ds.pairs[t]
    if len(target) == 0:
        raise DataError("target behavior has no interactions")
    ratio = config.negative_ratio

    def draw(n, rng):
        pick = target[rng.integers(len(target), size=n)]
        users = np.repeat(pick[:, 0], ratio)
        pos = np.repeat(pick[:, 1], ratio)
        neg = sample_negatives(ds, users, t, rng)
        return users, pos, neg

    return _train_pairwise(model, config, draw, len(target), callback)


def train_bpr_mf(ds: BehaviorDataset, config: TrainConfig, embedding_size: int = 64, seed: int = 0,
                 embedding_std: float = 0.01) -> TrainResult:
    model = build_bpr_mf(ds, embedding_size, seed, embedding_std)
    return train_bpr(model, ds, config)


# multi-channel BPR


@dataclass(frozen=True)
class McSamplingDist:
    """Stratum weights for multi-channel negative sampling.

    ``negative`` has one entry per behavior: entries ``0..R-2`` weight items
    whose highest observed level is that behavior, the last entry weights
    unobserved items. For two behaviors ``(0.3, 0.7)`` means 30% viewed-not-bought
    and 70% never-viewed. ``positive`` weights observed pairs by their highest
    level; ``None`` is uniform over observed pairs.
    """

    negative: tuple[float, ...]
    positive: tuple[float, ...] | None = None

    def __post_init__(self):
        for name, w in (("negative", self.negative), ("positive", self.positive)):
            if w is None:
                continue
            if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
                raise ValueError(f"{name} weights must be non-negative and sum to 1: {w}")
        object.__setattr__(self, "negative", tuple(float(x) for x in self.negative))
        if self.positive is not None:
            object.__setattr__(self, "positive", tuple(float(x) for x in self.positive))


@dataclass
class McBatch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray
    pos_levels: np.ndarray
    neg_levels: np.ndarray  # -1 marks unobserved


class McSampler:
    """Level-aware pairwise sampler: negatives sit strictly below the positive's level."""

    def __init__(self, ds: BehaviorDataset, dist: McSamplingDist, negative_ratio: int = 4):
        R = ds.num_behaviors
        if len(dist.negative) != R:
            raise ValueError(f"negative weights need {R} entries, got {len(dist.negative)}")
        if dist.positive is not None and len(dist.positive) != R:
            raise ValueError(f"positive weights need {R} entries, got {len(dist.positive)}")
        self.ds = ds
        self.dist = dist
        self.negative_ratio = negative_ratio
        self.pairs = ds.union_pairs
        self.levels = ds.max_level
        if len(self.pairs) == 0:
            raise DataError("no observed interactions to sample from")
        if dist.positive is None:
            w = np.ones(len(self.pairs))
        else:
            w = np.asarray(dist.positive)[self.levels]
        if w.sum() <= 0:
            raise ValueError("positive weights select no observed pair")
        self._pos_cdf = np.cumsum(w / w.sum())
        self._indptr = np.searchsorted(self.pairs[:, 0], np.arange(ds.num_users + 1))
        self._n_observed = np.diff(self._indptr)
        self._warned = set()

    def _draw_positive(self, n, rng):
        idx = np.searchsorted(self._pos_cdf, rng.random(n), side="right")
        return np.minimum(idx, len(self.pairs) - 1)

    def sample(self, num_positives: int, rng: np.random.Generator) -> McBatch:
        ds, R = self.ds, self.ds.num_behaviors
        wneg = np.asarray(self.dist.negative)
        idx = self._draw_positive(num_positives, rng)
        users, pos, negs, plev, nlev = [], [], [], [], []
        unobserved_users = []
        for k in idx.tolist():
            u, i = (int(x) for x in self.pairs[k])
            level = int(self.levels[k])
            lo, hi = self._indptr[u], self._indptr[u + 1]
            u_items = self.pairs[lo:hi, 1]
            u_levels = self.levels[lo:hi]
            strata = []
            weights = []
            for s in range(level):
                if wneg[s] > 0 and np.any(u_levels == s):
                    strata.append(s)
                    weights.append(wneg[s])
            if wneg[R - 1] > 0 and self._n_observed[u] < ds.num_items:
                strata.append(-1)
                weights.append(wneg[R - 1])
            if not strata:
                if u not in self._warned:
                    log.warning("user %d: no admissible negative stratum for level %d; skipped", u, level)
                    self._warned.add(u)
                continue
            weights = np.asarray(weights) / np.sum(weights)
            choice = rng.choice(len(strata), size=self.negative_ratio, p=weights)
            for c in choice.tolist():
                s = strata[c]
                users.append(u)
                pos.append(i)
                plev.append(level)
                nlev.append(s)
                if s >= 0:
                    cand = u_items[u_levels == s]
                    negs.append(int(cand[rng.integers(len(cand))]))
                else:
                    negs.append(-1)
                    unobserved_users.append(len(negs) - 1)
        users = np.asarray(users, dtype=np.int64)
        negs = np.asarray(negs, dtype=np.int64)
        if unobserved_users:
            slots = np.asarray(unobserved_users)
            negs[slots] = sample_negatives(ds, users[slots], 0, rng,
                                           exclude=lambda us, js, _lv: ds.contains_any(us, js))
        return McBatch(users, np.asarray(pos, dtype=np.int64), negs,
                       np.asarray(plev, dtype=np.int64), np.asarray(nlev, dtype=np.int64))


def train_mc(model: NmtrModel, ds: BehaviorDataset, dist: McSamplingDist, config: TrainConfig,
             callback=None) -> TrainResult:
    """Pairwise training of a one-level predictor with multi-channel sampling."""
    if model.num_behaviors != 1:
        raise ValueError("multi-channel training wraps a single-level predictor")
    sampler = McSampler(ds, dist, config.negative_ratio)

    def draw(n, rng):
        b = sampler.sample(n, rng)
        return b.users, b.pos_items, b.neg_items

    return _train_pairwise(model, config, draw, len(sampler.pairs), callback)


def default_mc_dist(num_behaviors: int) -> McSamplingDist:
    """Uniform over the admissible negative strata."""
    return McSamplingDist(tuple([1.0 / num_behaviors] * num_behaviors))


# collective matrix factorization


class CmfModel:
    """One shared item matrix, one user matrix per behavior, squared loss.

    Ranking uses the target behavior's user matrix.
    """

    def __init__(self, num_users: int, num_items: int, num_behaviors: int, embedding_size: int = 64,
                 behavior_weights=None, seed: int = 0, embedding_std: float = 0.01, behavior_names=None):
        rng = np.random.default_rng(seed)
        c = np.ones(num_behaviors) if behavior_weights is None else np.asarray(behavior_weights, dtype=DTYPE)
        if len(c) != num_behaviors:
            raise ValueError(f"need {num_behaviors} behavior weights, got {len(c)}")
        if np.any(c < 0) or not np.any(c > 0):
            raise ValueError(f"behavior weights must be non-negative and not all zero: {c.tolist()}")
        self.behavior_weights = c
        self.embedding_size = embedding_size
        self.Q = Param("Q", embedding_normal(rng, (num_items, embedding_size), embedding_std))
        self.P = [Param(f"P{r}", embedding_normal(rng, (num_users, embedding_size), embedding_std))
                  for r in range(num_behaviors)]
        self.behavior_names = tuple(behavior_names) if behavior_names else tuple(
            f"b{r + 1}" for r in range(num_behaviors))

    @property
    def num_behaviors(self) -> int:
        return len(self.P)

    @property
    def num_users(self) -> int:
        return self.P[0].shape[0]

    @property
    def num_items(self) -> int:
        return self.Q.shape[0]

    def params(self) -> list[Param]:
        return self.P + [self.Q]

    def predict(self, users, items, level: int | None = None) -> np.ndarray:
        r = self.num_behaviors - 1 if level is None else level
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        return np.einsum("be,be->b", self.P[r].value[users], self.Q.value[items])

    def score_users(self, users) -> np.ndarray:
        return self.P[-1].value[np.asarray(users, dtype=np.int64)] @ self.Q.value.T

    def loss(self, users, items, levels, labels) -> float:
        """``sum c_r (y - p_u^r . q_i)^2`` over the given instances."""
        users, items, levels = (np.asarray(a, dtype=np.int64) for a in (users, items, levels))
        x = np.einsum("be,be->b", self._user_rows(users, levels), self.Q.value[items])
        err = np.asarray(labels, dtype=DTYPE) - x
        return float((self.behavior_weights[levels] * err * err).sum())

    def _user_rows(self, users, levels):
        rows = np.empty((len(users), self.embedding_size))
        for r in range(self.num_behaviors):
            m = levels == r
            rows[m] = self.P[r].value[users[m]]
        return rows

    def backward(self, users, items, levels, labels, scale: float = 1.0) -> float:
        users, items, levels = (np.asarray(a, dtype=np.int64) for a in (users, items, levels))
        p = self._user_rows(users, levels)
        q = self.Q.value[items]
        x = np.einsum("be,be->b", p, q)
        err = np.asarray(labels, dtype=DTYPE) - x
        c = self.behavior_weights[levels]
        dx = -2.0 * c * err * scale
        for r in range(self.num_behaviors):
            m = levels == r
            if m.any():
                np.add.at(self.P[r].grad, users[m], dx[m, None] * q[m])
        np.add.at(self.Q.grad, items, dx[:, None] * p)
        return float((c * err * err).sum())

    def spec(self) -> dict:
        return {"num_users": self.num_users, "num_items": self.num_items,
                "embedding_size": self.embedding_size, "behaviors": list(self.behavior_names),
                "behavior_weights": self.behavior_weights.tolist()}


def train_cmf(ds: BehaviorDataset, config: TrainConfig, embedding_size: int = 64, behavior_weights=None,
              seed: int = 0, embedding_std: float = 0.01, model: CmfModel | None = None,
              callback=None) -> TrainResult:
    """Weighted squared-loss CMF with negatives sampled as for the cascaded model."""
    if model is None:
        model = CmfModel(ds.num_users, ds.num_items, ds.num_behaviors, embedding_size, behavior_weights,
                         seed, embedding_std, ds.schema.names)
    for p in model.params():
        p.l2 = config.l2[0]
    opt = Optimizer(model.params(), kind=config.optimizer, learning_rate=config.learning_rate)
    opt.zero_grad()
    rng = np.random.default_rng(config.seed)
    sampler = CascadeSampler(ds, config.negative_ratio, None, config.pair_sampling)
    result = TrainResult(model)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        done, loss_sum, n = 0, 0.0, 0
        while done < sampler.epoch_pairs:
            b = sampler.sample(config.batch_size, rng)
            done += b.num_pairs
            loss = model.backward(b.users, b.items, b.levels, b.labels, scale=1.0 / len(b))
            if not math.isfinite(loss):
                raise TrainingDiverged(f"epoch {epoch + 1}: loss is {loss}")
            opt.step()
            loss_sum += loss
            n += len(b)
        result.losses.append(loss_sum / max(n, 1))
        result.wall_ms.append((time.perf_counter() - t0) * 1000.0)
        result.phases.append(0)
        if callback is not None:
            callback(epoch + 1, model, result.losses[-1])
    return result
