"""Cascaded multi-behavior predictor over one shared embedding table.

For a pair ``(u, i)`` with embeddings ``p = P[u]`` and ``q = Q[i]``::

    y1 = sigmoid(f1(p, q) + b1[i])
    yr = sigmoid(y(r-1) + fr(p, q) + br[i])     for r = 2..R

The previous level enters as a probability, not a logit. There is no user or
global bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import DTYPE, Param, embedding_normal, sigmoid
from .units import GmfUnit, InteractionUnit, UnitKind, make_unit


class EmbeddingTable:
    def __init__(self, num_users: int, num_items: int, embedding_size: int,
                 rng: np.random.Generator | None = None, std: float = 0.01, l2: float = 0.0):
        rng = rng or np.random.default_rng(0)
        self.embedding_size = embedding_size
        self.P = Param("P", embedding_normal(rng, (num_users, embedding_size), std), l2=l2)
        self.Q = Param("Q", embedding_normal(rng, (num_items, embedding_size), std), l2=l2)

    @property
    def num_users(self) -> int:
        return self.P.shape[0]

    @property
    def num_items(self) -> int:
        return self.Q.shape[0]

    def params(self) -> list[Param]:
        return [self.P, self.Q]


@dataclass
class Cascade:
    """Forward intermediates for one batch, consumed by ``NmtrModel.backward``."""

    users: np.ndarray
    items: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    unit_caches: list
    p: np.ndarray
    q: np.ndarray


class NmtrModel:
    def __init__(self, embeddings: EmbeddingTable, units: list[InteractionUnit], biases: list[Param],
                 behavior_names: tuple[str, ...] | None = None):
        if len(units) != len(biases) or not units:
            raise ValueError("need one interaction unit and one item-bias vector per behavior")
        for unit in units:
            if unit.embedding_size != embeddings.embedding_size:
                raise ValueError("every unit must consume the shared embedding size")
        self.embeddings = embeddings
        self.units = list(units)
        self.biases = list(biases)
        self.behavior_names = tuple(behavior_names) if behavior_names else tuple(
            f"b{r + 1}" for r in range(len(units)))
        self._cache: Cascade | None = None

    @classmethod
    def build(cls, num_users: int, num_items: int, num_behaviors: int, unit: str | list = "gmf",
              embedding_size: int = 64, mlp_layers: int = 3, seed: int = 0,
              l2: tuple[float, float] = (0.0, 0.0), embedding_std: float = 0.01,
              final_width: int | None = None, behavior_names=None) -> "NmtrModel":
        """Fresh model. ``unit`` is one kind for all levels, or a list of kinds.

        The extra kind ``"mf"`` is GMF with its weight vector frozen to ones,
        i.e. a plain inner product.
        """
        rng = np.random.default_rng(seed)
        l2_emb, l2_other = l2
        emb = EmbeddingTable(num_users, num_items, embedding_size, rng, embedding_std, l2_emb)
        kinds = unit if isinstance(unit, (list, tuple)) else [unit] * num_behaviors
        if len(kinds) != num_behaviors:
            raise ValueError(f"got {len(kinds)} unit kinds for {num_behaviors} behaviors")
        units = []
        for r, kind in enumerate(kinds):
            if kind == "mf":
                units.append(GmfUnit(embedding_size, name=f"unit{r}", h=np.ones(embedding_size),
                                     trainable_h=False))
            else:
                units.append(make_unit(kind, embedding_size, rng, num_layers=mlp_layers, l2=l2_other,
                                       name=f"unit{r}", final_width=final_width))
        biases = [Param(f"bias{r}", np.zeros(num_items), l2=l2_other) for r in range(num_behaviors)]
        return cls(emb, units, biases, behavior_names)

    @property
    def num_behaviors(self) -> int:
        return len(self.units)

    @property
    def num_users(self) -> int:
        return self.embeddings.num_users

    @property
    def num_items(self) -> int:
        return self.embeddings.num_items

    def params(self) -> list[Param]:
        out = self.embeddings.params()
        for unit, bias in zip(self.units, self.biases):
            out += unit.params() + [bias]
        return out

    def level_params(self, r: int) -> list[Param]:
        """Parameters read only by level ``r`` (its unit and item bias)."""
        return self.units[r].params() + [self.biases[r]]

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    # forward

    def _lookup(self, users, items):
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        items = np.asarray(items, dtype=np.int64).reshape(-1)
        if users.shape != items.shape:
            raise ValueError("users and items must have the same length")
        if len(users) and (users.min() < 0 or users.max() >= self.num_users):
            raise IndexError("user index out of range")
        if len(items) and (items.min() < 0 or items.max() >= self.num_items):
            raise IndexError("item index out of range")
        return users, items, self.embeddings.P.value[users], self.embeddings.Q.value[items]

    def _run(self, users, items, train):
        users, items, p, q = self._lookup(users, items)
        B, R = len(users), self.num_behaviors
        logits = np.empty((B, R), dtype=DTYPE)
        probs = np.empty((B, R), dtype=DTYPE)
        caches = []
        prev = None
        for r, (unit, bias) in enumerate(zip(self.units, self.biases)):
            f, cache = unit._forward(p, q, train)
            caches.append(cache)
            a = f + bias.value[items]
            if prev is not None:
                a = a + prev
            logits[:, r] = a
            prev = probs[:, r] = sigmoid(a)
        return Cascade(users, items, logits, probs, caches, p, q)

    def forward(self, users, items) -> Cascade:
        """Batch forward that keeps intermediates for one ``backward`` call."""
        self._cache = self._run(users, items, train=True)
        return self._cache

    def predict(self, users, items) -> np.ndarray:
        """``(B, R)`` probabilities without touching the backward cache."""
        return self._run(users, items, train=False).probs

    def predict_logits(self, users, items) -> np.ndarray:
        return self._run(users, items, train=False).logits

    def predict_all(self, u: int, i: int) -> np.ndarray:
        return self.predict([u], [i])[0]

    def score_users(self, users) -> np.ndarray:
        """Target-level scores of every item for each user, shape ``(len(users), N)``."""
        users = np.asarray(users, dtype=np.int64)
        N = self.num_items
        uu = np.repeat(users, N)
        ii = np.tile(np.arange(N), len(users))
        return self.predict(uu, ii)[:, -1].reshape(len(users), N)

    def score_target(self, u: int, items) -> list[int]:
        """Items sorted by target probability, descending; ties by ascending index."""
        items = np.asarray(items, dtype=np.int64)
        if items.size == 0:
            raise ValueError("item set is empty")
        scores = self.predict(np.full(len(items), u), items)[:, -1]
        order = np.lexsort((items, -scores))
        return items[order].tolist()

    # backward

    def backward(self, upstream, cascade: Cascade | None = None) -> None:
        """Accumulate gradients given ``d loss / d y_r`` for every level, shape ``(B, R)``.

        A level's gradient combines its own upstream with everything flowing
        back from the levels above it through the cascade.
        """
        cascade = cascade or self._cache
        if cascade is None:
            raise RuntimeError("backward called without a cached forward pass")
        self._cache = None
        up = np.asarray(upstream, dtype=DTYPE).reshape(cascade.probs.shape)
        d_pre = np.zeros_like(up)
        carry = np.zeros(up.shape[0], dtype=DTYPE)
        for r in range(self.num_behaviors - 1, -1, -1):
            s = cascade.probs[:, r]
            d_pre[:, r] = (up[:, r] + carry) * s * (1.0 - s)
            carry = d_pre[:, r]
        self.backward_logits(d_pre, cascade)

    def backward_logits(self, d_logits, cascade: Cascade | None = None) -> None:
        """Accumulate gradients given ``d loss / d logit_r`` (the pre-sigmoid sums)."""
        cascade = cascade or self._cache
        if cascade is None:
            raise RuntimeError("backward called without a cached forward pass")
        self._cache = None
        d_logits = np.asarray(d_logits, dtype=DTYPE).reshape(cascade.logits.shape)
        dp = np.zeros_like(cascade.p)
        dq = np.zeros_like(cascade.q)
        for r, (unit, bias) in enumerate(zip(self.units, self.biases)):
            d = d_logits[:, r]
            if not np.any(d):
                continue
            if bias.trainable:
                np.add.at(bias.grad, cascade.items, d)
            gp, gq = unit._backward(cascade.unit_caches[r], d)
            dp += gp
            dq += gq
        emb = self.embeddings
        np.add.at(emb.P.grad, cascade.users, dp)
        np.add.at(emb.Q.grad, cascade.items, dq)

    def nmtr_backward(self, u: int, i: int, upstream) -> None:
        """Single-pair backward; requires the last ``forward`` to have been on ``(u, i)``."""
        c = self._cache
        if c is None or len(c.users) != 1 or c.users[0] != u or c.items[0] != i:
            raise RuntimeError(f"no cached forward pass for pair ({u}, {i})")
        self.backward(np.asarray(upstream, dtype=DTYPE).reshape(1, -1))

    # description

    def spec(self) -> dict:
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "embedding_size": self.embeddings.embedding_size,
            "behaviors": list(self.behavior_names),
            "units": [u.shapes() for u in self.units],
        }


def unit_kinds(model: NmtrModel) -> list[str]:
    out = []
    for unit in model.units:
        if unit.kind is UnitKind.GMF and not unit.h.trainable:
            out.append("mf")
        else:
            out.append(unit.kind.value)
    return out
