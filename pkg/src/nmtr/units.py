"""NCF interaction functions: GMF, MLP and NeuMF.

Each unit maps a batch of user/item embeddings ``(p, q)`` of shape ``(B, E)``
to a pre-sigmoid score of shape ``(B,)``. Single vectors of shape ``(E,)`` are
accepted too and give a float back.

``score`` is side-effect free. ``forward`` caches the intermediates needed by
``backward``, which consumes the cache, accumulates parameter gradients, and
returns the gradients w.r.t. ``p`` and ``q``.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .numeric import DTYPE, Param, he_normal


class UnitKind(str, Enum):
    GMF = "gmf"
    MLP = "mlp"
    NEUMF = "neumf"


def tower_widths(embedding_size: int, num_layers: int, final_width: int | None = None) -> list[int]:
    """Hidden widths of the MLP tower, halving towards ``final_width``."""
    if num_layers < 1:
        raise ValueError("an MLP needs at least one hidden layer")
    final = embedding_size if final_width is None else final_width
    return [final * 2 ** (num_layers - x) for x in range(1, num_layers + 1)]


def _as_batch(p, q, embedding_size):
    p = np.asarray(p, dtype=DTYPE)
    q = np.asarray(q, dtype=DTYPE)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    q2 = np.atleast_2d(q)
    if p2.shape != q2.shape or p2.shape[1] != embedding_size:
        raise ValueError(
            f"embedding shape mismatch: p {p.shape}, q {q.shape}, expected last dim {embedding_size}"
        )
    return p2, q2, single


class InteractionUnit:
    kind: UnitKind
    embedding_size: int

    def __init__(self):
        self._cache = None

    def params(self) -> list[Param]:
        raise NotImplementedError

    def _forward(self, p, q, train):
        raise NotImplementedError

    def _backward(self, cache, upstream):
        raise NotImplementedError

    def score(self, p, q):
        p2, q2, single = _as_batch(p, q, self.embedding_size)
        s, _ = self._forward(p2, q2, train=False)
        return float(s[0]) if single else s

    def forward(self, p, q):
        p2, q2, single = _as_batch(p, q, self.embedding_size)
        s, cache = self._forward(p2, q2, train=True)
        self._cache = (cache, single)
        return float(s[0]) if single else s

    def backward(self, upstream):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a cached forward pass")
        cache, single = self._cache
        self._cache = None
        up = np.atleast_1d(np.asarray(upstream, dtype=DTYPE))
        dp, dq = self._backward(cache, up)
        if single:
            return dp[0], dq[0]
        return dp, dq

    def shapes(self) -> dict:
        return {"kind": self.kind.value, "embedding_size": self.embedding_size}


class GmfUnit(InteractionUnit):
    """``h . (p * q)``"""

    kind = UnitKind.GMF

    def __init__(self, embedding_size: int, rng: np.random.Generator | None = None,
                 l2: float = 0.0, name: str = "gmf", h=None, trainable_h: bool = True):
        super().__init__()
        self.embedding_size = embedding_size
        if h is None:
            rng = rng or np.random.default_rng(0)
            h = he_normal(rng, (embedding_size,), embedding_size)
        self.h = Param(f"{name}.h", h, l2=l2, trainable=trainable_h)

    def params(self):
        return [self.h]

    def _forward(self, p, q, train):
        pq = p * q
        return pq @ self.h.value, (p, q, pq)

    def _backward(self, cache, up):
        p, q, pq = cache
        if self.h.trainable:
            self.h.grad += up @ pq
        g = up[:, None] * self.h.value
        return g * q, g * p


class _Tower:
    """ReLU layers over ``[p; q]`` with optional inverted dropout on hidden outputs."""

    def __init__(self, embedding_size, widths, rng, l2, name, dropout=0.0):
        self.layers: list[tuple[Param, Param]] = []
        fan_in = 2 * embedding_size
        for x, width in enumerate(widths, start=1):
            W = Param(f"{name}.W{x}", he_normal(rng, (width, fan_in), fan_in), l2=l2)
            b = Param(f"{name}.b{x}", np.zeros(width), l2=l2)
            self.layers.append((W, b))
            fan_in = width
        self.dropout = dropout
        self.dropout_rng = None

    def params(self):
        return [t for layer in self.layers for t in layer]

    def forward(self, p, q, train):
        z = np.concatenate([p, q], axis=1)
        inputs, masks = [], []
        for W, b in self.layers:
            inputs.append(z)
            a = z @ W.value.T + b.value
            mask = (a > 0).astype(DTYPE)
            if train and self.dropout > 0:
                if self.dropout_rng is None:
                    raise RuntimeError("dropout enabled but no dropout_rng set")
                keep = self.dropout_rng.random(a.shape) >= self.dropout
                mask = mask * keep / (1.0 - self.dropout)
            z = a * mask
            masks.append(mask)
        return z, (inputs, masks)

    def backward(self, cache, dz):
        inputs, masks = cache
        for (W, b), x, mask in zip(reversed(self.layers), reversed(inputs), reversed(masks)):
            da = dz * mask
            W.grad += da.T @ x
            b.grad += da.sum(axis=0)
            dz = da @ W.value
        E = dz.shape[1] // 2
        return dz[:, :E], dz[:, E:]


class MlpUnit(InteractionUnit):
    """``h . z_L`` where ``z_x = ReLU(W_x z_{x-1} + b_x)`` and ``z_0 = [p; q]``."""

    kind = UnitKind.MLP

    def __init__(self, embedding_size: int, num_layers: int = 3, rng: np.random.Generator | None = None,
                 l2: float = 0.0, name: str = "mlp", final_width: int | None = None, dropout: float = 0.0):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.embedding_size = embedding_size
        self.widths = tower_widths(embedding_size, num_layers, final_width)
        self.tower = _Tower(embedding_size, self.widths, rng, l2, name, dropout)
        self.h = Param(f"{name}.h", he_normal(rng, (self.widths[-1],), self.widths[-1]), l2=l2)

    @property
    def layers(self):
        return self.tower.layers

    def params(self):
        return self.tower.params() + [self.h]

    def _forward(self, p, q, train):
        z, tcache = self.tower.forward(p, q, train)
        return z @ self.h.value, (z, tcache)

    def _backward(self, cache, up):
        z, tcache = cache
        self.h.grad += up @ z
        return self.tower.backward(tcache, up[:, None] * self.h.value)

    def shapes(self):
        return {**super().shapes(), "widths": list(self.widths)}


class NeumfUnit(InteractionUnit):
    """``h . [p * q; z_L]`` with both branches reading the same embeddings.

    ``h[:E]`` weights the element-wise branch, ``h[E:]`` the MLP branch.
    """

    kind = UnitKind.NEUMF

    def __init__(self, embedding_size: int, num_layers: int = 3, rng: np.random.Generator | None = None,
                 l2: float = 0.0, name: str = "neumf", final_width: int | None = None, dropout: float = 0.0):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.embedding_size = embedding_size
        self.widths = tower_widths(embedding_size, num_layers, final_width)
        self.tower = _Tower(embedding_size, self.widths, rng, l2, name, dropout)
        width = embedding_size + self.widths[-1]
        self.h = Param(f"{name}.h", he_normal(rng, (width,), width), l2=l2)

    @property
    def layers(self):
        return self.tower.layers

    def params(self):
        return self.tower.params() + [self.h]

    def _forward(self, p, q, train):
        z, tcache = self.tower.forward(p, q, train)
        joint = np.concatenate([p * q, z], axis=1)
        return joint @ self.h.value, (p, q, joint, tcache)

    def _backward(self, cache, up):
        p, q, joint, tcache = cache
        E = self.embedding_size
        self.h.grad += up @ joint
        dj = up[:, None] * self.h.value
        dp_t, dq_t = self.tower.backward(tcache, dj[:, E:])
        g = dj[:, :E]
        return g * q + dp_t, g * p + dq_t

    def shapes(self):
        return {**super().shapes(), "widths": list(self.widths)}


def make_unit(kind: UnitKind | str, embedding_size: int, rng: np.random.Generator,
              num_layers: int = 3, l2: float = 0.0, name: str | None = None,
              final_width: int | None = None) -> InteractionUnit:
    kind = UnitKind(kind)
    name = name or kind.value
    if kind is UnitKind.GMF:
        return GmfUnit(embedding_size, rng, l2=l2, name=name)
    if kind is UnitKind.MLP:
        return MlpUnit(embedding_size, num_layers, rng, l2=l2, name=name, final_width=final_width)
    return NeumfUnit(embedding_size, num_layers, rng, l2=l2, name=name, final_width=final_width)
