"""Dense numerics shared by every model: activations, parameters, optimizers.

Everything is float64. Gradients are computed by hand in each model and
accumulated into ``Param.grad``; the optimizers fold L2 into the gradient at
step time and zero the gradient afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

DTYPE = np.float64


def sigmoid(x):
    """Logistic function, stable for large ``|x|``. Works on scalars and arrays."""
    out = expit(np.asarray(x, dtype=DTYPE))
    return float(out) if out.ndim == 0 else out


def relu(x):
    out = np.maximum(np.asarray(x, dtype=DTYPE), 0.0)
    return float(out) if out.ndim == 0 else out


class Param:
    """A trainable array with a same-shaped gradient slot."""

    def __init__(self, name: str, value, l2: float = 0.0, trainable: bool = True):
        if l2 < 0:
            raise ValueError(f"{name}: l2 must be non-negative, got {l2}")
        self.name = name
        self.value = np.array(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.l2 = float(l2)
        self.trainable = trainable

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape}, l2={self.l2})"


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def embedding_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.01) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


@dataclass
class Optimizer:
    """SGD / Adagrad / Adam over a fixed list of params.

    ``step`` adds ``l2 * value`` to each gradient, applies the update rule,
    then zeros the gradients. A non-finite gradient aborts before any param
    is touched.
    """

    params: list[Param]
    kind: str = "adagrad"
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    _acc: list[np.ndarray] = field(default_factory=list, repr=False)
    _m: list[np.ndarray] = field(default_factory=list, repr=False)
    _v: list[np.ndarray] = field(default_factory=list, repr=False)

    KINDS = ("sgd", "adagrad", "adam")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}; expected one of {self.KINDS}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        self.params = [p for p in self.params if p.trainable]
        if self.kind == "adagrad":
            self._acc = [np.zeros_like(p.value) for p in self.params]
        elif self.kind == "adam":
            self._m = [np.zeros_like(p.value) for p in self.params]
            self._v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")
        self.t += 1
        lr = self.learning_rate
        for k, p in enumerate(self.params):
            g = p.grad + p.l2 * p.value if p.l2 else p.grad
            if self.kind == "sgd":
                p.value -= lr * g
            elif self.kind == "adagrad":
                acc = self._acc[k]
                acc += g * g
                p.value -= lr * g / np.sqrt(acc + self.eps)
            else:
                m, v = self._m[k], self._v[k]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                m_hat = m / (1.0 - self.beta1 ** self.t)
                v_hat = v / (1.0 - self.beta2 ** self.t)
                p.value -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.zero_grad()


def finite_diff_grad(loss_fn, params: list[Param], h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of ``loss_fn()`` w.r.t. every coordinate of ``params``.

    ``loss_fn`` takes no arguments and reads the params' current values; each
    coordinate is perturbed in place and restored.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            f_plus = loss_fn()
            flat[k] = orig - h
            f_minus = loss_fn()
            flat[k] = orig
            gflat[k] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Largest coordinate-wise ``|a - n| / max(|a|, |n|, floor)`` across arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=DTYPE)
        n = np.asarray(n, dtype=DTYPE)
        if a.size == 0:
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
