"""Elementwise activations with cached backward passes."""

from __future__ import annotations

import numpy as np

from .errors import StateError

# Self-normalizing constants, 16+ significant digits.
SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


class _Elementwise:
    def __init__(self):
        self._cache = None

    def param_items(self):
        return []

    def grad_items(self):
        return []

    def forward(self, x, training=True):
        y, cache = self._apply(x)
        self._cache = cache if training else None
        return y

    def backward(self, grad_y):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward without a training forward")
        cache = self._cache
        self._cache = None
        return grad_y * self._deriv(cache)


class ReLU(_Elementwise):
    def _apply(self, x):
        return np.maximum(x, 0), x > 0

    def _deriv(self, positive):
        return positive


class ELU(_Elementwise):
    def __init__(self, alpha: float = 1.0):
        super().__init__()
        self.alpha = alpha

    def _apply(self, x):
        neg = self.alpha * np.expm1(np.minimum(x, 0))
        y = np.where(x > 0, x, neg).astype(x.dtype)
        return y, (x > 0, neg)

    def _deriv(self, cache):
        positive, neg = cache
        return np.where(positive, 1.0, neg + self.alpha)


class SELU(_Elementwise):
    """scale * (x if x > 0 else alpha * (exp(x) - 1))."""

    def _apply(self, x):
        neg = SELU_SCALE * SELU_ALPHA * np.expm1(np.minimum(x, 0))
        y = np.where(x > 0, SELU_SCALE * x, neg).astype(x.dtype)
        return y, (x > 0, neg)

    def _deriv(self, cache):
        positive, neg = cache
        return np.where(positive, SELU_SCALE, neg + SELU_SCALE * SELU_ALPHA)


ACTIVATIONS = {"relu": ReLU, "elu": ELU, "selu": SELU}


def make_activation(name: str) -> _Elementwise:
    if name not in ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}")
    return ACTIVATIONS[name]()
