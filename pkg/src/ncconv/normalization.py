"""Group normalization baseline (LayerNorm = 1 group, InstanceNorm = C groups)."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .tensor import resolve_dtype


def default_group_count(channels: int, target: int = 32) -> int:
    """Largest divisor of `channels` that is <= target."""
    for g in range(min(target, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


class GroupNorm:
    """Per-sample, per-group standardization over (C/G, H, W), then affine.

    Uses the sqrt(var + eps) denominator convention.
    """

    def __init__(self, channels: int, num_groups: int, eps: float = 1e-5,
                 dtype=np.float32):
        if num_groups < 1 or channels % num_groups != 0:
            raise ConfigError(
                f"channels ({channels}) must be divisible by num_groups ({num_groups})"
            )
        self.channels = channels
        self.num_groups = num_groups
        self.eps = float(eps)
        self.dtype = resolve_dtype(dtype)
        self.gamma = np.ones(channels, dtype=self.dtype)
        self.beta = np.zeros(channels, dtype=self.dtype)
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def param_items(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def grad_items(self):
        return [(k, self.grads[k]) for k, _ in self.param_items() if k in self.grads]

    def _grouped(self, x):
        n, c, h, w = x.shape
        return x.reshape(n, self.num_groups, c // self.num_groups, h, w)

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"expected (N, {self.channels}, H, W), got {x.shape}")
        xg = self._grouped(x)
        mu = xg.mean(axis=(2, 3, 4), keepdims=True)
        xhat = xg - mu
        var = (xhat * xhat).mean(axis=(2, 3, 4), keepdims=True)
        inv = 1.0 / np.sqrt(var + x.dtype.type(self.eps))
        xhat *= inv
        xhat = xhat.reshape(x.shape)
        y = xhat * self.gamma[:, None, None]
        y += self.beta[:, None, None]
        if training:
            self._cache = (xhat, inv)
        else:
            self._cache = None
        return y

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError("GroupNorm.backward called without a matching training forward")
        xhat, inv = self._cache
        self._cache = None
        if grad_y.shape != xhat.shape:
            raise ShapeError(f"grad_y shape {grad_y.shape} != forward shape {xhat.shape}")
        self.grads = {
            "gamma": (grad_y * xhat).sum(axis=(0, 2, 3)),
            "beta": grad_y.sum(axis=(0, 2, 3)),
        }
        # gh and the consumed xhat cache are single-use scratch from here on
        gh = grad_y * self.gamma[:, None, None]
        ghg = self._grouped(gh)
        xhg = self._grouped(xhat)
        gmean = ghg.mean(axis=(2, 3, 4), keepdims=True)
        gxmean = (ghg * xhg).mean(axis=(2, 3, 4), keepdims=True)
        ghg -= gmean
        xhg *= gxmean
        ghg -= xhg
        ghg *= inv
        return gh.reshape(grad_y.shape)
