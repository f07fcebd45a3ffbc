"""Convolution layers lowered to the patch-matrix form.

Both layers share one pipeline: unfold the input into per-sample patch
matrices, one GEMM against the flattened (O, I) weights, then a per-output-
channel affine. NCConv2d additionally standardizes every patch column (zero
mean, unit population std over its I entries, with sigma + eps in the
denominator) between the unfold and the GEMM; Conv2d is the plain baseline.

Backward passes are exact chain-rule gradients, finite-difference validated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, StateError
from .im2col import ConvGeometry, fold, unfold
from .tensor import randn, resolve_dtype

DEFAULT_EPS = 1e-5


@dataclass
class PatchStats:
    """Per-column statistics cached between forward and backward."""

    mu: np.ndarray     # (..., K) column means
    sigma: np.ndarray  # (..., K) column population std
    denom: np.ndarray  # (..., K) sigma + eps


def standardize_columns(cols: np.ndarray, eps: float) -> tuple[np.ndarray, PatchStats]:
    """Standardize each patch column over its I entries.

    Accepts (I, K) or (N, I, K); the I axis is always axis -2. eps > 0 guards
    constant columns (sigma = 0), which map to exactly zero.
    """
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    cols = np.asarray(cols)
    if cols.ndim not in (2, 3):
        raise ShapeError(f"expected (I, K) or (N, I, K), got shape {cols.shape}")
    mu = cols.mean(axis=-2)
    xhat = cols - np.expand_dims(mu, -2)
    sigma = np.sqrt((xhat * xhat).mean(axis=-2))
    denom = sigma + cols.dtype.type(eps)
    xhat /= np.expand_dims(denom, -2)
    return xhat, PatchStats(mu=mu, sigma=sigma, denom=denom)


def conv_output_from_columns(cols: np.ndarray, weights: np.ndarray,
                             gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """GEMM plus per-channel affine on an already-lowered (N, I, K) matrix."""
    z = np.matmul(weights, cols)  # broadcasts to (N, O, K)
    return gamma[:, None] * z + beta[:, None]


class _PatchConv:
    """Shared unfold -> transform -> GEMM -> affine machinery.

    Parameters: weights (O, I), gamma (O,), beta (O,). The forward cache is
    owned exclusively between one training forward and the matching backward;
    backward consumes it. Gradients land in self.grads.
    """

    kind = "std"

    def __init__(self, geometry: ConvGeometry, rng, eps: float = DEFAULT_EPS,
                 dtype=np.float32, weight_std: float | None = None):
        self.geometry = geometry
        self.eps = float(eps)
        self.dtype = resolve_dtype(dtype)
        o, i = geometry.out_channels, geometry.patch_len
        if weight_std is None:
            weight_std = i**-0.5  # unit output variance for standardized patches
        self.weights = randn((o, i), rng, 0.0, weight_std, self.dtype)
        self.gamma = np.ones(o, dtype=self.dtype)
        self.beta = np.zeros(o, dtype=self.dtype)
        self.grads: dict[str, np.ndarray] = {}
        self.last_input_grad_norm: float | None = None
        self._cache = None

    def param_items(self):
        return [("weights", self.weights), ("gamma", self.gamma), ("beta", self.beta)]

    def grad_items(self):
        return [(k, self.grads[k]) for k, _ in self.param_items() if k in self.grads]

    def _transform(self, cols):
        return cols, None

    def _transform_backward(self, grad_cols, cols_t, stats):
        return grad_cols

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        g = self.geometry
        cols = unfold(x, g)
        cols_t, stats = self._transform(cols)
        z = np.matmul(self.weights, cols_t)  # (N, O, K)
        y = z * self.gamma[:, None]
        y += self.beta[:, None]
        if training:
            self._cache = (cols_t, stats, z, x.shape)
        else:
            self._cache = None
        n = x.shape[0]
        return y.reshape(n, g.out_channels, g.out_h, g.out_w)

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError(
                f"{type(self).__name__}.backward called without a matching training forward"
            )
        cols_t, stats, z, x_shape = self._cache
        self._cache = None  # cache is single-use
        g = self.geometry
        n = x_shape[0]
        expected = (n, g.out_channels, g.out_h, g.out_w)
        if grad_y.shape != expected:
            raise ShapeError(f"grad_y shape {grad_y.shape} does not match output {expected}")
        gy = grad_y.reshape(n, g.out_channels, g.num_cols)
        self.grads = {
            "gamma": (gy * z).sum(axis=(0, 2)),
            "beta": gy.sum(axis=(0, 2)),
        }
        gz = self.gamma[None, :, None] * gy
        self.grads["weights"] = np.tensordot(gz, cols_t, axes=([0, 2], [0, 2]))
        grad_cols_t = np.matmul(self.weights.T, gz)  # (N, I, K), grad w.r.t. transformed cols
        grad_cols = self._transform_backward(grad_cols_t, cols_t, stats)
        grad_x = fold(grad_cols, g)
        self.last_input_grad_norm = float(np.linalg.norm(grad_x))
        return grad_x


class Conv2d(_PatchConv):
    """Standard convolution (no bias; beta plays that role) with per-channel affine."""

    kind = "std"


class NCConv2d(_PatchConv):
    """Convolution over per-column-standardized patch matrices."""

    kind = "nc"

    def __init__(self, geometry, rng, eps=DEFAULT_EPS, dtype=np.float32,
                 weight_std=None):
        super().__init__(geometry, rng, eps=eps, dtype=dtype, weight_std=weight_std)
        if geometry.patch_len == 1:
            # sigma is identically 0, every standardized patch is 0, and the
            # output collapses to beta; legal geometry, but almost surely a mistake
            warnings.warn(
                "NCConv2d with patch length 1 (1x1 kernel, single input channel): "
                "output is constant beta",
                stacklevel=2,
            )

    def _transform(self, cols):
        return standardize_columns(cols, self.eps)

    def _transform_backward(self, grad_cols, xhat, stats):
        # Per column, with d = sigma + eps and gp the gradient w.r.t. xhat:
        #   grad = (gp - mean(gp)) / d - xhat * <gp, xhat> / (I * sigma)
        # Constant columns (sigma = 0) have xhat = 0 and the sigma term vanishes.
        # grad_cols and xhat are single-use here and double as scratch space.
        i = self.geometry.patch_len
        gbar = grad_cols.mean(axis=-2)
        dot = (grad_cols * xhat).sum(axis=-2)
        safe_sigma = np.where(stats.sigma > 0, stats.sigma, 1.0)
        corr = np.where(stats.sigma > 0, stats.denom / safe_sigma, 0.0)
        corr *= dot
        corr /= i
        grad_cols -= gbar[:, None, :]
        xhat *= corr[:, None, :]
        grad_cols -= xhat
        grad_cols /= stats.denom[:, None, :]
        return grad_cols


def naive_conv2d(x: np.ndarray, weight: np.ndarray, stride=(1, 1),
                 padding=(0, 0)) -> np.ndarray:
    """Reference convolution: explicit scalar loops, no lowering, no affine.

    weight is (O, C, kh, kw); kept deliberately independent of the GEMM path
    so it can serve as its correctness oracle.
    """
    n, c, h, w = x.shape
    o, c2, kh, kw = weight.shape
    if c2 != c:
        raise ShapeError(f"weight channels {c2} != input channels {c}")
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, o, ho, wo), dtype=x.dtype)
    for nn in range(n):
        for oo in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for cc in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[nn, cc, i * sh + u, j * sw + v] * weight[oo, cc, u, v]
                    out[nn, oo, i, j] = acc
    return out
