"""Patch-matrix lowering: unfold inputs to column matrices and fold gradients back.

Layout contract (must match weight flattening everywhere): a column holds one
receptive-field patch, ordered channel-slowest, then kernel row, then kernel
column. Column k corresponds to output position (k // W_out, k % W_out).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GeometryError, ShapeError


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


@dataclass(frozen=True)
class ConvGeometry:
    """Kernel/stride/padding/channel description of one convolution."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: tuple[int, int]
    padding: tuple[int, int]
    input_hw: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))
        object.__setattr__(self, "input_hw", _pair(self.input_hw))
        if self.in_channels < 1 or self.out_channels < 1:
            raise GeometryError(
                f"channel counts must be >= 1, got C={self.in_channels} O={self.out_channels}"
            )
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise GeometryError(
                f"bad kernel/stride/padding: {self.kernel}/{self.stride}/{self.padding}"
            )
        if min(self.input_hw) < 1:
            raise GeometryError(f"input size must be >= 1, got {self.input_hw}")
        if self.out_h < 1 or self.out_w < 1:
            raise GeometryError(
                f"empty output grid: input {self.input_hw}, kernel {self.kernel}, "
                f"stride {self.stride}, padding {self.padding} -> "
                f"{self.out_h}x{self.out_w}"
            )

    @property
    def out_h(self) -> int:
        h, _ = self.input_hw
        return (h + 2 * self.padding[0] - self.kernel[0]) // self.stride[0] + 1

    @property
    def out_w(self) -> int:
        _, w = self.input_hw
        return (w + 2 * self.padding[1] - self.kernel[1]) // self.stride[1] + 1

    @property
    def out_hw(self) -> tuple[int, int]:
        return (self.out_h, self.out_w)

    @property
    def patch_len(self) -> int:
        """Elements per patch: in_channels * kh * kw (the normalization axis)."""
        return self.in_channels * self.kernel[0] * self.kernel[1]

    @property
    def num_cols(self) -> int:
        """Output positions per sample (columns of the patch matrix)."""
        return self.out_h * self.out_w


def conv_geometry(in_channels, out_channels, kernel, stride=1, padding=0,
                  input_hw=None) -> ConvGeometry:
    """Convenience constructor accepting scalar kernel/stride/padding."""
    if input_hw is None:
        raise GeometryError("input_hw is required")
    return ConvGeometry(in_channels, out_channels, _pair(kernel), _pair(stride),
                        _pair(padding), _pair(input_hw))


def unfold(x: np.ndarray, g: ConvGeometry) -> np.ndarray:
    """Lower (N, C, H, W) input to per-sample patch matrices (N, I, K).

    Padding is zero-filled. Pure function; the result owns its data.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W) input, got shape {x.shape}")
    n, c, h, w = x.shape
    if (c, h, w) != (g.in_channels, *g.input_hw):
        raise ShapeError(
            f"input shape {x.shape[1:]} does not match geometry "
            f"({g.in_channels}, {g.input_hw[0]}, {g.input_hw[1]})"
        )
    ph, pw = g.padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(x, g.kernel, axis=(2, 3))
    win = win[:, :, :: g.stride[0], :: g.stride[1]]  # (N, C, Ho, Wo, kh, kw)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, g.patch_len, g.num_cols)
    return cols


def fold(cols: np.ndarray, g: ConvGeometry) -> np.ndarray:
    """Adjoint of unfold: scatter (N, I, K) patch values back to (N, C, H, W).

    Overlapping patch contributions sum; values landing in the padding region
    are discarded.
    """
    cols = np.asarray(cols)
    if cols.ndim != 3 or cols.shape[1:] != (g.patch_len, g.num_cols):
        raise ShapeError(
            f"expected (N, {g.patch_len}, {g.num_cols}) patch matrix, got {cols.shape}"
        )
    n = cols.shape[0]
    kh, kw = g.kernel
    sh, sw = g.stride
    ph, pw = g.padding
    ho, wo = g.out_hw
    h, w = g.input_hw
    c6 = cols.reshape(n, g.in_channels, kh, kw, ho, wo)
    img = np.zeros((n, g.in_channels, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for u in range(kh):
        for v in range(kw):
            img[:, :, u : u + sh * ho : sh, v : v + sw * wo : sw] += c6[:, :, u, v]
    out = img[:, :, ph : ph + h, pw : pw + w]
    return np.ascontiguousarray(out)
