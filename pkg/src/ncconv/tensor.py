"""Array primitives everything else builds on.

A "tensor" here is a plain row-major numpy ndarray of rank <= 4. The element
type is a run-wide choice: float32 for training speed, float64 for gradient
checks and identity verification. Ops never mutate their inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

DTYPES = {"float32": np.float32, "float64": np.float64}
DEFAULT_DTYPE = np.dtype(np.float32)


def resolve_dtype(dtype) -> np.dtype:
    """Map an element-type name or dtype-like to one of the two supported dtypes."""
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ValueError(
                f"unsupported element type {dtype!r}; choose one of {sorted(DTYPES)}"
            )
        return np.dtype(DTYPES[dtype])
    d = np.dtype(dtype)
    if d not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported element type {d}; use float32 or float64")
    return d


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64): the same seed yields a bit-identical stream."""
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2-D matrix product with an explicit shape check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not compose: {a.shape} @ {b.shape}")
    return a @ b


def randn(shape, rng: np.random.Generator, mean: float = 0.0, std: float = 1.0,
          dtype=DEFAULT_DTYPE) -> np.ndarray:
    """I.i.d. Gaussian samples, deterministic per generator state."""
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    dt = resolve_dtype(dtype)
    out = rng.standard_normal(shape, dtype=dt)
    if std != 1.0:
        out = out * dt.type(std)
    if mean != 0.0:
        out = out + dt.type(mean)
    return out


def reduce_stats(t: np.ndarray, axis) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population variance (divisor = count, not count - 1) along axis."""
    t = np.asarray(t)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for a in axes:
        if not -t.ndim <= a < t.ndim:
            raise ShapeError(f"axis {a} out of range for shape {t.shape}")
        if t.shape[a] == 0:
            raise ShapeError(f"cannot reduce over empty axis {a} of shape {t.shape}")
    mean = t.mean(axis=axes)
    # two-pass (centered) form: more accurate than E[x^2] - E[x]^2
    var = ((t - np.expand_dims(mean, axes)) ** 2).mean(axis=axes)
    return mean, var
