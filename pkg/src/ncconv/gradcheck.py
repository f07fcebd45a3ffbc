"""Finite-difference gradient checking for every backward pass in the package.

All checks run in float64 with central differences. The reported error is
max |analytic - numeric| / max(scale, 1) where scale is the larger gradient's
max magnitude; losses and inputs are O(1), so this behaves like a relative
error with a sane floor for near-zero gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import make_activation
from .conv import Conv2d, NCConv2d
from .im2col import ConvGeometry
from .models import ConvItem, ModelSpec, build
from .normalization import GroupNorm
from .training import cross_entropy

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-6


@dataclass
class GradCheckCase:
    family: str
    descriptor: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def numeric_grad(f, x: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. x, perturbed in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        fp = f()
        x[idx] = orig - step
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * step)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    scale = max(float(np.max(np.abs(analytic), initial=0.0)),
                float(np.max(np.abs(numeric), initial=0.0)), 1.0)
    return diff / scale


def random_conv_geometry(rng: np.random.Generator) -> ConvGeometry:
    """Random geometry spanning kernel {1,3} x stride {1,2} x padding {0,1}."""
    k = int(rng.choice([1, 3]))
    s = int(rng.choice([1, 2]))
    p = 0 if k == 1 else int(rng.choice([0, 1]))
    c = int(rng.integers(2, 4)) if k == 1 else int(rng.integers(1, 4))
    o = int(rng.integers(1, 5))
    h = int(rng.integers(5, 9))
    w = int(rng.integers(5, 9))
    return ConvGeometry(c, o, (k, k), (s, s), (p, p), (h, w))


def _check_param_grads(analytic: dict, loss_fn, arrays: dict, step) -> float:
    worst = 0.0
    for name, arr in arrays.items():
        num = numeric_grad(loss_fn, arr, step)
        worst = max(worst, max_rel_err(analytic[name], num))
    return worst


def check_conv_layer(kind: str, seed: int, step=DEFAULT_STEP,
                     inject_bug: bool = False) -> GradCheckCase:
    rng = np.random.default_rng(seed)
    g = random_conv_geometry(rng)
    cls = NCConv2d if kind == "nc" else Conv2d
    layer = cls(g, rng, dtype=np.float64)
    layer.gamma[:] = rng.normal(1.0, 0.2, g.out_channels)
    layer.beta[:] = rng.normal(0.0, 0.2, g.out_channels)
    n = int(rng.integers(1, 3))
    x = rng.standard_normal((n, g.in_channels, *g.input_hw))
    r = rng.standard_normal((n, g.out_channels, g.out_h, g.out_w))

    layer.forward(x, training=True)
    grad_x = layer.backward(r)
    analytic = {"x": grad_x, **{k: v.copy() for k, v in layer.grads.items()}}
    if inject_bug:
        analytic["weights"][0, 0] += 1e-3  # deliberate fault, exercised by the CLI hook

    def loss():
        return float((layer.forward(x, training=False) * r).sum())

    arrays = {"x": x, "weights": layer.weights, "gamma": layer.gamma,
              "beta": layer.beta}
    worst = _check_param_grads(analytic, loss, arrays, step)
    desc = (f"{kind} conv C{g.in_channels} O{g.out_channels} k{g.kernel[0]} "
            f"s{g.stride[0]} p{g.padding[0]} {g.input_hw[0]}x{g.input_hw[1]} N{n}")
    return GradCheckCase(f"{kind}_conv", desc, worst, DEFAULT_TOL)


def check_groupnorm(seed: int, step=DEFAULT_STEP) -> GradCheckCase:
    rng = np.random.default_rng(seed)
    groups = int(rng.choice([1, 2, 4]))
    c = groups * int(rng.integers(1, 4))
    layer = GroupNorm(c, groups, dtype=np.float64)
    layer.gamma[:] = rng.normal(1.0, 0.2, c)
    layer.beta[:] = rng.normal(0.0, 0.2, c)
    n = int(rng.integers(1, 3))
    h = int(rng.integers(2, 5))
    w = int(rng.integers(2, 5))
    x = rng.standard_normal((n, c, h, w))
    r = rng.standard_normal((n, c, h, w))

    layer.forward(x, training=True)
    grad_x = layer.backward(r)
    analytic = {"x": grad_x, **{k: v.copy() for k, v in layer.grads.items()}}

    def loss():
        return float((layer.forward(x, training=False) * r).sum())

    arrays = {"x": x, "gamma": layer.gamma, "beta": layer.beta}
    worst = _check_param_grads(analytic, loss, arrays, step)
    return GradCheckCase("groupnorm", f"groupnorm C{c} G{groups} {n}x{c}x{h}x{w}",
                         worst, DEFAULT_TOL)


def check_activation(name: str, seed: int, step=DEFAULT_STEP,
                     tol: float = 1e-8) -> GradCheckCase:
    rng = np.random.default_rng(seed)
    act = make_activation(name)
    # keep points away from the kink at 0 (|x| >= 1e-4 required; we leave margin)
    mag = rng.uniform(0.05, 2.0, size=(4, 6))
    x = mag * rng.choice([-1.0, 1.0], size=mag.shape)
    r = rng.standard_normal(x.shape)

    act.forward(x, training=True)
    analytic = act.backward(r)

    def loss():
        return float((act.forward(x, training=False) * r).sum())

    worst = max_rel_err(analytic, numeric_grad(loss, x, step))
    return GradCheckCase("activation", f"{name} 4x6", worst, tol)


def check_cross_entropy(seed: int, step=DEFAULT_STEP, tol: float = 1e-7) -> GradCheckCase:
    rng = np.random.default_rng(seed)
    n, ncls = int(rng.integers(2, 5)), int(rng.integers(3, 7))
    logits = rng.standard_normal((n, ncls))
    labels = rng.integers(0, ncls, size=n)
    _, analytic = cross_entropy(logits, labels)

    def loss():
        return cross_entropy(logits, labels)[0]

    worst = max_rel_err(analytic, numeric_grad(loss, logits, step))
    return GradCheckCase("cross_entropy", f"ce {n}x{ncls}", worst, tol)


def check_model(seed: int, step=DEFAULT_STEP, tol=DEFAULT_TOL) -> GradCheckCase:
    """End-to-end: patch-standardized conv -> ReLU -> linear -> cross-entropy."""
    rng = np.random.default_rng(seed)
    c = int(rng.integers(1, 3))
    classes = 3
    spec = ModelSpec(c, (5, 5), (ConvItem("nc", 3, 3, 1, 1, "none", "relu"),),
                     pool="flatten", classes=classes)
    model = build(spec, rng, dtype=np.float64)
    n = 3
    x = rng.standard_normal((n, c, 5, 5))
    labels = rng.integers(0, classes, size=n)

    logits = model.forward(x, training=True)
    _, grad_logits = cross_entropy(logits, labels)
    grad_x = model.backward(grad_logits)
    analytic = {"x": grad_x}
    analytic.update({name: g.copy() for name, g in model.named_grads()})

    def loss():
        return cross_entropy(model.forward(x, training=False), labels)[0]

    arrays = {"x": x}
    arrays.update(dict(model.named_params()))
    worst = _check_param_grads(analytic, loss, arrays, step)
    return GradCheckCase("model", f"nc-relu-linear C{c} N{n}", worst, tol)


def run_gradcheck(cases: int = 20, seed: int = 0, step: float = DEFAULT_STEP,
                  inject_bug: bool = False) -> list[GradCheckCase]:
    """The full check matrix; inject_bug perturbs one gradient in the first case."""
    results = []
    for i in range(cases):
        results.append(check_conv_layer("nc", seed + i, step, inject_bug and i == 0))
    for i in range(cases):
        results.append(check_conv_layer("std", seed + 100 + i, step))
    for i in range(cases):
        results.append(check_groupnorm(seed + 200 + i, step))
    for i in range(cases):
        results.append(check_model(seed + 300 + i, step))
    for i, name in enumerate(["relu", "elu", "selu"]):
        results.append(check_activation(name, seed + 400 + i, step))
    results.append(check_cross_entropy(seed + 500, step))
    return results
