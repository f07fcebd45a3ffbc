"""Numerical verification of the gradient-norm identities behind patch
standardization, plus observational probes (gradient-norm traces, output
normality under unit-fan-in Gaussian weights).

Standardization splits into two steps per column: centering (x -> x - mean)
and scaling (xdot -> xdot / sigma, sigma = ||xdot|| / sqrt(I)). For each step
the squared gradient norm before the step has a closed form in terms of the
gradient after it:

  centering:  ||g_x||^2   = ||g||^2 - (1/I) <1, g>^2
  scaling:    ||g_dot||^2 = (1/sigma^2) (||h||^2 + (1/I^2) <xhat, h>^2 (<xhat, xhat> - 2I))

Both are checked against exact chain-rule gradients on random instances. The
scaling identity is also evaluated with a 1/sigma leading factor (a plausible
transcription of the same computation); its gap is reported, not asserted.
Identity checks run with eps = 0; eps only enters layer-level gradient checks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateInstanceError
from .models import Model
from .training import SGD, cross_entropy

IDENTITY_TOL = 1e-10


@dataclass
class IdentityReport:
    identity: str
    lhs: float
    rhs: float
    rel_gap: float
    tolerance: float
    passed: bool
    instance: dict
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _rel_gap(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def verify_centering_identity(size: int, seed: int,
                              tolerance: float = IDENTITY_TOL) -> IdentityReport:
    """Exact chain rule through centering vs the closed-form norm identity."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, size]))
    g = rng.standard_normal(size)
    grad_x = g - g.mean()  # pullback through x -> x - mean(x) * ones
    lhs = float(grad_x @ grad_x)
    rhs = float(g @ g - (g.sum() ** 2) / size)
    gap = _rel_gap(lhs, rhs)
    return IdentityReport("centering_norm", lhs, rhs, gap, tolerance,
                          gap <= tolerance, {"size": size, "seed": seed},
                          extras={"downstream_sq_norm": float(g @ g)})


def verify_scaling_identity(size: int, seed: int,
                            tolerance: float = IDENTITY_TOL) -> IdentityReport:
    """Exact chain rule through xdot -> xdot / sigma vs the closed form.

    Also evaluates, in extras: the simplified form that uses <xhat, xhat> = I,
    the always-nonpositive reduction term, and the gap of the 1/sigma variant.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, size, 1]))
    x = rng.standard_normal(size)
    xdot = x - x.mean()
    sigma = float(np.linalg.norm(xdot)) / size**0.5
    if sigma < 1e-12:
        raise DegenerateInstanceError(f"sigma={sigma:.3e} too small for the scaling identity")
    xhat = xdot / sigma
    h = rng.standard_normal(size)

    dot = float(xhat @ h)
    grad_dot = (h - xhat * (dot / size)) / sigma  # exact Jacobian-transpose product
    lhs = float(grad_dot @ grad_dot)
    xx = float(xhat @ xhat)
    bracket = float(h @ h) + (dot**2) * (xx - 2 * size) / size**2
    rhs = bracket / sigma**2
    gap = _rel_gap(lhs, rhs)

    reduction = -(dot**2) / size
    simplified = (float(h @ h) + reduction) / sigma**2
    printed = bracket / sigma  # 1/sigma leading factor, reported only
    return IdentityReport(
        "scaling_norm", lhs, rhs, gap, tolerance, gap <= tolerance,
        {"size": size, "seed": seed},
        extras={
            "sigma": sigma,
            "xhat_sq_norm": xx,
            "reduction_term": reduction,
            "simplified_rhs": simplified,
            "simplified_gap": _rel_gap(lhs, simplified),
            "one_over_sigma_rhs": printed,
            "one_over_sigma_gap": _rel_gap(lhs, printed),
        },
    )


def run_identity_checks(instances: int = 100, sizes=(4, 9, 27),
                        seed: int = 0) -> list[IdentityReport]:
    reports = []
    for i in range(instances):
        size = int(sizes[i % len(sizes)])
        reports.append(verify_centering_identity(size, seed + i))
        reports.append(verify_scaling_identity(size, seed + i))
    return reports


def _standardize_exact(cols: np.ndarray) -> np.ndarray:
    """Per-column standardization with eps = 0; constant columns map to 0."""
    mu = cols.mean(axis=0)
    centered = cols - mu
    sigma = np.sqrt((centered**2).mean(axis=0))
    return centered / np.where(sigma > 0, sigma, 1.0)


_PATCH_SAMPLERS = {
    "normal": lambda rng, shape: rng.standard_normal(shape),
    "uniform": lambda rng, shape: rng.uniform(-1.0, 1.0, shape),
    "lognormal": lambda rng, shape: rng.lognormal(0.0, 1.0, shape),
}


def check_output_normality(patch_len: int, n_patches: int, rng: np.random.Generator,
                           out_channels: int = 64,
                           distributions=("normal", "uniform", "lognormal"),
                           chunk: int = 20000) -> list[dict]:
    """Distribution of pre-activation outputs for standardized random patches.

    Weights are Gaussian with std 1/sqrt(patch_len); outputs should be close
    to standard normal regardless of the patch distribution. Pass criteria
    (|mean| < 4/sqrt(n_patches), variance in [0.9, 1.1]) apply only for
    patch_len >= 27 and n_patches >= 1e4; excess kurtosis is reported without
    a threshold. patch_len = 1 is degenerate (all outputs 0) and flagged.
    """
    reports = []
    evaluable = patch_len >= 27 and n_patches >= 10_000
    for dist in distributions:
        sampler = _PATCH_SAMPLERS[dist]
        weights = rng.normal(0.0, patch_len**-0.5, size=(out_channels, patch_len))
        count = 0
        m1 = m2 = m3 = m4 = 0.0
        degenerate_cols = 0
        remaining = n_patches
        while remaining > 0:
            m = min(chunk, remaining)
            remaining -= m
            patches = sampler(rng, (patch_len, m))
            xhat = _standardize_exact(patches)
            degenerate_cols += int((np.abs(xhat).sum(axis=0) == 0).sum())
            y = weights @ xhat
            count += y.size
            m1 += float(y.sum())
            m2 += float((y**2).sum())
            m3 += float((y**3).sum())
            m4 += float((y**4).sum())
        mean = m1 / count
        raw2, raw3, raw4 = m2 / count, m3 / count, m4 / count
        var = raw2 - mean**2
        c4 = raw4 - 4 * mean * raw3 + 6 * mean**2 * raw2 - 3 * mean**4
        kurt = c4 / var**2 - 3.0 if var > 0 else float("nan")
        degenerate = patch_len == 1 or degenerate_cols == n_patches
        bound = 4.0 / n_patches**0.5
        mean_ok = abs(mean) < bound
        var_ok = 0.9 <= var <= 1.1
        reports.append({
            "distribution": dist,
            "patch_len": patch_len,
            "n_patches": n_patches,
            "out_channels": out_channels,
            "mean": mean,
            "variance": var,
            "excess_kurtosis": kurt,
            "mean_bound": bound,
            "mean_ok": mean_ok,
            "var_ok": var_ok,
            "degenerate": degenerate,
            "passed": (mean_ok and var_ok) if (evaluable and not degenerate) else None,
        })
    return reports


def measure_grad_norm_reduction(models: dict[str, Model], ds, steps: int,
                                batch_size: int, lr: float, seed: int) -> list[dict]:
    """Train each model on an identical batch stream; record per-step training
    loss, input-gradient norms at every conv layer, and the step-to-step change
    of the loss on one fixed probe batch (so lr = 0 yields an all-zero change
    trace: the probe isolates parameter movement from batch-to-batch noise).

    Observational: no pass/fail. Models should be identically initialized
    (same seed at build time) so the traces are comparable.
    """
    n = ds.images.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    probe_idx = rng.integers(0, n, size=min(n, max(batch_size, 16)))
    idx_stream = [rng.integers(0, n, size=batch_size) for _ in range(steps)]

    rows = []
    for name, model in models.items():
        opt = SGD(model)
        probe_x = ds.images[probe_idx].astype(model.dtype, copy=False)
        probe_labels = ds.labels[probe_idx]
        prev_probe = cross_entropy(model.forward(probe_x, training=False),
                                   probe_labels)[0]
        for t, idx in enumerate(idx_stream):
            x = ds.images[idx].astype(model.dtype, copy=False)
            labels = ds.labels[idx]
            logits = model.forward(x, training=True)
            loss, grad = cross_entropy(logits, labels)
            model.backward(grad)
            opt.step(lr)
            probe = cross_entropy(model.forward(probe_x, training=False),
                                  probe_labels)[0]
            row = {"model": name, "step": t, "loss": loss,
                   "probe_loss": probe, "abs_dloss": abs(probe - prev_probe)}
            for lname, layer in model.conv_layers():
                row[f"input_grad_norm.{lname}"] = layer.last_input_grad_norm
            rows.append(row)
            prev_probe = probe
    return rows
