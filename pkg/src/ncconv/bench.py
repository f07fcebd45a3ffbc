"""Forward-path timing: naive loops vs im2col+GEMM vs the standardized variant.

Before any timing row is emitted, the GEMM path is cross-checked against the
naive oracle on the same inputs; a mismatch aborts the whole benchmark.
"""

from __future__ import annotations

import time

import numpy as np

from .conv import Conv2d, NCConv2d, naive_conv2d
from .errors import CheckFailureError
from .im2col import ConvGeometry


def default_geometries() -> list[dict]:
    return [
        {"in_channels": 3, "out_channels": 8, "kernel": 3, "stride": 1,
         "padding": 1, "height": 16, "width": 16},
        {"in_channels": 8, "out_channels": 16, "kernel": 3, "stride": 2,
         "padding": 1, "height": 16, "width": 16},
    ]


def _geometry_from_dict(d: dict) -> ConvGeometry:
    return ConvGeometry(d["in_channels"], d["out_channels"],
                        (d["kernel"], d["kernel"]), (d["stride"], d["stride"]),
                        (d["padding"], d["padding"]), (d["height"], d["width"]))


def _median_ms(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(times))


def run_bench(geometries: list[dict], repeats: int, seed: int = 0,
              dtype=np.float32, check_tol: float = 1e-4) -> list[dict]:
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rows = []
    for gdict in geometries:
        g = _geometry_from_dict(gdict)
        rng = np.random.default_rng(seed)
        conv = Conv2d(g, rng, dtype=dtype)
        nc = NCConv2d(g, rng, dtype=dtype)
        nc.weights[...] = conv.weights
        x = rng.standard_normal((1, g.in_channels, *g.input_hw)).astype(dtype)
        w4 = conv.weights.reshape(g.out_channels, g.in_channels, *g.kernel)

        # correctness gate before any timing
        ref = naive_conv2d(x.astype(np.float64), w4.astype(np.float64),
                           g.stride, g.padding)
        got = conv.forward(x, training=False)
        err = float(np.max(np.abs(got - ref)))
        if err > check_tol:
            raise CheckFailureError(
                f"im2col+GEMM disagrees with the naive oracle on {gdict}: "
                f"max abs err {err:.3e} > {check_tol:g}"
            )

        label = (f"C{g.in_channels}_O{g.out_channels}_k{g.kernel[0]}"
                 f"_s{g.stride[0]}_p{g.padding[0]}_{g.input_hw[0]}x{g.input_hw[1]}")
        ops = {
            "naive": lambda: naive_conv2d(x, w4, g.stride, g.padding),
            "im2col": lambda: conv.forward(x, training=False),
            "nc": lambda: nc.forward(x, training=False),
        }
        for op, fn in ops.items():
            rows.append({"geometry": label, "op": op,
                         "median_ms_per_image": _median_ms(fn, repeats),
                         "repeats": repeats, "oracle_max_abs_err": err})
    return rows
