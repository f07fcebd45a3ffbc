"""Model assembly: layer descriptors, sequential/residual construction, checkpoints.

A Model is an ordered list of named layers, each exposing forward/backward,
param_items/grad_items. Construction propagates shapes and reports parameter
counts; shape mismatches name the offending layer index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .activations import make_activation
from .conv import Conv2d, NCConv2d
from .errors import CheckpointError, GeometryError, ShapeError, StateError
from .im2col import ConvGeometry
from .normalization import GroupNorm, default_group_count
from .tensor import randn, resolve_dtype

CONV_KINDS = {"nc": NCConv2d, "std": Conv2d}


# ---------------------------------------------------------------------------
# descriptors

@dataclass(frozen=True)
class ConvItem:
    """One conv unit: conv (+ optional GroupNorm) (+ optional activation)."""

    kind: str  # "nc" | "std"
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    norm: str = "none"  # "none" | "gn"
    act: str = "relu"   # "relu" | "elu" | "selu" | "none"


@dataclass(frozen=True)
class BlockItem:
    """Residual basic block: two 3x3 conv units with an identity/projection shortcut."""

    kind: str
    out_channels: int
    stride: int = 1
    norm: str = "none"
    act: str = "relu"


@dataclass(frozen=True)
class ModelSpec:
    in_channels: int
    input_hw: tuple[int, int]
    items: tuple = ()
    pool: str = "none"  # "gap" | "flatten" | "none"
    classes: int | None = None


def resnet8_spec(conv: str = "nc", norm: str = "none", activation: str = "relu",
                 classes: int = 10, in_channels: int = 3, input_hw=(32, 32),
                 widths=(16, 32, 64)) -> ModelSpec:
    """Three residual stages of one basic block each, then GAP + linear."""
    w1, w2, w3 = widths
    items = (
        ConvItem(conv, w1, 3, 1, 1, norm, activation),
        BlockItem(conv, w1, 1, norm, activation),
        BlockItem(conv, w2, 2, norm, activation),
        BlockItem(conv, w3, 2, norm, activation),
    )
    return ModelSpec(in_channels, input_hw, items, pool="gap", classes=classes)


def cnn4_spec(conv: str = "nc", norm: str = "none", activation: str = "relu",
              classes: int = 10, in_channels: int = 3, input_hw=(32, 32),
              widths=(16, 32, 64, 64)) -> ModelSpec:
    """Plain 4-conv stack, strides 1/2/2/1, then GAP + linear."""
    w1, w2, w3, w4 = widths
    items = (
        ConvItem(conv, w1, 3, 1, 1, norm, activation),
        ConvItem(conv, w2, 3, 2, 1, norm, activation),
        ConvItem(conv, w3, 3, 2, 1, norm, activation),
        ConvItem(conv, w4, 3, 1, 1, norm, activation),
    )
    return ModelSpec(in_channels, input_hw, items, pool="gap", classes=classes)


MODEL_BUILDERS = {"resnet8": resnet8_spec, "cnn4": cnn4_spec}


# ---------------------------------------------------------------------------
# structural layers

class Linear:
    def __init__(self, in_features: int, out_features: int, rng, dtype=np.float32):
        self.dtype = resolve_dtype(dtype)
        self.weights = randn((out_features, in_features), rng, 0.0,
                             in_features**-0.5, self.dtype)
        self.bias = np.zeros(out_features, dtype=self.dtype)
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def param_items(self):
        return [("weights", self.weights), ("bias", self.bias)]

    def grad_items(self):
        return [(k, self.grads[k]) for k, _ in self.param_items() if k in self.grads]

    def forward(self, x, training=True):
        if x.ndim != 2 or x.shape[1] != self.weights.shape[1]:
            raise ShapeError(f"expected (N, {self.weights.shape[1]}), got {x.shape}")
        self._cache = x if training else None
        return x @ self.weights.T + self.bias

    def backward(self, grad_y):
        if self._cache is None:
            raise StateError("Linear.backward without a training forward")
        x = self._cache
        self._cache = None
        self.grads = {"weights": grad_y.T @ x, "bias": grad_y.sum(axis=0)}
        return grad_y @ self.weights


class GlobalAvgPool:
    """(N, C, H, W) -> (N, C) spatial mean."""

    def __init__(self):
        self._hw = None

    def param_items(self):
        return []

    def grad_items(self):
        return []

    def forward(self, x, training=True):
        self._hw = x.shape[2:] if training else None
        return x.mean(axis=(2, 3))

    def backward(self, grad_y):
        if self._hw is None:
            raise StateError("GlobalAvgPool.backward without a training forward")
        h, w = self._hw
        self._hw = None
        g = grad_y / (h * w)
        return np.broadcast_to(g[:, :, None, None], (*grad_y.shape, h, w)).copy()


class Flatten:
    def __init__(self):
        self._shape = None

    def param_items(self):
        return []

    def grad_items(self):
        return []

    def forward(self, x, training=True):
        self._shape = x.shape if training else None
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_y):
        if self._shape is None:
            raise StateError("Flatten.backward without a training forward")
        shape = self._shape
        self._shape = None
        return grad_y.reshape(shape)


class ResidualBlock:
    """act(main(x) + shortcut(x)); shortcut is identity or a 1x1 standard conv."""

    def __init__(self, main: list[tuple[str, object]],
                 shortcut: list[tuple[str, object]], post_act):
        self.main = main          # [(name, layer), ...]
        self.shortcut = shortcut  # [] means identity
        self.post_act = post_act

    def param_items(self):
        out = []
        for name, layer in self.main + self.shortcut:
            out.extend((f"{name}.{k}", v) for k, v in layer.param_items())
        return out

    def grad_items(self):
        out = []
        for name, layer in self.main + self.shortcut:
            out.extend((f"{name}.{k}", v) for k, v in layer.grad_items())
        return out

    def forward(self, x, training=True):
        h = x
        for _, layer in self.main:
            h = layer.forward(h, training)
        s = x
        for _, layer in self.shortcut:
            s = layer.forward(s, training)
        if h.shape != s.shape:
            raise ShapeError(f"residual join mismatch: main {h.shape} vs shortcut {s.shape}")
        return self.post_act.forward(h + s, training)

    def backward(self, grad_y):
        g = self.post_act.backward(grad_y)
        gm = g
        for _, layer in reversed(self.main):
            gm = layer.backward(gm)
        gs = g
        for _, layer in reversed(self.shortcut):
            gs = layer.backward(gs)
        return gm + gs


class Model:
    def __init__(self, layers: list[tuple[str, object]], dtype=np.float32):
        self.layers = layers
        self.dtype = resolve_dtype(dtype)

    def forward(self, x, training=True):
        for _, layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad_y):
        for _, layer in reversed(self.layers):
            grad_y = layer.backward(grad_y)
        return grad_y

    def named_params(self):
        out = []
        for name, layer in self.layers:
            out.extend((f"{name}.{k}", v) for k, v in layer.param_items())
        return out

    def named_grads(self):
        out = []
        for name, layer in self.layers:
            out.extend((f"{name}.{k}", v) for k, v in layer.grad_items())
        return out

    @property
    def param_count(self) -> int:
        return sum(int(p.size) for _, p in self.named_params())

    def conv_layers(self):
        """Named conv layers in execution order (recursing into blocks)."""
        out = []
        for name, layer in self.layers:
            if isinstance(layer, (NCConv2d, Conv2d)):
                out.append((name, layer))
            elif isinstance(layer, ResidualBlock):
                for sub, sl in layer.main + layer.shortcut:
                    if isinstance(sl, (NCConv2d, Conv2d)):
                        out.append((f"{name}.{sub}", sl))
        return out

    def describe(self) -> dict:
        layers = []
        for name, layer in self.layers:
            entry = {"name": name, "type": type(layer).__name__,
                     "params": sum(int(p.size) for _, p in layer.param_items())}
            if isinstance(layer, GroupNorm):
                entry["groups"] = layer.num_groups
            if isinstance(layer, ResidualBlock):
                entry["shortcut"] = "conv1x1_std" if layer.shortcut else "identity"
                entry["groups"] = [l.num_groups for _, l in layer.main + layer.shortcut
                                   if isinstance(l, GroupNorm)]
            layers.append(entry)
        return {"param_count": self.param_count, "layers": layers}


# ---------------------------------------------------------------------------
# construction

def _conv_unit(item: ConvItem, c, h, w, rng, dtype, eps, prefix=""):
    """Build conv [+ norm] [+ act] and return layers plus the output shape."""
    geom = ConvGeometry(c, item.out_channels, (item.kernel, item.kernel),
                        (item.stride, item.stride), (item.padding, item.padding),
                        (h, w))
    conv = CONV_KINDS[item.kind](geom, rng, dtype=dtype, eps=eps)
    layers = [(f"{prefix}conv", conv)]
    if item.norm == "gn":
        groups = default_group_count(item.out_channels)
        layers.append((f"{prefix}norm", GroupNorm(item.out_channels, groups, dtype=dtype)))
    elif item.norm != "none":
        raise ValueError(f"unknown norm kind {item.norm!r}")
    if item.act != "none":
        layers.append((f"{prefix}act", make_activation(item.act)))
    return layers, (item.out_channels, geom.out_h, geom.out_w)


def _build_block(item: BlockItem, c, h, w, rng, dtype, eps):
    u1 = ConvItem(item.kind, item.out_channels, 3, item.stride, 1, item.norm, item.act)
    main1, (c1, h1, w1) = _conv_unit(u1, c, h, w, rng, dtype, eps, prefix="1.")
    u2 = ConvItem(item.kind, item.out_channels, 3, 1, 1, item.norm, "none")
    main2, (c2, h2, w2) = _conv_unit(u2, c1, h1, w1, rng, dtype, eps, prefix="2.")
    shortcut = []
    if item.stride != 1 or c != item.out_channels:
        # dimension-matching projection: always a standard 1x1 conv, never
        # patch-standardized (a single-channel 1x1 patch would be degenerate)
        sitem = ConvItem("std", item.out_channels, 1, item.stride, 0, item.norm, "none")
        shortcut, (cs, hs, ws) = _conv_unit(sitem, c, h, w, rng, dtype, eps, prefix="short.")
        if (cs, hs, ws) != (c2, h2, w2):
            raise GeometryError(
                f"residual shapes do not join: main {(c2, h2, w2)} vs shortcut {(cs, hs, ws)}"
            )
    block = ResidualBlock(main1 + main2, shortcut, make_activation(item.act))
    return block, (c2, h2, w2)


def build(spec: ModelSpec, rng, dtype=np.float32, eps: float = 1e-5) -> Model:
    """Construct a Model from a spec, propagating shapes layer by layer."""
    dtype = resolve_dtype(dtype)
    c, (h, w) = spec.in_channels, spec.input_hw
    layers: list[tuple[str, object]] = []
    for idx, item in enumerate(spec.items):
        try:
            if isinstance(item, ConvItem):
                units, (c, h, w) = _conv_unit(item, c, h, w, rng, dtype, eps)
                for suffix, layer in units:
                    layers.append((f"layer{idx}.{suffix}", layer))
            elif isinstance(item, BlockItem):
                block, (c, h, w) = _build_block(item, c, h, w, rng, dtype, eps)
                layers.append((f"layer{idx}.block", block))
            else:
                raise ValueError(f"unknown item type {type(item).__name__}")
        except (GeometryError, ShapeError, ValueError) as e:
            raise type(e)(f"layer {idx}: {e}") from None
    flat_dim = c
    if spec.pool == "gap":
        layers.append(("pool", GlobalAvgPool()))
    elif spec.pool == "flatten":
        layers.append(("pool", Flatten()))
        flat_dim = c * h * w
    elif spec.pool != "none":
        raise ValueError(f"unknown pool kind {spec.pool!r}")
    if spec.classes is not None:
        if spec.pool == "none":
            layers.append(("pool", Flatten()))
            flat_dim = c * h * w
        layers.append(("classifier", Linear(flat_dim, spec.classes, rng, dtype)))
    return Model(layers, dtype)


# ---------------------------------------------------------------------------
# checkpoints
#
# Single binary file, little-endian throughout:
#   magic b"NCCK" | version u32 | element-size u8 (4 or 8) | entry count u32
#   then per parameter: name length u32, name utf-8, rank u32, extents u32 each,
#   raw buffer (size * element-size bytes).

CKPT_MAGIC = b"NCCK"
CKPT_VERSION = 1


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"checkpoint truncated while reading {what} "
                              f"(wanted {n} bytes, got {len(buf)})")
    return buf


def save_checkpoint(model: Model, path):
    params = model.named_params()
    itemsize = model.dtype.itemsize
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<IBI", CKPT_VERSION, itemsize, len(params)))
        for name, p in params:
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", p.ndim))
            f.write(struct.pack(f"<{p.ndim}I", *p.shape))
            f.write(np.ascontiguousarray(p, dtype=f"<f{itemsize}").tobytes())


def load_checkpoint(model: Model, path):
    """Load parameters in place. Validates everything before touching the model."""
    itemsize = model.dtype.itemsize
    loaded: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        version, fsize, count = struct.unpack("<IBI", _read_exact(f, 9, "header"))
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        if fsize != itemsize:
            raise CheckpointError(
                f"{path}: element type mismatch: file is {fsize}-byte, model is "
                f"{itemsize}-byte; rebuild the model with the matching element type"
            )
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
            name = _read_exact(f, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "shape"))
            size = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = _read_exact(f, size * fsize, f"data for {name!r}")
            loaded[name] = np.frombuffer(raw, dtype=f"<f{fsize}").reshape(shape)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last entry")
    params = dict(model.named_params())
    if set(loaded) != set(params):
        missing = sorted(set(params) - set(loaded))
        extra = sorted(set(loaded) - set(params))
        raise CheckpointError(f"{path}: parameter names do not match model "
                              f"(missing {missing}, unexpected {extra})")
    for name, arr in loaded.items():
        if params[name].shape != arr.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name!r}: "
                                  f"file {arr.shape}, model {params[name].shape}")
    for name, arr in loaded.items():
        params[name][...] = arr
