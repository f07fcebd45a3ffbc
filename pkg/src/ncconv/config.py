"""Run configuration: a strict, nested schema with fail-fast unknown-key checks.

Defaults encode the micro-batch protocol used throughout: batch 2, lr 0.01
decayed by 0.1 every 30 epochs, plain SGD, 50 epochs. Every command
materializes all defaults into a resolved-config JSON next to its outputs;
re-running from that file reproduces the run bit-exactly in deterministic mode.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Optional, get_args, get_origin, get_type_hints

from .bench import default_geometries
from .errors import ConfigError

DATA_DIR_ENV = "NCCONV_DATA_DIR"


@dataclass
class ModelSection:
    name: str = "resnet8"           # resnet8 | cnn4
    conv: str = "nc"                # nc | std
    norm: str = "none"              # none | gn
    activation: str = "relu"        # relu | elu | selu
    classes: int = 10
    in_channels: int = 3
    input_h: int = 32
    input_w: int = 32


@dataclass
class TrainSection:
    batch_size: int = 2
    lr: float = 0.01
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 30
    epochs: int = 50
    momentum: float = 0.0
    weight_decay: float = 0.0
    hflip: bool = False
    shift_frac: float = 0.0
    val_batch_size: int = 100
    start_epoch: int = 0
    resume_checkpoint: Optional[str] = None
    checkpoint_every: int = 1


@dataclass
class DataSection:
    dataset: str = "synthetic"      # cifar10 | mnist | synthetic
    dir: Optional[str] = None       # falls back to $NCCONV_DATA_DIR
    train_per_class: Optional[int] = None
    val_per_class: Optional[int] = None
    standardize_inputs: bool = True
    synth_train: int = 512
    synth_val: int = 128
    synth_classes: int = 10
    synth_channels: int = 3
    synth_h: int = 32
    synth_w: int = 32
    synth_separable: bool = True


@dataclass
class GradcheckSection:
    cases: int = 20
    step: float = 1e-5
    inject_bug: bool = False        # test hook: perturbs one gradient, must fail


@dataclass
class VerifySection:
    instances: int = 100
    sizes: list = field(default_factory=lambda: [4, 9, 27])
    tolerance: float = 1e-10
    normality_patches: int = 100000
    normality_patch_len: int = 27
    normality_out_channels: int = 64
    trace_steps: int = 200
    trace_batch: int = 2
    trace_lr: float = 0.01


@dataclass
class BenchSection:
    repeats: int = 5
    geometries: list = field(default_factory=default_geometries)


@dataclass
class EvalSection:
    checkpoint: Optional[str] = None
    split: str = "val"              # val | train


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/run"
    element_type: str = "float32"
    threads: int = 1
    deterministic: bool = True
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)
    verify: VerifySection = field(default_factory=VerifySection)
    bench: BenchSection = field(default_factory=BenchSection)
    eval: EvalSection = field(default_factory=EvalSection)


def _coerce(value, hint, path):
    origin = get_origin(hint)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
        return _from_dict(hint, value, path)
    if origin is not None and type(None) in get_args(hint):  # Optional[...]
        if value is None:
            return None
        inner = next(a for a in get_args(hint) if a is not type(None))
        return _coerce(value, inner, path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if hint is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported config field type {hint}")


def _from_dict(cls, d: dict, path: str = "config"):
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}; valid keys are {sorted(names)}")
    kwargs = {k: _coerce(v, hints[k], f"{path}.{k}") for k, v in d.items()}
    return cls(**kwargs)


def load_config(path: str | None) -> RunConfig:
    """Parse a JSON config file; None means all defaults."""
    if path is None:
        return RunConfig()
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return _from_dict(RunConfig, raw)


def validate(cfg: RunConfig) -> None:
    if cfg.element_type not in ("float32", "float64"):
        raise ConfigError(f"element_type must be float32 or float64, got {cfg.element_type!r}")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    t = cfg.train
    for name, v in [("batch_size", t.batch_size), ("epochs", t.epochs),
                    ("lr_decay_every", t.lr_decay_every),
                    ("val_batch_size", t.val_batch_size)]:
        if v < 1:
            raise ConfigError(f"train.{name} must be >= 1, got {v}")
    if t.lr < 0 or t.lr_decay_factor <= 0:
        raise ConfigError("train.lr must be >= 0 and train.lr_decay_factor > 0")
    if not 0 <= t.shift_frac < 1:
        raise ConfigError(f"train.shift_frac must lie in [0, 1), got {t.shift_frac}")
    if not 0 <= t.start_epoch < t.epochs:
        raise ConfigError(f"train.start_epoch must lie in [0, epochs), got {t.start_epoch}")
    if cfg.gradcheck.cases < 1:
        raise ConfigError("gradcheck.cases must be >= 1")
    if cfg.verify.instances < 1:
        raise ConfigError("verify.instances must be >= 1")
    if cfg.model.name not in ("resnet8", "cnn4"):
        raise ConfigError(f"model.name must be resnet8 or cnn4, got {cfg.model.name!r}")
    if cfg.model.conv not in ("nc", "std"):
        raise ConfigError(f"model.conv must be nc or std, got {cfg.model.conv!r}")
    if cfg.model.norm not in ("none", "gn"):
        raise ConfigError(f"model.norm must be none or gn, got {cfg.model.norm!r}")
    if cfg.data.dataset not in ("cifar10", "mnist", "synthetic"):
        raise ConfigError(f"data.dataset must be cifar10, mnist or synthetic, "
                          f"got {cfg.data.dataset!r}")
    if cfg.eval.split not in ("val", "train"):
        raise ConfigError(f"eval.split must be val or train, got {cfg.eval.split!r}")


def data_directory(cfg: RunConfig) -> str:
    """Resolve the dataset directory from config or the environment."""
    d = cfg.data.dir or os.environ.get(DATA_DIR_ENV)
    if not d:
        raise ConfigError(
            f"data.dir is not set and ${DATA_DIR_ENV} is empty; "
            f"point one of them at the dataset directory"
        )
    return d


def resolved_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def write_resolved(cfg: RunConfig, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "resolved_config.json")
    with open(path, "w") as f:
        json.dump(resolved_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")
    return path
