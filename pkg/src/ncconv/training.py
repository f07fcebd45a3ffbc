"""Loss, SGD with step decay, train/eval loops, and metrics records.

Training randomness (shuffling, augmentation) is derived from (seed, epoch)
only, so a run resumed from a checkpoint replays exactly the stream an
uninterrupted run would have seen.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .data import Dataset, augment, batches
from .errors import NonFiniteLossError
from .models import Model

METRICS_SCHEMA = "ncconv.metrics.v1"
METRICS_FIELDS = ["epoch", "step", "train_loss", "train_acc", "val_loss",
                  "val_top1", "val_top5", "mean_grad_norm", "wall_ms"]


@dataclass
class TrainConfig:
    batch_size: int = 2
    lr: float = 0.01
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 30
    epochs: int = 50
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    hflip: bool = False
    shift_frac: float = 0.0
    val_batch_size: int = 100


@dataclass
class MetricsRecord:
    epoch: int
    step: int
    train_loss: float = float("nan")
    train_acc: float = float("nan")
    val_loss: float = float("nan")
    val_top1: float = float("nan")
    val_top5: float = float("nan")
    mean_grad_norm: float = float("nan")
    wall_ms: float = 0.0

    def csv_row(self) -> str:
        vals = asdict(self)
        return ",".join(repr(vals[k]) if isinstance(vals[k], float) else str(vals[k])
                        for k in METRICS_FIELDS)


def metrics_header() -> str:
    return f"# schema={METRICS_SCHEMA}\n" + ",".join(METRICS_FIELDS)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def _per_sample_ce(logits: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses (float64) and the mean-reduced gradient.

    Loss arithmetic runs in float64 so per-sample values do not depend on how
    samples happen to be batched together.
    """
    labels = np.asarray(labels)
    n, ncls = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= ncls:
        raise ValueError(f"labels must lie in [0, {ncls}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits.astype(np.float64, copy=True)
    shifted -= shifted.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    per = lse - shifted[np.arange(n), labels]
    grad = np.exp(shifted)
    grad /= grad.sum(axis=1, keepdims=True)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return per, grad.astype(logits.dtype, copy=False)


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy with log-sum-exp stabilization; exact gradient."""
    per, grad = _per_sample_ce(logits, labels)
    return float(per.mean()), grad


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> int:
    k = min(k, logits.shape[1])
    topk = np.argpartition(logits, -k, axis=1)[:, -k:]
    return int((topk == labels[:, None]).any(axis=1).sum())


class SGD:
    """Plain SGD; momentum and weight decay supported but default to 0."""

    def __init__(self, model: Model, momentum: float = 0.0, weight_decay: float = 0.0):
        self.model = model
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, lr: float):
        grads = dict(self.model.named_grads())
        for name, p in self.model.named_params():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            if self.momentum:
                v = self._velocity.get(name)
                if v is None:
                    v = np.zeros_like(p)
                    self._velocity[name] = v
                v *= self.momentum
                v += g
                g = v
            p -= p.dtype.type(lr) * g.astype(p.dtype, copy=False)


def global_grad_norm(model: Model) -> float:
    sq = 0.0
    for _, g in model.named_grads():
        flat = g.ravel()
        sq += float(flat @ flat)
    return sq**0.5


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def _abort_non_finite(model, what, value, step):
    norms = {name: float(np.linalg.norm(g)) for name, g in model.named_grads()}
    raise NonFiniteLossError(
        f"non-finite {what} ({value}) at step {step}; per-parameter gradient norms follow",
        norms,
    )


def train_epoch(model: Model, ds: Dataset, cfg: TrainConfig, epoch: int,
                optimizer: SGD | None = None) -> MetricsRecord:
    """One pass over ds with in-place SGD updates; returns train-side metrics."""
    opt = optimizer or SGD(model, cfg.momentum, cfg.weight_decay)
    rng = _epoch_rng(cfg.seed, epoch)
    lr = lr_at_epoch(cfg, epoch)
    n = ds.images.shape[0]
    order = rng.permutation(n)
    sample_losses: list[float] = []
    hits = 0
    gnorm_sum = 0.0
    steps = 0
    for start in range(0, n, cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        imgs = ds.images[idx]
        labels = ds.labels[idx]
        if cfg.hflip or cfg.shift_frac > 0:
            imgs = augment(imgs, rng, hflip=cfg.hflip, shift_frac=cfg.shift_frac)
        x = imgs.astype(model.dtype, copy=False)
        logits = model.forward(x, training=True)
        per, grad = _per_sample_ce(logits, labels)
        loss = float(per.mean())
        if not np.isfinite(loss):
            _abort_non_finite(model, "loss", loss, steps)
        model.backward(grad)
        gn = global_grad_norm(model)
        if not np.isfinite(gn):
            _abort_non_finite(model, "gradient norm", gn, steps)
        opt.step(lr)
        sample_losses.extend(per.tolist())
        hits += topk_hits(logits, labels, 1)
        gnorm_sum += gn
        steps += 1
    # fsum: exactly-rounded, so the epoch loss is batch-order invariant
    return MetricsRecord(
        epoch=epoch,
        step=steps,
        train_loss=math.fsum(sample_losses) / n,
        train_acc=hits / n,
        mean_grad_norm=gnorm_sum / max(steps, 1),
    )


def evaluate(model: Model, ds: Dataset, batch_size: int = 100) -> MetricsRecord:
    n = ds.images.shape[0]
    sample_losses: list[float] = []
    top1 = 0
    top5 = 0
    for imgs, labels in batches(ds, batch_size):
        x = imgs.astype(model.dtype, copy=False)
        logits = model.forward(x, training=False)
        per, _ = _per_sample_ce(logits, labels)
        sample_losses.extend(per.tolist())
        top1 += topk_hits(logits, labels, 1)
        top5 += topk_hits(logits, labels, 5)
    return MetricsRecord(epoch=-1, step=0, val_loss=math.fsum(sample_losses) / n,
                         val_top1=top1 / n, val_top5=top5 / n)


def fit(model: Model, train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig,
        start_epoch: int = 0, deterministic: bool = True,
        on_epoch=None) -> list[MetricsRecord]:
    """Run epochs [start_epoch, cfg.epochs); returns one merged record per epoch.

    In deterministic mode wall_ms is recorded as 0 so metric streams from
    identical runs are byte-identical.
    """
    opt = SGD(model, cfg.momentum, cfg.weight_decay)
    n = train_ds.images.shape[0]
    steps_per_epoch = -(-n // cfg.batch_size)
    records = []
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        tr = train_epoch(model, train_ds, cfg, epoch, optimizer=opt)
        ev = evaluate(model, val_ds, cfg.val_batch_size)
        wall = 0.0 if deterministic else (time.perf_counter() - t0) * 1000.0
        rec = replace(tr, step=(epoch + 1) * steps_per_epoch, val_loss=ev.val_loss,
                      val_top1=ev.val_top1, val_top5=ev.val_top5, wall_ms=wall)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec, model)
    return records
