"""Command-line entry point: gradcheck, verify-theory, train, eval, bench.

Exit codes: 0 success, 1 check/assertion failure, 2 usage or config error.
Every command writes a resolved-config JSON (all defaults materialized) into
the output directory before doing any work.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import bench as bench_mod
from .config import (RunConfig, data_directory, load_config, validate,
                     write_resolved)
from .data import (Dataset, load_cifar10, load_mnist_idx, standardize_channels,
                   subset, synth_classification)
from .errors import (CheckFailureError, CheckpointError, ConfigError,
                     DataFormatError, NcconvError, NonFiniteLossError)
from .gradcheck import run_gradcheck
from .models import MODEL_BUILDERS, build, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, fit, metrics_header


def _thread_limiter(threads: int):
    """Cap BLAS threads; tiny micro-batch GEMMs run fastest single-threaded."""
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


def _build_model(cfg: RunConfig, rng):
    m = cfg.model
    spec = MODEL_BUILDERS[m.name](conv=m.conv, norm=m.norm, activation=m.activation,
                                  classes=m.classes, in_channels=m.in_channels,
                                  input_hw=(m.input_h, m.input_w))
    return build(spec, rng, dtype=cfg.element_type)


def _load_train_val(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.dataset == "synthetic":
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))
        shape = (d.synth_channels, d.synth_h, d.synth_w)
        train = synth_classification(d.synth_train, d.synth_classes, shape, rng,
                                     separable=d.synth_separable)
        val = synth_classification(d.synth_val, d.synth_classes, shape, rng,
                                   separable=d.synth_separable)
    else:
        directory = data_directory(cfg)
        loader = load_cifar10 if d.dataset == "cifar10" else load_mnist_idx
        train, val = loader(directory)
    if d.train_per_class is not None:
        train = subset(train, d.train_per_class, cfg.seed)
    if d.val_per_class is not None:
        val = subset(val, d.val_per_class, cfg.seed + 1)
    if d.standardize_inputs:
        train = standardize_channels(train)
        val = standardize_channels(val, train.channel_mean, train.channel_std)
    return train, val


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=float)
        f.write("\n")


def cmd_gradcheck(cfg: RunConfig) -> int:
    out = cfg.out_dir
    write_resolved(cfg, out)
    results = run_gradcheck(cases=cfg.gradcheck.cases, seed=cfg.seed,
                            step=cfg.gradcheck.step,
                            inject_bug=cfg.gradcheck.inject_bug)
    all_ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.family:<14} {r.descriptor:<44} "
              f"max rel err {r.max_rel_err:.3e} (tol {r.tol:g})")
        all_ok &= r.passed
    _write_json(os.path.join(out, "gradcheck_report.json"),
                [r.__dict__ | {"passed": r.passed} for r in results])
    print(f"gradcheck: {sum(r.passed for r in results)}/{len(results)} cases passed")
    return 0 if all_ok else 1


def cmd_verify_theory(cfg: RunConfig) -> int:
    from .verify import (check_output_normality, measure_grad_norm_reduction,
                         run_identity_checks)

    out = cfg.out_dir
    write_resolved(cfg, out)
    v = cfg.verify

    reports = run_identity_checks(v.instances, tuple(v.sizes), cfg.seed)
    hard_ok = all(r.passed for r in reports)
    worst = max(r.rel_gap for r in reports)
    printed_gap = max(r.extras.get("one_over_sigma_gap", 0.0) for r in reports)
    print(f"identities: {len(reports)} instances, max gap {worst:.3e} "
          f"({'PASS' if hard_ok else 'FAIL'}); 1/sigma-variant max gap {printed_gap:.3e}")
    _write_json(os.path.join(out, "identity_reports.json"),
                [r.to_dict() for r in reports])

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 5]))
    norm_reports = check_output_normality(v.normality_patch_len, v.normality_patches,
                                          rng, v.normality_out_channels)
    norm_ok = all(r["passed"] is not False for r in norm_reports)
    for r in norm_reports:
        verdict = {True: "PASS", False: "FAIL", None: "n/a"}[r["passed"]]
        print(f"normality[{r['distribution']}]: mean {r['mean']:+.4f} "
              f"var {r['variance']:.4f} kurtosis {r['excess_kurtosis']:+.3f} [{verdict}]")
    _write_json(os.path.join(out, "normality_report.json"), norm_reports)

    # observational gradient-norm trace: identically initialized nc vs std 4-conv nets
    from .models import cnn4_spec
    rng_data = np.random.default_rng(np.random.SeedSequence([cfg.seed, 6]))
    ds = synth_classification(max(64, cfg.verify.trace_batch * 8), 10, (3, 16, 16),
                              rng_data, separable=True)
    models = {}
    for kind in ("nc", "std"):
        spec = cnn4_spec(conv=kind, norm="none", classes=10, in_channels=3,
                         input_hw=(16, 16), widths=(8, 8, 16, 16))
        models[kind] = build(spec, np.random.default_rng(cfg.seed), dtype=cfg.element_type)
    rows = measure_grad_norm_reduction(models, ds, v.trace_steps, v.trace_batch,
                                       v.trace_lr, cfg.seed)
    trace_path = os.path.join(out, "grad_norm_trace.csv")
    with open(trace_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"gradient-norm trace: {len(rows)} rows -> {trace_path}")
    return 0 if (hard_ok and norm_ok) else 1


def cmd_train(cfg: RunConfig) -> int:
    out = cfg.out_dir
    write_resolved(cfg, out)
    train_ds, val_ds = _load_train_val(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    model = _build_model(cfg, rng)
    t = cfg.train
    if t.resume_checkpoint:
        load_checkpoint(model, t.resume_checkpoint)
    tc = TrainConfig(batch_size=t.batch_size, lr=t.lr,
                     lr_decay_factor=t.lr_decay_factor,
                     lr_decay_every=t.lr_decay_every, epochs=t.epochs,
                     momentum=t.momentum, weight_decay=t.weight_decay,
                     seed=cfg.seed, hflip=t.hflip, shift_frac=t.shift_frac,
                     val_batch_size=t.val_batch_size)

    ckpt_dir = os.path.join(out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    metrics_path = os.path.join(out, "metrics.csv")
    new_file = not (t.resume_checkpoint and os.path.exists(metrics_path))
    metrics_f = open(metrics_path, "w" if new_file else "a")
    if new_file:
        metrics_f.write(metrics_header() + "\n")

    def on_epoch(rec, mdl):
        metrics_f.write(rec.csv_row() + "\n")
        metrics_f.flush()
        if (rec.epoch + 1) % t.checkpoint_every == 0 or rec.epoch + 1 == t.epochs:
            save_checkpoint(mdl, os.path.join(ckpt_dir, f"epoch_{rec.epoch:03d}.ckpt"))

    print(f"model {cfg.model.name} ({cfg.model.conv}, norm={cfg.model.norm}): "
          f"{model.param_count} parameters; train N={train_ds.images.shape[0]}, "
          f"val N={val_ds.images.shape[0]}")
    t0 = time.perf_counter()
    try:
        with _thread_limiter(cfg.threads):
            records = fit(model, train_ds, val_ds, tc, start_epoch=t.start_epoch,
                          deterministic=cfg.deterministic, on_epoch=on_epoch)
    finally:
        metrics_f.close()
    wall = time.perf_counter() - t0
    for rec in records:
        print(f"epoch {rec.epoch:3d}: train loss {rec.train_loss:.4f} "
              f"acc {rec.train_acc:.3f} | val loss {rec.val_loss:.4f} "
              f"top1 {rec.val_top1:.3f} top5 {rec.val_top5:.3f}")
    last = records[-1]
    _write_json(os.path.join(out, "summary.json"), {
        "model": model.describe(),
        "dataset": {"train": train_ds.name, "val": val_ds.name,
                    "train_n": int(train_ds.images.shape[0]),
                    "val_n": int(val_ds.images.shape[0]),
                    "channel_mean": None if train_ds.channel_mean is None
                    else train_ds.channel_mean.tolist(),
                    "channel_std": None if train_ds.channel_std is None
                    else train_ds.channel_std.tolist()},
        "final": {"epoch": last.epoch, "train_loss": last.train_loss,
                  "train_acc": last.train_acc, "val_loss": last.val_loss,
                  "val_top1": last.val_top1, "val_top5": last.val_top5,
                  "val_top1_error": 1.0 - last.val_top1,
                  "val_top5_error": 1.0 - last.val_top5},
        "best_val_loss": min(r.val_loss for r in records),
        "total_wall_s": wall,
    })
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    out = cfg.out_dir
    write_resolved(cfg, out)
    if not cfg.eval.checkpoint:
        raise ConfigError("eval.checkpoint is required")
    train_ds, val_ds = _load_train_val(cfg)
    ds = val_ds if cfg.eval.split == "val" else train_ds
    model = _build_model(cfg, np.random.default_rng(np.random.SeedSequence([cfg.seed])))
    load_checkpoint(model, cfg.eval.checkpoint)
    with _thread_limiter(cfg.threads):
        rec = evaluate(model, ds, cfg.train.val_batch_size)
    report = {
        "checkpoint": cfg.eval.checkpoint,
        "split": cfg.eval.split,
        "n": int(ds.images.shape[0]),
        "loss": rec.val_loss,
        "top1_accuracy": rec.val_top1,
        "top5_accuracy": rec.val_top5,
        "top1_error": 1.0 - rec.val_top1,
        "top5_error": 1.0 - rec.val_top5,
    }
    _write_json(os.path.join(out, "eval_report.json"), report)
    print(f"eval[{cfg.eval.split}]: loss {rec.val_loss:.4f} "
          f"top1 acc {rec.val_top1:.4f} (err {1 - rec.val_top1:.4f}) "
          f"top5 acc {rec.val_top5:.4f} (err {1 - rec.val_top5:.4f})")
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    out = cfg.out_dir
    write_resolved(cfg, out)
    # geometry problems here are config mistakes, not check failures
    from .errors import GeometryError
    try:
        geoms = [bench_mod._geometry_from_dict(d) for d in cfg.bench.geometries]
        del geoms
    except (GeometryError, KeyError, TypeError) as e:
        raise ConfigError(f"bench.geometries: {e}") from None
    if cfg.bench.repeats < 1:
        raise ConfigError("bench.repeats must be >= 1")
    with _thread_limiter(cfg.threads):
        rows = bench_mod.run_bench(cfg.bench.geometries, cfg.bench.repeats,
                                   seed=cfg.seed)
    path = os.path.join(out, "bench.csv")
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    for r in rows:
        print(f"{r['geometry']:<28} {r['op']:<7} {r['median_ms_per_image']:.3f} ms/image")
    print(f"bench: {len(rows)} rows -> {path}")
    return 0


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "verify-theory": cmd_verify_theory,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ncconv",
        description="Patch-standardized convolution toolkit: gradient checks, "
                    "identity verification, micro-batch training, benchmarks.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config file (defaults if omitted)")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--out", help="override config output directory")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        validate(cfg)
        return COMMANDS[args.command](cfg)
    except (ConfigError, DataFormatError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NonFiniteLossError as e:
        print(f"error: {e.diagnostics()}", file=sys.stderr)
        return 1
    except CheckFailureError as e:
        print(f"check failed: {e}", file=sys.stderr)
        return 1
    except NcconvError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
