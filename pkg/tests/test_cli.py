import json
import os
import subprocess
import sys

import pytest

BASE_SYNTH = {
    "seed": 0,
    "element_type": "float32",
    "deterministic": True,
    "model": {"name": "cnn4", "conv": "nc", "norm": "none", "classes": 4,
              "in_channels": 2, "input_h": 8, "input_w": 8},
    "train": {"batch_size": 4, "lr": 0.05, "epochs": 2, "val_batch_size": 16},
    "data": {"dataset": "synthetic", "synth_train": 32, "synth_val": 16,
             "synth_classes": 4, "synth_channels": 2, "synth_h": 8, "synth_w": 8},
}


def run_cli(args, **kw):
    return subprocess.run([sys.executable, "-m", "ncconv.cli", *args],
                          capture_output=True, text=True, **kw)


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_usage_error_exit_2():
    proc = run_cli(["definitely-not-a-command"])
    assert proc.returncode == 2


def test_unknown_config_key_exit_2(tmp_path):
    cfg = write_cfg(tmp_path, {"seeed": 1})
    proc = run_cli(["gradcheck", "--config", cfg, "--out", str(tmp_path / "out")])
    assert proc.returncode == 2
    assert "unknown key" in proc.stderr


def test_nested_unknown_key_exit_2(tmp_path):
    cfg = write_cfg(tmp_path, {"train": {"lr": 0.1, "lr_decayy": 1}})
    proc = run_cli(["train", "--config", cfg, "--out", str(tmp_path / "out")])
    assert proc.returncode == 2


def test_gradcheck_default_passes(tmp_path):
    cfg = write_cfg(tmp_path, {"gradcheck": {"cases": 2}})
    out = tmp_path / "out"
    proc = run_cli(["gradcheck", "--config", cfg, "--out", str(out)])
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "PASS" in proc.stdout
    report = json.loads((out / "gradcheck_report.json").read_text())
    assert all(r["passed"] for r in report)
    assert (out / "resolved_config.json").exists()


def test_gradcheck_inject_bug_exit_1(tmp_path):
    cfg = write_cfg(tmp_path, {"gradcheck": {"cases": 2, "inject_bug": True}})
    proc = run_cli(["gradcheck", "--config", cfg, "--out", str(tmp_path / "out")])
    assert proc.returncode == 1
    assert "FAIL" in proc.stdout


def test_verify_theory(tmp_path):
    cfg = write_cfg(tmp_path, {"verify": {"instances": 12,
                                          "normality_patches": 5000,
                                          "trace_steps": 5}})
    out = tmp_path / "out"
    proc = run_cli(["verify-theory", "--config", cfg, "--out", str(out)])
    assert proc.returncode == 0, proc.stdout + proc.stderr
    reports = json.loads((out / "identity_reports.json").read_text())
    assert len(reports) == 24
    assert all(r["passed"] for r in reports)
    assert (out / "normality_report.json").exists()
    trace = (out / "grad_norm_trace.csv").read_text().splitlines()
    assert trace[0].startswith("model,step,loss,probe_loss,abs_dloss")
    assert len(trace) == 1 + 2 * 5


def test_train_writes_outputs_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path, BASE_SYNTH)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    p1 = run_cli(["train", "--config", cfg, "--out", str(out1)])
    p2 = run_cli(["train", "--config", cfg, "--out", str(out2)])
    assert p1.returncode == 0, p1.stdout + p1.stderr
    assert p2.returncode == 0
    m1 = (out1 / "metrics.csv").read_bytes()
    m2 = (out2 / "metrics.csv").read_bytes()
    assert m1 == m2  # byte-identical in deterministic mode
    assert (out1 / "summary.json").exists()
    assert (out1 / "checkpoints" / "epoch_001.ckpt").exists()


def test_train_rerun_from_resolved_config(tmp_path):
    cfg = write_cfg(tmp_path, BASE_SYNTH)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert run_cli(["train", "--config", cfg, "--out", str(out1)]).returncode == 0
    resolved = out1 / "resolved_config.json"
    assert run_cli(["train", "--config", str(resolved), "--out", str(out2)]).returncode == 0
    assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()


def test_train_lr_zero_flat_loss_curve(tmp_path):
    cfg_dict = json.loads(json.dumps(BASE_SYNTH))
    cfg_dict["train"]["lr"] = 0.0
    cfg = write_cfg(tmp_path, cfg_dict)
    out = tmp_path / "out"
    assert run_cli(["train", "--config", cfg, "--out", str(out)]).returncode == 0
    rows = [l.split(",") for l in
            (out / "metrics.csv").read_text().splitlines()[1:]]
    header, data = rows[0], rows[1:]
    i = header.index("train_loss")
    losses = {r[i] for r in data}
    assert len(losses) == 1  # identical loss every epoch


def test_train_resume_continuation(tmp_path):
    full_cfg = json.loads(json.dumps(BASE_SYNTH))
    full_cfg["train"]["epochs"] = 4
    cfg_full = write_cfg(tmp_path, full_cfg, "full.json")
    out_full = tmp_path / "full"
    assert run_cli(["train", "--config", cfg_full, "--out", str(out_full)]).returncode == 0

    part_cfg = json.loads(json.dumps(BASE_SYNTH))
    part_cfg["train"]["epochs"] = 2
    cfg_part = write_cfg(tmp_path, part_cfg, "part.json")
    out_part = tmp_path / "part"
    assert run_cli(["train", "--config", cfg_part, "--out", str(out_part)]).returncode == 0

    resume_cfg = json.loads(json.dumps(BASE_SYNTH))
    resume_cfg["train"]["epochs"] = 4
    resume_cfg["train"]["start_epoch"] = 2
    resume_cfg["train"]["resume_checkpoint"] = str(out_part / "checkpoints" / "epoch_001.ckpt")
    cfg_resume = write_cfg(tmp_path, resume_cfg, "resume.json")
    out_resume = tmp_path / "resume"
    assert run_cli(["train", "--config", cfg_resume, "--out", str(out_resume)]).returncode == 0

    full_rows = (out_full / "metrics.csv").read_text().splitlines()[2:]
    resume_rows = (out_resume / "metrics.csv").read_text().splitlines()[2:]
    assert resume_rows == full_rows[2:4]  # epochs 2..3 match the uninterrupted run


def test_eval_from_checkpoint(tmp_path):
    cfg = write_cfg(tmp_path, BASE_SYNTH)
    out = tmp_path / "out"
    assert run_cli(["train", "--config", cfg, "--out", str(out)]).returncode == 0
    eval_cfg = json.loads(json.dumps(BASE_SYNTH))
    eval_cfg["eval"] = {"checkpoint": str(out / "checkpoints" / "epoch_001.ckpt"),
                        "split": "val"}
    cfge = write_cfg(tmp_path, eval_cfg, "eval.json")
    oute = tmp_path / "oute"
    proc = run_cli(["eval", "--config", cfge, "--out", str(oute)])
    assert proc.returncode == 0, proc.stdout + proc.stderr
    report = json.loads((oute / "eval_report.json").read_text())
    assert {"top1_accuracy", "top1_error", "top5_accuracy", "top5_error"} <= set(report)
    assert report["top1_accuracy"] == pytest.approx(1.0 - report["top1_error"])


def test_eval_requires_checkpoint(tmp_path):
    cfg = write_cfg(tmp_path, BASE_SYNTH)
    proc = run_cli(["eval", "--config", cfg, "--out", str(tmp_path / "out")])
    assert proc.returncode == 2


def test_train_missing_dataset_dir_exit_2(tmp_path):
    cfg_dict = json.loads(json.dumps(BASE_SYNTH))
    cfg_dict["data"] = {"dataset": "cifar10"}
    cfg = write_cfg(tmp_path, cfg_dict)
    env = {k: v for k, v in os.environ.items() if k != "NCCONV_DATA_DIR"}
    proc = subprocess.run(
        [sys.executable, "-m", "ncconv.cli", "train", "--config", cfg,
         "--out", str(tmp_path / "out")],
        capture_output=True, text=True, env=env)
    assert proc.returncode == 2
    assert "NCCONV_DATA_DIR" in proc.stderr


def test_train_env_var_dataset_dir(tmp_path, mnist_dir):
    cfg_dict = json.loads(json.dumps(BASE_SYNTH))
    cfg_dict["data"] = {"dataset": "mnist", "train_per_class": 2, "val_per_class": 1}
    cfg_dict["model"] = {"name": "cnn4", "conv": "nc", "norm": "none", "classes": 10,
                         "in_channels": 1, "input_h": 28, "input_w": 28}
    cfg_dict["train"]["epochs"] = 1
    cfg = write_cfg(tmp_path, cfg_dict)
    env = dict(os.environ, NCCONV_DATA_DIR=str(mnist_dir))
    proc = subprocess.run(
        [sys.executable, "-m", "ncconv.cli", "train", "--config", cfg,
         "--out", str(tmp_path / "out")],
        capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stdout + proc.stderr


def test_bench_smoke_and_bad_geometry(tmp_path):
    cfg = write_cfg(tmp_path, {"bench": {"repeats": 1, "geometries": [
        {"in_channels": 2, "out_channels": 2, "kernel": 3, "stride": 1,
         "padding": 1, "height": 8, "width": 8}]}})
    out = tmp_path / "out"
    proc = run_cli(["bench", "--config", cfg, "--out", str(out)])
    assert proc.returncode == 0, proc.stdout + proc.stderr
    lines = (out / "bench.csv").read_text().splitlines()
    assert lines[0].startswith("geometry,op,median_ms_per_image")
    assert len(lines) == 4

    bad = write_cfg(tmp_path, {"bench": {"repeats": 1, "geometries": [
        {"in_channels": 0, "out_channels": 2, "kernel": 3, "stride": 1,
         "padding": 1, "height": 8, "width": 8}]}}, "bad.json")
    proc = run_cli(["bench", "--config", bad, "--out", str(tmp_path / "out2")])
    assert proc.returncode == 2


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_cfg(tmp_path, BASE_SYNTH)
    out1, out2 = tmp_path / "s0", tmp_path / "s1"
    run_cli(["train", "--config", cfg, "--out", str(out1)])
    run_cli(["train", "--config", cfg, "--out", str(out2), "--seed", "1"])
    assert (out1 / "metrics.csv").read_bytes() != (out2 / "metrics.csv").read_bytes()
    resolved = json.loads((out2 / "resolved_config.json").read_text())
    assert resolved["seed"] == 1
