"""End-to-end CLI tests driven through subprocess."""

import json
import os
import subprocess

import pytest

CLI = os.environ.get("FSLKIT_CLI")

pytestmark = pytest.mark.skipif(not CLI, reason="FSLKIT_CLI not set")


def run_cli(*args, cwd=None):
    return subprocess.run([CLI, *args], capture_output=True, text=True, cwd=cwd)


def write_config(path, out_dir, manifest="", split=""):
    config = {
        "backbone": {"kind": "precomputed", "embed_dim": 8},
        "synth": {
            "classes": 8,
            "dim": 8,
            "mean_scale": 4.0,
            "samples_per_class": 24,
            "seed": 3,
            "train_fraction": 0.5,
        },
        "train": {
            "epochs": 2,
            "episodes_per_epoch": 10,
            "n_way": 3,
            "m_shot": 3,
            "queries_per_class": 5,
            "seed": 11,
            "learning_rate": 0.01,
        },
        "eval": {"n_way": 3, "m_shot": 3, "queries_per_class": 5, "episodes": 40, "seed": 21},
        "out": {"dir": str(out_dir)},
    }
    if manifest:
        config["data"] = {"manifest": str(manifest), "split": str(split)}
    path.write_text(json.dumps(config))
    return config


def test_gradcheck_exits_zero():
    result = run_cli("gradcheck", "--trials", "3")
    assert result.returncode == 0, result.stderr
    assert "passed" in result.stdout


def test_full_pipeline_and_exit_codes(tmp_path):
    out = tmp_path / "run"
    config_path = tmp_path / "config.json"
    write_config(config_path, out)

    result = run_cli("synth", "--config", str(config_path))
    assert result.returncode == 0, result.stderr
    manifest = out / "synthetic_manifest.json"
    split = out / "synthetic_split.json"
    assert manifest.exists() and split.exists() and (out / "synthetic.fsle").exists()

    write_config(config_path, out, manifest, split)
    result = run_cli("train", "--config", str(config_path))
    assert result.returncode == 0, result.stderr
    checkpoint = out / "checkpoint.fslc"
    assert checkpoint.exists() and (out / "train_log.csv").exists()

    result = run_cli("eval", "--config", str(config_path), "--checkpoint", str(checkpoint))
    assert result.returncode == 0, result.stderr
    report = json.loads((out / "eval_report.json").read_text())
    assert report["n_episodes"] == 40
    assert 0.0 <= report["mean_accuracy"] <= 1.0

    result = run_cli("compare", "--config", str(config_path), "--checkpoint", str(checkpoint))
    assert result.returncode == 0, result.stderr
    assert "mahalanobis" in result.stdout
    assert (out / "head_comparison.json").exists()


def test_config_errors_exit_2(tmp_path):
    config_path = tmp_path / "config.json"
    # Unknown key is rejected before any work starts.
    config_path.write_text(json.dumps({"train": {"learning_rte": 0.1}}))
    result = run_cli("train", "--config", str(config_path))
    assert result.returncode == 2
    assert "learning_rte" in result.stderr

    # Missing data.manifest is named in the message.
    config_path.write_text(json.dumps({"train": {"epochs": 1}}))
    result = run_cli("train", "--config", str(config_path))
    assert result.returncode == 2
    assert "data.manifest" in result.stderr

    # Invalid field values are config errors too.
    config_path.write_text(json.dumps({"train": {"momentum": 2.0}}))
    result = run_cli("train", "--config", str(config_path))
    assert result.returncode == 2


def test_data_errors_exit_3(tmp_path):
    config_path = tmp_path / "config.json"
    write_config(config_path, tmp_path / "out", tmp_path / "missing.json", tmp_path / "s.json")
    result = run_cli("train", "--config", str(config_path))
    assert result.returncode == 3

    result = run_cli("scan", str(tmp_path / "no_such_dir"), str(tmp_path / "m.json"))
    assert result.returncode == 3


def test_set_overrides_apply(tmp_path):
    out = tmp_path / "run"
    config_path = tmp_path / "config.json"
    write_config(config_path, out)
    result = run_cli("synth", "--config", str(config_path), "--set", "synth.classes=4")
    assert result.returncode == 0, result.stderr
    manifest = json.loads((out / "synthetic_manifest.json").read_text())
    assert len(manifest["classes"]) == 4

    result = run_cli("synth", "--config", str(config_path), "--set", "synth.classs=4")
    assert result.returncode == 2  # typo rejected


def test_train_determinism_via_cli(tmp_path):
    config_path = tmp_path / "config.json"
    for name in ("a", "b"):
        out = tmp_path / name
        write_config(config_path, out)
        assert run_cli("synth", "--config", str(config_path)).returncode == 0
        write_config(config_path, out, out / "synthetic_manifest.json",
                     out / "synthetic_split.json")
        assert run_cli("train", "--config", str(config_path)).returncode == 0
    log_a = (tmp_path / "a" / "train_log.csv").read_bytes()
    log_b = (tmp_path / "b" / "train_log.csv").read_bytes()
    # The config echo embeds out.dir, so compare from the header on.
    assert log_a.split(b"\n", 1)[1] == log_b.split(b"\n", 1)[1]
    ckpt_a = (tmp_path / "a" / "checkpoint.fslc").read_bytes()
    ckpt_b = (tmp_path / "b" / "checkpoint.fslc").read_bytes()
    # Bytes 8..16 hold the config hash, which covers out.dir; the weights
    # and counters around it must match exactly.
    assert ckpt_a[:8] == ckpt_b[:8]
    assert ckpt_a[16:] == ckpt_b[16:]


def test_resume_requires_matching_config(tmp_path):
    out = tmp_path / "run"
    config_path = tmp_path / "config.json"
    write_config(config_path, out)
    assert run_cli("synth", "--config", str(config_path)).returncode == 0
    write_config(config_path, out, out / "synthetic_manifest.json", out / "synthetic_split.json")
    assert run_cli("train", "--config", str(config_path)).returncode == 0

    result = run_cli("train", "--config", str(config_path), "--resume",
                     str(out / "checkpoint.fslc"), "--set", "train.learning_rate=0.5")
    assert result.returncode == 2
    assert "different config" in result.stderr
