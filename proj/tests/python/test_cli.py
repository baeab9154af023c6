import csv
import json
import os
import subprocess

import pytest

CLI = os.environ.get("SCVM_CLI", "scvm")


def run(*args):
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, timeout=300)


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def trained(tmp_path, tiny_config):
    cfg = write_config(tmp_path / "tiny.json", tiny_config)
    out = tmp_path / "run"
    r = run("train", "--config", cfg, "--out", out)
    assert r.returncode == 0, r.stderr
    return out


def test_usage_errors_exit_1():
    assert run().returncode == 1
    assert run("eval", "--n", 3).returncode == 1
    assert run("eval", "--ckpt", "x.scvm", "--n", "many", "--seed", 0).returncode == 1
    assert run("train", "--out", "x", "--bogus").returncode == 1


def test_unknown_config_key_exits_1(tmp_path, tiny_config):
    tiny_config["train"]["learning_rate"] = 0.1
    r = run("train", "--config", write_config(tmp_path / "bad.json", tiny_config), "--out", tmp_path / "o")
    assert r.returncode == 1
    assert "train.learning_rate" in r.stderr


def test_missing_files_exit_3(tmp_path):
    assert run("eval", "--ckpt", tmp_path / "none.scvm", "--n", 3, "--seed", 0).returncode == 3
    assert run("train", "--config", tmp_path / "none.json", "--out", tmp_path / "o").returncode == 3


def test_truncated_checkpoint_exits_3(trained):
    ckpt = trained / "final.scvm"
    data = ckpt.read_bytes()
    ckpt.write_bytes(data[: len(data) // 2])
    assert run("eval", "--ckpt", ckpt, "--n", 3, "--seed", 0).returncode == 3


def test_divergence_exits_2_and_keeps_last_checkpoint(tmp_path, tiny_config):
    tiny_config["train"].update({"lr_max": 1e30, "warmup_steps": 0, "checkpoint_every": 1})
    out = tmp_path / "run"
    r = run("train", "--config", write_config(tmp_path / "c.json", tiny_config), "--out", out,
            "--no-pretrain-baseline")
    assert r.returncode == 2, r.stderr
    assert run("eval", "--ckpt", out / "last.scvm", "--n", 4, "--seed", 0).returncode == 0


def test_train_outputs(trained, tiny_config):
    for name in ["config.json", "metrics.jsonl", "pretrain.scvm", "last.scvm", "final.scvm"]:
        assert (trained / name).exists(), name
    assert (trained / "final.scvm").read_bytes()[:4] == b"SCVM"
    lines = [json.loads(l) for l in (trained / "metrics.jsonl").read_text().splitlines()]
    steps = tiny_config["train"]
    assert len(lines) == steps["pretrain_steps"] + steps["total_steps"]
    for rec in lines:
        assert abs(rec["loss_total"] - (rec["loss_task"] + rec["lambda"] * rec["loss_align"])) < 1e-6


def test_eval_and_ablations(trained):
    r = run("eval", "--ckpt", trained / "final.scvm", "--n", 40, "--seed", 5)
    assert r.returncode == 0, r.stderr
    report = json.loads(r.stdout)
    assert report["n"] == 40
    assert set(report["families"]) == {"color_all", "shape_all", "count_shape", "color_of_shape"}
    again = run("eval", "--ckpt", trained / "final.scvm", "--n", 40, "--seed", 5)
    assert json.loads(again.stdout) == report
    for flag in ["--disable-tag", "--disable-tmsu-text"]:
        assert run("eval", "--ckpt", trained / "final.scvm", "--n", 10, "--seed", 5, flag).returncode == 0


def test_inspect_writes_one_row_per_layer(trained, tmp_path):
    out = tmp_path / "gates.csv"
    assert run("inspect", "--ckpt", trained / "final.scvm", "--seed", 3, "--out", out).returncode == 0
    rows = list(csv.DictReader(out.open()))
    assert [int(r["layer"]) for r in rows] == [1, 2]
    assert list(rows[0]) == ["layer", "mean_f", "mean_i", "mean_alpha", "mem_l2", "delta_linf"]


def test_init_checkpoint_has_identity_gates(tmp_path, tiny_config):
    ckpt = tmp_path / "init.scvm"
    cfg = write_config(tmp_path / "c.json", tiny_config)
    assert run("init", "--config", cfg, "--out", ckpt).returncode == 0
    out = tmp_path / "g.csv"
    assert run("inspect", "--ckpt", ckpt, "--seed", 1, "--out", out).returncode == 0
    for row in csv.DictReader(out.open()):
        assert abs(float(row["mean_alpha"]) - 0.0998) < 1e-3
        assert float(row["delta_linf"]) == 0.0


def test_dump_data_is_deterministic(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert run("dump-data", "--seed", 9, "--n", 20, "--out", a).returncode == 0
    assert run("dump-data", "--seed", 9, "--n", 20, "--out", b).returncode == 0
    assert a.read_bytes() == b.read_bytes()


def test_gradcheck_reports_every_check():
    r = run("gradcheck")
    assert r.returncode == 0
    assert "all passed" in r.stdout
