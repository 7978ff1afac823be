import json
import subprocess
import sys

import pytest

from losslab.cli import main

RUN = {
    "dataset": {"kind": "two-moons", "n": 200, "noise": 0.1, "seed": 0},
    "network": "moons-mlp",
    "schedule": {"kind": "constant", "lr": 0.05},
    "batch_size": 20,
    "epochs": 2,
}


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "losslab.cli", *args], capture_output=True, text=True)


@pytest.fixture
def two_runs(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(RUN))
    for seed in (1, 2):
        assert main(["train", "--config", str(cfg), "--seed", str(seed), "--out-dir", str(tmp_path / f"r{seed}")]) == 0
    return tmp_path


def test_train_segment_connect_plane_cca(two_runs, capsys):
    a, b = two_runs / "r1" / "epoch-2.llab", two_runs / "r2" / "epoch-2.llab"
    out = two_runs / "analysis"
    assert main(["segment", str(a), str(b), "--out-dir", str(out)]) == 0
    assert (out / "segment.csv").read_text().startswith("lambda,train_loss,train_acc,val_loss,val_acc")
    assert main(["connect", str(a), str(b), "--iterations", "20", "--out-dir", str(out), "--name", "c"]) == 0
    assert (out / "c_curve.csv").read_text().startswith("t,train_loss,train_acc,val_loss,val_acc")
    bend = out / "c_bend.llab"
    assert main(["plane", str(a), str(b), str(bend), "--resolution", "4", "--iterates", str(two_runs / "r1" / "epoch-0.llab"), "--out-dir", str(out)]) == 0
    assert (out / "plane_train_loss.pgm").exists() and (out / "plane_val_loss_iterates.csv").exists()
    assert main(["cca", str(a), str(a), "--out-dir", str(out)]) == 0
    printed = capsys.readouterr().out
    diag = json.loads(printed[printed.rindex('{\n  "diagonal"') :])["diagonal"]
    assert all(abs(d - 1) < 1e-6 for d in diag)


def test_lr_dump_csv(tmp_path):
    out = tmp_path / "lr.csv"
    assert main(["lr-dump", "--schedule", "sgdr", "--epochs", "31", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "epoch,iteration,lr"
    assert rows[1] == "0,0,0.05" and rows[11].startswith("10,0,1e-06")


def test_errors_are_json():
    res = run_cli("segment", "/nonexistent/a.llab", "/nonexistent/b.llab")
    assert res.returncode != 0
    err = json.loads(res.stderr.strip().splitlines()[-1])
    assert err["error"] == "FileNotFoundError"
    res = run_cli("frobnicate")
    assert res.returncode == 2 and json.loads(res.stderr)["error"] == "UsageError"


def test_train_requires_config():
    res = run_cli("train")
    assert res.returncode == 1 and "config" in json.loads(res.stderr)["message"]
