import csv
import json
import subprocess
import sys

import pytest

from cdeflow import cli
from cdeflow.errors import NumericalBlowup

TINY = {"model": "ncde", "hidden": 4, "field_width": 8, "field_depth": 1, "lr": 0.01,
        "readout_lr_multiplier": 10, "batch_size": 16, "max_epochs": 2, "seed": 0}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.json").write_text(json.dumps(TINY))
    assert cli.main(["generate-data", "--out", str(root / "data"), "--samples", "40", "--length", "10"]) == 0
    return root


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_generate_data_writes_manifest(workspace):
    rows = list(csv.reader((workspace / "data" / "manifest.csv").open()))
    assert len(rows) == 40


def test_train_then_eval_roundtrip(workspace, capsys):
    out = workspace / "run1"
    code, stdout, _ = run(["train", "--config", workspace / "tiny.json", "--data", workspace / "data",
                           "--out", out], capsys)
    assert code == 0
    summary = json.loads(stdout)
    assert summary["epochs"] == 2
    for name in ("metrics.jsonl", "timings.jsonl", "checkpoint.json", "summary.json"):
        assert (out / name).is_file()
    log = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
    assert [e["epoch"] for e in log] == [0, 1]
    assert {"train_loss", "val_acc", "lr"} <= set(log[0])
    code, stdout, _ = run(["eval", "--checkpoint", out / "checkpoint.json", "--data", workspace / "data"], capsys)
    assert code == 0 and json.loads(stdout)["accuracy"] == summary["test_acc"]


def test_train_logs_are_byte_identical(workspace, capsys):
    args = ["train", "--config", workspace / "tiny.json", "--data", workspace / "data"]
    assert run(args + ["--out", workspace / "a"], capsys)[0] == 0
    assert run(args + ["--out", workspace / "b"], capsys)[0] == 0
    assert (workspace / "a" / "metrics.jsonl").read_bytes() == (workspace / "b" / "metrics.jsonl").read_bytes()
    assert (workspace / "a" / "checkpoint.json").read_bytes() == (workspace / "b" / "checkpoint.json").read_bytes()


def test_usage_errors(workspace, capsys):
    assert run(["train", "--config", workspace / "missing.json", "--data", workspace / "data",
                "--out", workspace / "x"], capsys)[0] == 1
    assert run(["eval", "--checkpoint", workspace / "nope.json", "--data", workspace / "data"], capsys)[0] == 1
    assert run(["drop-sweep", "--out", workspace / "s", "--fractions", "1.5"], capsys)[0] == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 1


def test_numerical_blowup_exit_code(workspace, capsys, monkeypatch):
    def boom(*a, **k):
        raise NumericalBlowup(0.5, (3,))
    monkeypatch.setattr(cli, "train", boom)
    code, _, err = run(["train", "--config", workspace / "tiny.json", "--data", workspace / "data",
                        "--out", workspace / "y"], capsys)
    assert code == 2 and "3" in err


def test_verify_exit_codes(tmp_path, capsys):
    code, _, _ = run(["verify", "--suite", "spline", "--report", tmp_path / "r.json"], capsys)
    assert code == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["passed"] and report["checks"]
    code, _, err = run(["verify", "--suite", "spline", "--tolerance-scale", "0"], capsys)
    assert code == 3 and "FAIL" in err


def test_bench_memory(tmp_path, capsys):
    code, _, _ = run(["bench-memory", "--steps", "10,100", "--report", tmp_path / "m.json"], capsys)
    report = json.loads((tmp_path / "m.json").read_text())
    assert code == 0 and report["adjoint_constant"] and report["direct_linear"]


def test_drop_sweep_zero_fraction_matches_train(workspace, capsys):
    sweep = workspace / "sweep"
    code, _, _ = run(["drop-sweep", "--config", workspace / "tiny.json", "--data", workspace / "data",
                      "--out", sweep, "--fractions", "0", "--repeats", "1", "--models", "ncde"], capsys)
    assert code == 0
    rows = list(csv.DictReader((sweep / "runs.csv").open()))
    assert len(rows) == 1
    code, stdout, _ = run(["train", "--config", workspace / "tiny.json", "--data", workspace / "data",
                           "--out", workspace / "ref", "--seed", "0"], capsys)
    assert float(rows[0]["test_acc"]) == json.loads(stdout)["test_acc"]
    assert (sweep / "logs" / "ncde_f0_r0.metrics.jsonl").read_bytes() == \
        (workspace / "ref" / "metrics.jsonl").read_bytes()


def test_drop_sweep_fixed_seed_has_zero_spread(workspace, capsys):
    sweep = workspace / "fixed"
    cfg = workspace / "one_epoch.json"
    cfg.write_text(json.dumps({**TINY, "max_epochs": 1}))
    code, _, _ = run(["drop-sweep", "--config", cfg, "--data", workspace / "data", "--out", sweep,
                      "--fractions", "0.3", "--repeats", "2", "--models", "grudt", "--fixed-seed"], capsys)
    assert code == 0
    summary = list(csv.DictReader((sweep / "summary.csv").open()))
    assert float(summary[0]["std"]) == 0.0 and summary[0]["n"] == "2"
    assert "30% dropped" in (sweep / "table.txt").read_text()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cdeflow", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "drop-sweep" in proc.stdout
