"""Acceptance criteria.  Each test prints one ``PASS``/``FAIL`` line with the
measured values, then asserts.  Run with ``pytest -s tests/test_acceptance.py``
(or ``-v``; the lines are written past pytest's capture either way).

Criterion 8 trains 36 models and takes roughly 10 to 20 minutes on one core.
"""
import csv
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from cdeflow import verify

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail, seconds, limit, extra=""):
        in_time = seconds < limit
        status = "PASS" if ok and in_time else "FAIL"
        with capsys.disabled():
            if extra:
                print("\n" + extra, end="")
            print(f"\n{status} criterion {number}: {title} | {detail} | {seconds:.1f}s (limit {limit:g}s)",
                  flush=True)
        assert ok, detail
        assert in_time, f"took {seconds:.1f}s, limit {limit}s"
    return emit


def test_criterion_1_spline(report):
    t = time.perf_counter()
    rng = np.random.default_rng(101)
    m = verify.spline_checks(rng)
    tri = verify.tridiagonal_dense_error(rng, 100)
    limits = {"interp": 1e-12, "c1": 1e-5, "c2": 1e-5, "natural": 1e-10}
    ok = all(m[k] <= v for k, v in limits.items()) and tri <= 1e-9
    detail = ", ".join(f"{k}={m[k]:.2e}" for k in limits) + f", tridiagonal={tri:.2e}"
    report(1, "spline correctness", ok, detail, time.perf_counter() - t, 10)


def test_criterion_2_gradients(report):
    t = time.perf_counter()
    g = verify.ncde_gradient_errors(0)
    ok = g["adjoint_vs_fd"] <= 1e-4 and g["direct_vs_fd"] <= 1e-4 and g["adjoint_vs_direct_quarter_step"] <= 1e-5
    detail = ", ".join(f"{k}={v:.2e}" for k, v in g.items())
    report(2, "Neural CDE gradients", ok, detail, time.perf_counter() - t, 60)


def test_criterion_3_memory(report):
    t = time.perf_counter()
    rows = verify.memory_report((10, 100, 1000))
    spread, linear = verify.memory_metrics(rows)
    ok = spread == 0 and linear <= 0.10
    detail = (f"adjoint={[r['adjoint_retained'] for r in rows]}, direct={[r['direct_retained'] for r in rows]}, "
              f"linear deviation={linear:.3f}")
    report(3, "memory contract", ok, detail, time.perf_counter() - t, 60)


def test_criterion_4_signature(report):
    t = time.perf_counter()
    err = verify.signature_backend_error(np.random.default_rng(303), n_paths=20, N=3)
    oracle_fact, cde_fact = verify.factorial_error()
    ok = err <= 1e-5 and oracle_fact <= 1e-4 and cde_fact <= 1e-4
    detail = f"cde vs oracle={err:.2e}, 1/k! oracle={oracle_fact:.2e}, 1/k! cde={cde_fact:.2e}"
    report(4, "signature cross-validation", ok, detail, time.perf_counter() - t, 300)


def test_criterion_5_embedding(report):
    t = time.perf_counter()
    pi, sigma = verify.embedding_errors(0, n_triples=20)
    ok = pi <= 1e-6 and sigma <= 1e-8
    report(5, "ODE embedded in CDE", ok, f"pi={pi:.2e}, sigma={sigma:.2e}", time.perf_counter() - t, 120)


def test_criterion_6_reparameterization(report):
    t = time.perf_counter()
    err = verify.reparameterization_error(0)
    report(6, "reparameterization invariance", err <= 1e-4, f"relative={err:.2e}", time.perf_counter() - t, 60)


def test_criterion_7_rk4_order(report):
    t = time.perf_counter()
    slope, errs = verify.rk4_slope((0.1, 0.05, 0.025, 0.0125))
    detail = f"slope={slope:.3f}, errors={[f'{e:.1e}' for e in errs]}"
    report(7, "RK4 order", abs(slope - 4) <= 0.3, detail, time.perf_counter() - t, 10)


def _cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "cdeflow", *map(str, args)], capture_output=True, text=True,
                          cwd=cwd, env={**os.environ, "PYTHONHASHSEED": "0"})


def test_criterion_8_drop_sweep(report, tmp_path):
    t = time.perf_counter()
    out = tmp_path / "sweep"
    proc = _cli("drop-sweep", "--config", ROOT / "configs" / "toy_sweep.json", "--out", out,
                "--fractions", "0.3,0.5,0.7", "--repeats", "3")
    seconds = time.perf_counter() - t
    assert proc.returncode == 0, proc.stderr
    rows = list(csv.DictReader((out / "summary.csv").open()))
    ncde = {float(r["fraction"]): float(r["mean"]) for r in rows if r["model"] == "ncde"}
    spread = max(ncde.values()) - min(ncde.values())
    ok = len(ncde) == 3 and min(ncde.values()) >= 0.90 and spread <= 0.05
    runs = list(csv.DictReader((out / "runs.csv").open()))
    detail = (f"ncde means={{{', '.join(f'{f:g}: {m:.3f}' for f, m in sorted(ncde.items()))}}}, "
              f"spread={spread:.3f}, runs={len(runs)}")
    report(8, "drop sweep", ok, detail, seconds, 1800, (out / "table.txt").read_text())


def test_criterion_9_determinism(report, tmp_path):
    t = time.perf_counter()
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"hidden": 4, "field_width": 8, "field_depth": 1, "lr": 0.01,
                               "readout_lr_multiplier": 10, "batch_size": 16, "max_epochs": 2}))
    assert _cli("generate-data", "--out", tmp_path / "data", "--samples", "60", "--length", "12").returncode == 0
    mismatches = []
    for model in ("ncde", "gruode", "grudt", "odernn"):
        logs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{model}_{rep}"
            proc = _cli("train", "--config", cfg, "--data", tmp_path / "data", "--out", out, "--model", model)
            assert proc.returncode == 0, proc.stderr
            logs.append((out / "metrics.jsonl").read_bytes())
        if logs[0] != logs[1]:
            mismatches.append(f"train {model}")
    sweeps = []
    for rep in ("a", "b"):
        out = tmp_path / f"sweep_{rep}"
        proc = _cli("drop-sweep", "--config", cfg, "--data", tmp_path / "data", "--out", out,
                    "--fractions", "0.5", "--repeats", "2", "--models", "ncde,grudt")
        assert proc.returncode == 0, proc.stderr
        sweeps.append({p.name: p.read_bytes() for p in sorted((out / "logs").glob("*.metrics.jsonl"))}
                      | {"runs.csv": (out / "runs.csv").read_bytes()})
    if sweeps[0] != sweeps[1]:
        mismatches.append("drop-sweep")
    bench = [_cli("bench-memory", "--steps", "10,100").stdout for _ in range(2)]
    if bench[0] != bench[1]:
        mismatches.append("bench-memory")
    detail = f"compared train x4 models, drop-sweep, bench-memory; mismatches={mismatches or 'none'}"
    report(9, "determinism", not mismatches, detail, time.perf_counter() - t, 600)
