"""``cdeflow`` command line.

Exit codes: 0 ok, 1 usage or input error, 2 numerical blow-up, 3 failed
verification or benchmark assertion.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import verify
from .errors import CdeflowError, NumericalBlowup, NumericalFailure
from .timeseries import (
    TimeSeriesSet, drop_observations, gen_toy_curves, load_csv, save_set,
)
from .train import TrainConfig, TrainedModel, evaluate, train, write_jsonl

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3
SPLIT = (0.8, 0.1, 0.1)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


def load_config(path, seed=None, model=None) -> TrainConfig:
    if path is None:
        raise UsageError("--config is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{p}: invalid JSON ({e})") from None
    if seed is not None:
        d["seed"] = seed
    if model is not None:
        d["model"] = model
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise UsageError(f"{p}: {e}") from None


def split_set(ts: TimeSeriesSet, seed=0, fractions=SPLIT):
    """Seeded permutation split into train / validation / test."""
    n = len(ts)
    order = np.random.default_rng([seed, 7]).permutation(n)
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return ts.subset(sorted(order[:a])), ts.subset(sorted(order[a:b])), ts.subset(sorted(order[b:]))


def load_splits(data, split_seed=0):
    """``data`` holds either ``train/``, ``val/`` and ``test/`` subdirectories
    (each with a manifest) or one manifest that is split here."""
    root = Path(data)
    if not root.is_dir():
        raise UsageError(f"data directory not found: {root}")
    if all((root / k / "manifest.csv").is_file() for k in ("train", "val", "test")):
        parts = [load_csv(root / k) for k in ("train", "val", "test")]
        k = max(p.class_count for p in parts)
        return tuple(TimeSeriesSet(p.samples, p.channel_count, k, p.names) for p in parts)
    if not (root / "manifest.csv").is_file():
        raise UsageError(f"{root} has no manifest.csv")
    return split_set(load_csv(root), split_seed)


# --- commands ----------------------------------------------------------------

def cmd_generate_data(args):
    ts = gen_toy_curves(args.samples, args.classes, args.length, args.seed)
    save_set(ts, args.out)
    print(json.dumps({"out": str(args.out), "samples": len(ts), "classes": args.classes,
                      "channels": ts.channel_count, "length": args.length}))
    return EXIT_OK


def cmd_train(args):
    config = load_config(args.config, args.seed, args.model)
    tr, va, te = load_splits(args.data, args.split_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trained, log, timings = train(config, tr, va)
    write_jsonl(log, out / "metrics.jsonl")
    write_jsonl(timings, out / "timings.jsonl")
    test_acc = evaluate(trained, te) if len(te) else None
    summary = {"model": config.model, "seed": config.seed, "epochs": len(log),
               "best_val_acc": max((e["val_acc"] for e in log), default=None), "test_acc": test_acc,
               "train_size": len(tr), "val_size": len(va), "test_size": len(te)}
    trained.save(out / "checkpoint.json", {"summary": summary})
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    trained = TrainedModel.load(ckpt)
    root = Path(args.data)
    if args.split == "all":
        ts = load_csv(root)
    else:
        ts = load_splits(root, args.split_seed)[("train", "val", "test").index(args.split)]
    acc = evaluate(trained, ts)
    print(json.dumps({"accuracy": acc, "samples": len(ts), "split": args.split}, sort_keys=True))
    return EXIT_OK


def cmd_verify(args):
    try:
        report = verify.run(args.suite, args.tolerance_scale)
    except ValueError as e:
        raise UsageError(str(e)) from None
    _dump(report, args.report)
    for ch in report["checks"]:
        if not ch["passed"]:
            print(f"FAIL {ch['name']}: measured {ch['measured']:.3e} > tolerance {ch['tolerance']:.3e}",
                  file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def cmd_bench_memory(args):
    rows = verify.memory_report(tuple(args.steps), with_tracemalloc=args.tracemalloc)
    spread, linear = verify.memory_metrics(rows)
    report = {
        "steps": args.steps,
        "rows": rows,
        "adjoint_constant": spread == 0,
        "direct_linear_max_deviation": linear,
        "direct_linear": linear <= 0.10,
    }
    report["passed"] = report["adjoint_constant"] and report["direct_linear"]
    _dump(report, args.report)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def _sweep_job(job):
    """One (model, fraction, repeat) training run.  Top-level so worker
    processes can pickle it."""
    config, fraction, repeat, seed, data, logs = job
    tr, va, te = (drop_sweep_data(part, fraction, seed, i) for i, part in enumerate(data))
    cfg = TrainConfig.from_dict({**config, "seed": seed})
    trained, log, timings = train(cfg, tr, va)
    if logs:
        stem = f"{cfg.model}_f{fraction:g}_r{repeat}"
        write_jsonl(log, Path(logs) / f"{stem}.metrics.jsonl")
        write_jsonl(timings, Path(logs) / f"{stem}.timings.jsonl")
    return {"model": cfg.model, "fraction": fraction, "repeat": repeat, "seed": seed,
            "epochs": len(log), "val_acc": max((e["val_acc"] for e in log), default=float("nan")),
            "test_acc": evaluate(trained, te)}


def drop_sweep_data(ts: TimeSeriesSet, fraction, seed, part):
    """Drop ``fraction`` of every sample's points; seeded per repeat and split."""
    rng = np.random.default_rng([seed, part, int(round(fraction * 1000))])
    return ts.map(lambda s: drop_observations(s, fraction, rng))


def workers_from_env(n_jobs):
    cap = os.environ.get("CDEFLOW_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = min(limit, max(1, int(cap)))
        except ValueError:
            raise UsageError(f"CDEFLOW_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(limit, n_jobs))


def summarize(rows, models, fractions):
    out = []
    for m in models:
        for f in fractions:
            accs = np.array([r["test_acc"] for r in rows if r["model"] == m and r["fraction"] == f])
            std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
            out.append({"model": m, "fraction": f, "mean": float(np.mean(accs)), "std": std, "n": len(accs)})
    return out


def format_table(summary, models, fractions):
    head = ["model"] + [f"{f:.0%} dropped" for f in fractions]
    body = []
    for m in models:
        cells = {r["fraction"]: r for r in summary if r["model"] == m}
        body.append([m] + [f"{100 * cells[f]['mean']:.1f} ± {100 * cells[f]['std']:.1f}" for f in fractions])
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in [head] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_drop_sweep(args):
    base = load_config(args.config)
    for f in args.fractions:
        if not 0.0 <= f < 1.0:
            raise UsageError(f"fractions must lie in [0, 1), got {f}")
    if args.repeats < 1:
        raise UsageError("--repeats must be positive")
    models = args.models
    unknown = sorted(set(models) - {"ncde", "gruode", "grudt", "odernn", "directode"})
    if unknown:
        raise UsageError(f"unknown model kinds {unknown}")
    if args.data:
        data = load_splits(args.data, args.split_seed)
    else:
        full = gen_toy_curves(args.samples, args.classes, args.length, args.seed)
        data = split_set(full, args.split_seed)
    out = Path(args.out)
    logs = out / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    jobs = []
    for m in models:
        cfg = {**base.to_dict(), "model": m}
        for f in args.fractions:
            for r in range(args.repeats):
                seed = args.seed if args.fixed_seed else args.seed + r
                jobs.append((cfg, f, r, seed, data, str(logs)))
    n_workers = workers_from_env(len(jobs))
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    with (out / "runs.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["model", "fraction", "repeat", "seed", "epochs", "val_acc", "test_acc"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    summary = summarize(rows, models, args.fractions)
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["model", "fraction", "mean", "std", "n"], lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    table = format_table(summary, models, args.fractions)
    (out / "table.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="cdeflow", description="Train and verify Neural CDE classifiers on unevenly sampled series.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-data", help="write the synthetic toy dataset as CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--samples", type=int, default=1000)
    g.add_argument("--classes", type=int, default=2)
    g.add_argument("--length", type=int, default=30)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_generate_data)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--model", choices=["ncde", "gruode", "grudt", "odernn", "directode"])
    t.add_argument("--split-seed", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    e.add_argument("--split-seed", type=int, default=0)
    e.set_defaults(fn=cmd_eval)

    v = sub.add_parser("verify", help="run numerical property suites")
    v.add_argument("--suite", default="all", choices=list(verify.SUITES) + ["all"])
    v.add_argument("--tolerance-scale", type=float, default=1.0)
    v.add_argument("--report")
    v.set_defaults(fn=cmd_verify)

    b = sub.add_parser("bench-memory", help="retained-state counts of the backward modes")
    b.add_argument("--steps", type=_ints, default=[10, 100, 1000])
    b.add_argument("--tracemalloc", action="store_true", help="also record peak traced allocations")
    b.add_argument("--report")
    b.set_defaults(fn=cmd_bench_memory)

    d = sub.add_parser("drop-sweep", help="accuracy vs fraction of dropped observations")
    d.add_argument("--config")
    d.add_argument("--data")
    d.add_argument("--out", required=True)
    d.add_argument("--fractions", type=_floats, default=[0.3, 0.5, 0.7])
    d.add_argument("--repeats", type=int, default=3)
    d.add_argument("--models", type=lambda s: [m for m in s.split(",") if m],
                   default=["ncde", "gruode", "grudt", "odernn"])
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--fixed-seed", action="store_true", help="use --seed for every repeat")
    d.add_argument("--samples", type=int, default=1000)
    d.add_argument("--classes", type=int, default=2)
    d.add_argument("--length", type=int, default=30)
    d.add_argument("--split-seed", type=int, default=0)
    d.set_defaults(fn=cmd_drop_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"cdeflow {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalBlowup as e:
        print(f"cdeflow {args.command}: numerical blow-up at t={e.time} (samples {list(e.rows)})",
              file=sys.stderr)
        return EXIT_NUMERICAL
    except NumericalFailure as e:
        print(f"cdeflow {args.command}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CdeflowError, ValueError, OSError) as e:
        print(f"cdeflow {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
