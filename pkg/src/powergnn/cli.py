"""``powergnn`` command line: generate, train, check, sweep.

Exit codes: 0 success, 1 usage or configuration/IO error, 2 numerical
failure, 3 property-check failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checks
from .config import ConfigError, RunConfig, load_config, network_diff
from .dataset import Dataset
from .models import ModelKind, build_model, load_checkpoint, param_count, save_checkpoint
from .oracle import generate_dataset
from .seeding import derive_seed
from .training import (EvalReport, evaluate_cell, hardware_note, minimal_sizes, performance_ratio,
                       runtime_bench, train)

log = logging.getLogger("powergnn")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_PROPERTY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    return vals


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _load_data(path) -> Dataset:
    try:
        return Dataset.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None


def _same_network(cfg: RunConfig, data: Dataset, what: str):
    if data.cfg != cfg.network:
        diff = "; ".join(network_diff(data.cfg, cfg.network))
        raise UsageError(f"{what} network does not match the config ({diff})")


def _split(data: Dataset, n_train: int, n_test: int, test_path: Optional[str]):
    """Training prefix and test set (a separate file, or the samples after the prefix)."""
    if test_path:
        test = _load_data(test_path)
        if test.cfg != data.cfg:
            raise UsageError("test set network differs from the training data")
        if n_train > len(data):
            raise UsageError(f"--train-size {n_train} exceeds the {len(data)} samples in the data file")
        return data.subset(slice(0, n_train)), test
    if len(data) < n_train + 1:
        raise UsageError(f"data file has {len(data)} samples, need more than the {n_train} training samples")
    end = min(len(data), n_train + n_test)
    return data.subset(slice(0, n_train)), data.subset(slice(n_train, end))


# -- commands ------------------------------------------------------------------

def cmd_generate(args, cfg: RunConfig) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out) if args.out else cfg.io.datasets / f"dataset_{seed}_{args.samples}.bin"
    ds = generate_dataset(cfg.network, args.samples, seed, cfg.oracle)
    try:
        ds.save(out)
        if args.json:
            ds.to_json(args.json)
    except OSError as exc:
        raise UsageError(str(exc)) from None
    it = ds.iterations
    if args.verbose:
        for i, (n, r) in enumerate(zip(it, ds.rates)):
            print(f"sample {i}: {int(n)} WMMSE iterations, sum rate {r:.6f}")
    print(f"wrote {len(ds)} samples to {out}")
    print(f"WMMSE iterations per sample: min {it.min()} / mean {it.mean():.1f} / median "
          f"{np.median(it):.0f} / max {it.max()}; mean sum rate {ds.rates.mean():.4f}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    kind = ModelKind.parse(args.model or cfg.model.kind)
    overrides = {k: v for k, v in (("epochs", args.epochs), ("seed", args.seed),
                                   ("train_size", args.train_size)) if v is not None}
    tc = cfg.train_config(kind, **overrides)
    data = _load_data(args.data)
    _same_network(cfg, data, "dataset")
    train_set, test_set = _split(data, tc.train_size, tc.test_size, args.test)
    hl, hd = cfg.model.dims_for(kind)
    model = build_model(kind, cfg.network, hl, hd, derive_seed(tc.seed, "model", kind.value))
    model, hist = train(model, train_set, tc)
    ratio = performance_ratio(model, test_set)
    rep = EvalReport(
        mse_history=list(hist), perf_ratio=ratio, param_count=param_count(model),
        inference_time_1000=runtime_bench(model, test_set) if args.bench else None,
        metadata={"kind": kind.value, "config": cfg.source, "data": str(args.data), "test": args.test,
                  "network": cfg.network.to_dict(), "train": tc.to_dict(), "hidden_layers": hl,
                  "hidden_dim": hd, "model_seed": model.seed, "train_samples": len(train_set),
                  "test_samples": len(test_set), "hardware": hardware_note()},
    )
    out = Path(args.out) if args.out else cfg.io.checkpoints / f"{kind.value}_seed{tc.seed}.ckpt"
    report = Path(args.report) if args.report else cfg.io.reports / (out.stem + ".json")
    try:
        save_checkpoint(model, out, extra={"perf_ratio": ratio, "train": tc.to_dict()})
        rep.write_json(report)
        rep.write_history_csv(report.with_suffix(".csv"))
    except OSError as exc:
        raise UsageError(str(exc)) from None
    print(f"{kind.value}: performance ratio {ratio:.4f} on {len(test_set)} test samples, "
          f"final mse {hist[-1]:.5f}, {rep.param_count} parameters")
    print(f"checkpoint {out}, report {report}")
    return EXIT_OK


def cmd_check(args, cfg: RunConfig) -> int:
    if args.ckpt:
        try:
            model = load_checkpoint(args.ckpt)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot load checkpoint: {exc}") from None
    else:
        kind = ModelKind.parse(args.model or cfg.model.kind)
        hl, hd = cfg.model.dims_for(kind)
        model = build_model(kind, cfg.network, hl, hd, derive_seed(cfg.seed, "model", kind.value))
    results = checks.run_all(model, trials=args.trials, seed=cfg.seed if args.seed is None else args.seed,
                             grid_instances=args.grid_instances)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if r.failed]
    if args.report:
        doc = {"version": 1, "kind": model.kind.value, "checkpoint": args.ckpt,
               "results": [r.to_dict() for r in results], "failed": failed}
        try:
            Path(args.report).parent.mkdir(parents=True, exist_ok=True)
            Path(args.report).write_text(json.dumps(doc, indent=2, sort_keys=True))
        except OSError as exc:
            raise UsageError(str(exc)) from None
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_PROPERTY
    print("all checks passed")
    return EXIT_OK


def _sweep_job(job):
    kind, pool, test, tc, size, seed, dims = job
    return evaluate_cell(kind, pool, test, tc, size, seed, hidden_layers=dims[0], hidden_dim=dims[1])


def cmd_sweep(args, cfg: RunConfig) -> int:
    if not args.models:
        raise UsageError("--models must name at least one model")
    if not args.sizes:
        raise UsageError("--sizes must list at least one training-set size")
    if any(n < 1 for n in args.sizes):
        raise UsageError("training-set sizes must be positive")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    try:
        kinds = [ModelKind.parse(m) for m in args.models]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sizes = sorted(set(args.sizes))
    data = _load_data(args.data)
    _same_network(cfg, data, "dataset")
    if args.test:
        pool, test = data, _load_data(args.test)
        if test.cfg != data.cfg:
            raise UsageError("test set network differs from the training data")
    else:
        n_test = cfg.train_config().test_size
        if len(data) <= n_test:
            raise UsageError(f"data file has {len(data)} samples; {n_test} are reserved for testing")
        pool, test = data.subset(slice(0, len(data) - n_test)), data.subset(slice(len(data) - n_test, None))
    if sizes[-1] > len(pool):
        raise UsageError(f"largest size {sizes[-1]} exceeds the {len(pool)}-sample training pool")
    jobs = []
    for kind in kinds:
        overrides = {"epochs": args.epochs} if args.epochs is not None else {}
        tc = cfg.train_config(kind, **overrides)
        dims = cfg.model.dims_for(kind)
        jobs += [(kind.value, pool, test, tc, n, s, dims) for n in sizes for s in args.seeds]
    if args.jobs == 1:
        cells = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            cells = list(ex.map(_sweep_job, jobs))
    summary = minimal_sizes(cells, args.target)
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "size", "seed", "perf_ratio"])
            for c in cells:
                w.writerow([c.kind, c.size, c.seed, repr(c.perf_ratio)])
        summary_path = out.with_name(out.stem + "_summary.csv")
        with open(summary_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "target", "min_size"])
            for kind in kinds:
                n = summary.get(kind.value)
                w.writerow([kind.value, args.target, "" if n is None else n])
    except OSError as exc:
        raise UsageError(str(exc)) from None
    for kind in kinds:
        n = summary.get(kind.value)
        print(f"{kind.value}: minimal size reaching {args.target:g} = {'none in grid' if n is None else n}")
    print(f"wrote {len(cells)} rows to {out} and summary to {summary_path}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="powergnn", description="Power-control GNNs: data, training and property checks.")
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", default="hetnet", help="preset name or YAML file (default hetnet)")

    g = sub.add_parser("generate", help="simulate networks and label them with WMMSE")
    common(g)
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--seed", type=int, default=None, help="dataset seed (default: config seed)")
    g.add_argument("--out", default=None, help="dataset file")
    g.add_argument("--json", default=None, help="also write a JSON dump")
    g.add_argument("-v", "--verbose", action="store_true", help="print iterations of every sample")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model and write checkpoint and report")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--test", default=None, help="separate test-set file")
    t.add_argument("--model", default=None, choices=[k.value for k in ModelKind])
    t.add_argument("--out", default=None, help="checkpoint path")
    t.add_argument("--report", default=None, help="report JSON path (history CSV goes alongside)")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seed", type=int, default=None, help="training seed")
    t.add_argument("--train-size", type=int, default=None)
    t.add_argument("--bench", action="store_true", help="time 1000 inferences")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("check", help="run equivariance, gradient and WMMSE checks")
    common(c)
    c.add_argument("--ckpt", default=None, help="checkpoint to check (default: fresh model)")
    c.add_argument("--model", default=None, choices=[k.value for k in ModelKind])
    c.add_argument("--trials", type=int, default=100)
    c.add_argument("--grid-instances", type=int, default=5)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--report", default=None, help="write results as JSON")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("sweep", help="sample-complexity sweep over models and sizes")
    common(s)
    s.add_argument("--data", required=True, help="training pool (last test_size samples are the test set)")
    s.add_argument("--test", default=None, help="separate test-set file")
    s.add_argument("--models", type=_str_list, required=True)
    s.add_argument("--sizes", type=_int_list, required=True)
    s.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    s.add_argument("--target", type=float, default=0.9)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    s.add_argument("--out", required=True, help="CSV of (model, size, seed) rows")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
