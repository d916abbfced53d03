"""Command-line entry point: ``chf <subcommand>``.

Exit codes: 0 success, 1 usage error, 2 data/file error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .dataset import COLUMNS, CONDITION_COLUMNS, DataError, load_chf_csv, synthetic_chf, write_chf_csv
from .hull import HullSolveError
from .nn import NumericalError, Rng

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_args(p, need_config: bool = False):
    if need_config:
        p.add_argument("--config", required=True, help="JSON run configuration")
    else:
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--run-dir", help="existing run directory (config read from its manifest)")
    p.add_argument("--output", help="override output_dir")
    p.add_argument("--seed", type=int, help="override the global seed (and every nested seed)")
    p.add_argument("--workers", type=int, help="parallel workers for ensemble training and hull LPs")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="chf", description="CHF surrogate modelling: CVAE + DNN with UQ and hull analysis")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate a CHF CSV, or write a synthetic one")
    p.add_argument("--data", help="CSV to validate")
    p.add_argument("--synthetic", type=int, metavar="N", help="write N synthetic records instead")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", help="output CSV (synthetic) or JSON summary (validation)")

    _add_run_args(sub.add_parser("train", help="train CVAE and DNN ensemble"), need_config=True)
    _add_run_args(sub.add_parser("evaluate", help="compute error tables, UQ stats, correlations"))
    _add_run_args(sub.add_parser("hull-split", help="classify test rows against the training hull"))
    _add_run_args(sub.add_parser("plot", help="write SVG figures from metric files"))
    _add_run_args(sub.add_parser("report", help="print the metric tables beside reference values"))

    p = sub.add_parser("generate", help="sample CHF from a trained CVAE at given conditions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--conditions", required=True, help="CSV with the 7 condition columns")
    p.add_argument("-n", "--n-samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return ap


def _config(args):
    from .pipeline import config_from_dict, load_config

    if getattr(args, "config", None):
        return load_config(args.config, args.seed, args.output, args.workers)
    if getattr(args, "run_dir", None):
        manifest = Path(args.run_dir) / "manifest.json"
        if not manifest.exists():
            raise FileNotFoundError(manifest)
        doc = json.loads(manifest.read_text())["config"]
        doc["output_dir"] = args.run_dir
        if args.workers is not None:
            doc["workers"] = args.workers
        return config_from_dict(doc, args.seed, args.output)
    raise UsageError("pass --config or --run-dir")


def _summary(data) -> dict:
    v = data.values
    return {"n": len(data), "source": data.source_tag,
            "columns": {c: {"min": float(v[:, j].min()), "max": float(v[:, j].max()),
                            "mean": float(v[:, j].mean())} for j, c in enumerate(COLUMNS)}}


def cmd_ingest(args) -> int:
    if (args.data is None) == (args.synthetic is None):
        raise UsageError("ingest needs exactly one of --data or --synthetic")
    if args.synthetic is not None:
        if not args.out:
            raise UsageError("--synthetic requires --out")
        data = synthetic_chf(args.synthetic, args.seed, args.noise)
        write_chf_csv(data, args.out)
        print(f"wrote {len(data)} synthetic records to {args.out}")
        return EXIT_OK
    summary = json.dumps(_summary(load_chf_csv(args.data)), indent=2)
    if args.out:
        Path(args.out).write_text(summary + "\n")
    print(summary)
    return EXIT_OK


def _read_conditions(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(rows)
    missing = [c for c in CONDITION_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
    out = []
    for i, row in enumerate(reader, start=1):
        try:
            out.append([float(row[c]) for c in CONDITION_COLUMNS])
        except ValueError:
            raise DataError(f"{path}: row {i} has a non-numeric condition") from None
    if not out:
        raise DataError(f"{path}: no condition rows")
    c = np.array(out)
    if not np.all(np.isfinite(c)):
        raise DataError(f"{path}: non-finite condition value")
    return c


def cmd_generate(args) -> int:
    from .cvae import generate, load_cvae
    from .metrics import relative_std, sample_stats

    model, _ = load_cvae(args.checkpoint)
    cond = _read_conditions(args.conditions)
    samples = generate(model, cond, args.n_samples, Rng(args.seed))
    stats = sample_stats(samples, axis=1)
    rs = relative_std(stats)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "mu_samples", "sigma_samples", "rel_std_pct"]
                   + [f"sample_{k}" for k in range(args.n_samples)])
        for i in range(len(cond)):
            w.writerow([i, repr(float(stats.mu_samples[i])), repr(float(stats.sigma_samples[i])),
                        repr(float(rs[i]))] + [repr(float(s)) for s in samples[i]])
    print(f"wrote {args.n_samples} samples for {len(cond)} condition rows to {args.out}")
    return EXIT_OK


def cmd_report(cfg) -> int:
    from .pipeline import render_tables

    path = cfg.out / "metrics" / "metrics.json"
    if not path.exists():
        raise FileNotFoundError(f"{path}; run 'evaluate' first")
    print(render_tables(json.loads(path.read_text())), end="")
    return EXIT_OK


def dispatch(args) -> int:
    from . import pipeline

    if args.command == "ingest":
        return cmd_ingest(args)
    if args.command == "generate":
        return cmd_generate(args)
    cfg = _config(args)
    if args.command == "train":
        print(f"manifest: {pipeline.run_train(cfg)}")
    elif args.command == "evaluate":
        path = pipeline.run_evaluate(cfg)
        print((path.parent / "tables.txt").read_text(), end="")
    elif args.command == "hull-split":
        print(f"hull split: {pipeline.run_hull_split(cfg)}")
    elif args.command == "plot":
        for p in pipeline.run_plot(cfg):
            print(p)
    elif args.command == "report":
        return cmd_report(cfg)
    return EXIT_OK


def exit_code_for(exc: BaseException) -> int:
    from .pipeline import StageError

    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, UsageError):
        return EXIT_USAGE
    if isinstance(cause, (NumericalError, HullSolveError, FloatingPointError, ZeroDivisionError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except Exception as e:  # noqa: BLE001 - mapped to an exit status
        code = exit_code_for(e)
        stage = getattr(e, "stage", args.command)
        print(f"chf {args.command}: error in stage {stage}: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
