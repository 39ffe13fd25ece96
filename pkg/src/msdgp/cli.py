"""Command line interface.

Exit codes: 0 success, 2 usage / config / data errors, 3 numeric divergence.
Verbosity follows the ``DGP_LOG`` environment variable (error, info, debug).
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from dataclasses import replace

from . import checkpoint
from .config import RunConfig
from .data import prepare, read_corpus, write_corpus
from .errors import DivergenceDetected, MsdgpError
from .eval import evaluate, export_latents, read_report, render_table, write_report
from .experiments import PROTOCOLS, run_protocol
from .pipeline import train_system
from .trainer import write_trace

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3
CHECKPOINT_NAME = "checkpoint.json"


class UsageError(Exception):
    pass


def _configure_logging() -> None:
    level = os.environ.get("DGP_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> RunConfig:
    run = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        run = replace(run, seed=args.seed)
    return run


def _load_corpus(run: RunConfig, data_dir):
    path = data_dir or run.data.get("path")
    if path:
        if not os.path.isfile(os.path.join(path, "meta.json")):
            raise UsageError(f"no corpus at {path}")
        return read_corpus(path)
    return prepare(run.generator_spec(), run.seed)


def _checkpoint_path(path: str) -> str:
    if os.path.isdir(path):
        path = os.path.join(path, CHECKPOINT_NAME)
    if not os.path.isfile(path):
        raise UsageError(f"no checkpoint at {path}")
    return path


def _file_digest(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    run = _load_config(args)
    corpus = prepare(run.generator_spec(), run.seed)
    write_corpus(corpus, args.out, config=run.resolved().to_dict())
    print(f"wrote corpus with {corpus.n_frames} frames to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = _load_config(args)
    corpus = _load_corpus(run, args.data)
    os.makedirs(args.out, exist_ok=True)

    def progress(row):
        print(f"epoch {row.epoch}: objective {row.objective:.6g}", flush=True)

    system, traces = train_system(run, corpus, progress if args.verbose else None)
    path = os.path.join(args.out, CHECKPOINT_NAME)
    checkpoint.save(system, path)
    for part, trace in traces.items():
        write_trace(trace, os.path.join(args.out, f"trace_{part}.csv"))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    path = _checkpoint_path(args.model)
    system = checkpoint.load(path)
    if not os.path.isfile(os.path.join(args.data, "meta.json")):
        raise UsageError(f"no corpus at {args.data}")
    corpus = read_corpus(args.data)
    run = RunConfig.from_dict(system.run_config) if system.run_config else RunConfig()
    report = evaluate(
        system, corpus, args.split, model_id=f"{system.kind}:{_file_digest(path)}",
        metrics=run.eval.metrics, n_samples=run.eval.n_samples, seed=run.seed,
    )
    write_report(report, args.report)
    agg = report["aggregate"]
    print(" ".join(f"{k}={agg[k]:.4g}" for k in ("mcd_db", "f0_rmse_cent", "dur_rmse_ms", "rmse") if k in agg))
    return EXIT_OK


def cmd_ablate_layers(args) -> int:
    run = _load_config(args)
    corpus = _load_corpus(run, args.data)
    result = run_protocol("layer_ablation", run, args.out, corpus=corpus, progress=print)
    print(f"wrote {len(result['reports'])} reports to {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    reports = [read_report(p) for p in args.reports]
    text = render_table(reports)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


def cmd_protocol(args) -> int:
    run = _load_config(args)
    result = run_protocol(args.name, run, args.out, replicates=args.replicates, progress=print)
    print(result["tables"], end="")
    return EXIT_OK


def cmd_export_latents(args) -> int:
    system = checkpoint.load(_checkpoint_path(args.model))
    groups = read_corpus(args.data).groups if args.data else None
    export_latents(system.acoustic, args.out_csv, args.out_svg, groups)
    print(f"wrote {args.out_csv} and {args.out_svg}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msdgp", description="Multi-speaker deep GP regression")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="generate, split and normalize a synthetic corpus")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train acoustic and duration models")
    s.add_argument("--config")
    s.add_argument("--data", help="corpus directory (default: generate from the config)")
    s.add_argument("--out", required=True, help="output directory for checkpoint and traces")
    s.add_argument("--seed", type=int)
    s.add_argument("--verbose", action="store_true", help="print per-epoch objectives")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=["train", "test", "unused"])
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate-layers", help="feed speaker information to each hidden layer in turn")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_ablate_layers)

    s = sub.add_parser("compare", help="render reports as a Markdown table")
    s.add_argument("--reports", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("protocol", help="run a scripted experimental protocol")
    s.add_argument("name", choices=PROTOCOLS)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--replicates", type=int, default=4, help="seed replicates for latent_recovery")
    s.set_defaults(func=cmd_protocol)

    s = sub.add_parser("export-latents", help="write learned speaker latents as CSV and SVG")
    s.add_argument("--model", required=True)
    s.add_argument("--data", help="corpus directory providing group labels")
    s.add_argument("--out-csv", required=True)
    s.add_argument("--out-svg", required=True)
    s.set_defaults(func=cmd_export_latents)
    return p


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except DivergenceDetected as exc:
        print(f"error: DivergenceDetected: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (MsdgpError, UsageError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
