"""Command-line entry point: ``tabsae <subcommand> [options]``.

Exit codes: 0 success, 2 configuration or schema error, 3 data error,
4 training failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import pipeline as P
from .config import MODEL_KINDS, load_config
from .models.base import load_checkpoint, save_checkpoint
from .models.pfn import (CapacityError, MetaTrainConfig, PFNConfig, PFNModel, TaskPrior,
                         meta_train, pfn_predict)
from .resampling import InsufficientClassError
from .tensor import NumericError
from .train import ConfigError, TrainingFailure

log = logging.getLogger("tabsae")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN = 0, 2, 3, 4


def exit_code(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, P.StageError) else exc
    if isinstance(cause, (ConfigError, D.SchemaError, CapacityError)):
        return EXIT_CONFIG
    if isinstance(cause, (TrainingFailure, NumericError)):
        return EXIT_TRAIN
    if isinstance(cause, (D.DataError, D.InsufficientDataError, D.ContractError,
                          InsufficientClassError, ValueError, OSError)):
        return EXIT_DATA
    return 1


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value run configuration file")
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="output root (report tree goes under <output>/report/<run-id>)")
    p.add_argument("--run-id")
    p.add_argument("--data", help="CSV file (needs --schema)")
    p.add_argument("--schema", help="schema file (JSON or YAML)")


def _config(args):
    overrides = {"model": args.model, "seed": args.seed, "output": args.output,
                 "run_id": args.run_id, "data": args.data, "schema": args.schema}
    return load_config(args.config, overrides)


def _stage(name: str, with_upstream: bool, downstream: tuple[str, ...] = ()):
    def handler(args) -> int:
        cfg = _config(args)
        todo = (P.missing_upstream(cfg, name) if with_upstream else []) + [name] + list(downstream)
        P.run_pipeline(cfg, todo)
        print(cfg.run_dir)
        return EXIT_OK
    return handler


def cmd_run(args) -> int:
    cfg = _config(args)
    P.run_pipeline(cfg)
    print(cfg.run_dir)
    return EXIT_OK


def cmd_train(args) -> int:
    downstream = () if args.no_report else ("evaluate", "report")
    return _stage("train", True, downstream)(args)


def cmd_compare(args) -> int:
    out = P.compare(args.reports, args.out)
    print(out)
    return EXIT_OK


def cmd_pfn_meta_train(args) -> int:
    model = PFNModel(PFNConfig(max_features=args.max_features), seed=args.seed)
    prior = TaskPrior(max_features=min(TaskPrior().max_features, args.max_features))
    cfg = MetaTrainConfig(steps=args.steps, tasks_per_step=args.tasks_per_step, seed=args.seed)
    meta_train(model, prior, cfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, args.out, {"steps": args.steps, "tasks_per_step": args.tasks_per_step,
                                      "final_loss": model.curve[-1]})
    print(args.out)
    return EXIT_OK


def cmd_pfn_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    if not isinstance(model, PFNModel):
        raise ConfigError(f"{args.checkpoint} is not an in-context model checkpoint")
    xs, ys, _, _ = D.read_encoded_csv(args.support)
    xq, _, _, _ = D.read_encoded_csv(args.query)
    if len(ys) > model.config.max_support:
        pick = P.support_subsample(ys, model.config.max_support, args.seed)
        xs, ys = xs[pick], ys[pick]
    xs, xq = P.pfn_features(xs, xq, model.config.max_features)
    probs = pfn_predict(model, xs, ys, xq)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        fh.write("p0,p1,p2,predicted\n")
        for row in probs:
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(np.argmax(row))}\n")
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabsae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    stage_help = {
        "prepare": "ingest or synthesize and encode the dataset",
        "resample": "SMOTEENN over the encoded matrix, with an audit file",
        "evaluate": "score the test split and write metrics.json",
        "report": "render curves, confusion, ROC, KDE and Sankey figures",
    }
    for name, text in stage_help.items():
        p = sub.add_parser(name, help=text)
        _run_options(p)
        p.set_defaults(func=_stage(name, with_upstream=name != "prepare"))

    p = sub.add_parser("train", help="train the configured model, then evaluate and report")
    _run_options(p)
    p.add_argument("--no-report", action="store_true", help="stop after writing the checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="every stage from scratch")
    _run_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="side-by-side table of two or more metrics.json files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", default="comparison.svg", help="SVG path; a CSV twin is written next to it")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("pfn-meta-train", help="meta-train the in-context classifier on synthetic tasks")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--steps", type=int, default=MetaTrainConfig.steps)
    p.add_argument("--tasks-per-step", type=int, default=MetaTrainConfig.tasks_per_step)
    p.add_argument("--max-features", type=int, default=PFNConfig.max_features)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_pfn_meta_train)

    p = sub.add_parser("pfn-predict", help="class probabilities for query rows given a labelled support set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--support", required=True, help="encoded CSV with a label column")
    p.add_argument("--query", required=True, help="encoded CSV (label column ignored)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="seed for support subsampling")
    p.set_defaults(func=cmd_pfn_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # mapped to the documented exit codes
        code = exit_code(exc)
        if code == 1:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
