"""Command-line entry point.

Subcommands:
  train    meta-train one algorithm and save its model plus cost tables
  eval     fine-tune/evaluate a saved model over fresh trial tasks
  compare  run several algorithms against identical trials and emit
           combined CDFs, cost tables, and plots

Options may come from a flat key=value config file (--config) and are
overridden by the corresponding command-line flags.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ALGORITHMS, parse_config_file
from .errors import MetabackError
from .experiment import (
    ExperimentConfig,
    evaluation_trials,
    prepare_experiment,
    run_comparison,
    run_experiment,
    train_meta_model,
    write_cdf_csv,
    write_eval_csv,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--experiment", type=str, default=None, choices=("sinusoid", "mnist"))
    p.add_argument("--algorithm", type=str, default=None, choices=ALGORITHMS)
    p.add_argument("--trials", type=int, default=None)


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    options = parse_config_file(args.config) if args.config else {}
    overrides = {
        "seed": args.seed,
        "output_dir": args.out,
        "experiment": args.experiment,
        "algorithm": args.algorithm,
        "trials": args.trials,
    }
    for key, value in overrides.items():
        if value is not None:
            options[key] = value
    return ExperimentConfig.from_options(options)


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare_experiment(cfg)
    model = train_meta_model(prep)
    theta_path = out / f"theta_{model.algorithm}.npy"
    np.save(theta_path, model.theta)
    model.ledger.write_csv(out / "costs.csv")
    if model.backward is not None:
        model.backward.write_trajectory_csv(out / "trajectory.csv")
    print(f"trained {model.algorithm} on {cfg.experiment}: model -> {theta_path}")
    print(
        f"ledger: {len(model.ledger.rounds)} rounds, "
        f"{model.ledger.total_grad_evals} grad evals, "
        f"{model.ledger.total_comm_energy_j:.2f} J comm energy"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    theta = np.load(args.theta)
    prep = prepare_experiment(cfg)
    records = evaluation_trials(prep, theta)
    write_eval_csv(records, out / "eval.csv")
    write_cdf_csv({cfg.algorithm: records}, out / "cdf.csv", "loss")
    if cfg.experiment == "mnist":
        write_cdf_csv({cfg.algorithm: records}, out / "cdf_accuracy.csv", "accuracy")
    losses = sorted(r.loss for r in records)
    print(f"evaluated {len(records)} trials: median loss {losses[len(losses) // 2]!r}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    algorithms = args.algorithms.split(",") if args.algorithms else None
    result = run_comparison(cfg, algorithms)
    for algorithm, records in result.records.items():
        losses = sorted(r.loss for r in records)
        ledger = result.models[algorithm].ledger
        print(
            f"{algorithm}: median loss {losses[len(losses) // 2]:.6g}, "
            f"{ledger.total_grad_evals} grad evals, "
            f"{ledger.total_comm_energy_j:.2f} J comm energy"
        )
    print(f"outputs -> {result.output_dir}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="metaback", description="Federated meta-learning simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="meta-train one algorithm")
    _add_common(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a saved meta-model")
    _add_common(p_eval)
    p_eval.add_argument("--theta", type=str, required=True, help="saved .npy model")
    p_eval.set_defaults(func=_cmd_eval)

    p_cmp = sub.add_parser("compare", help="run the full comparison")
    _add_common(p_cmp)
    p_cmp.add_argument(
        "--algorithms", type=str, default=None, help="comma-separated algorithm names"
    )
    p_cmp.set_defaults(func=_cmd_compare)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MetabackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
