"""Command-line entry points: train, eval, sweep, export."""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .harness import evaluate, sweep, train
from .metrics import export_rows


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wolfpack",
        description="Coordinated action attacks on cooperative Q-learning, "
                    "and adversarial training against them.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--init-checkpoint", default=None,
                         help="warm-start from an existing checkpoint")
    p_train.add_argument("--method", default=None,
                         help="method label stamped on metrics rows")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint under an attacker")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--attacker", required=True,
                        choices=["natural", "random", "wolfpack"])
    p_eval.add_argument("--episodes", type=int, required=True)
    p_eval.add_argument("--k", type=int, required=True,
                        help="unified attack budget per episode")
    p_eval.add_argument("--seed", type=int, required=True)
    p_eval.add_argument("--out", default=None)
    p_eval.add_argument("--epsilon", type=float, default=0.0)
    p_eval.add_argument("--init-mode", default=None,
                        choices=["uniform", "min_qtot"])
    p_eval.add_argument("--followup-mode", default=None,
                        choices=["kl", "l2", "random"])
    p_eval.add_argument("--step-mode", default=None,
                        choices=["planner", "random"])
    p_eval.add_argument("--attacker-checkpoint", default=None,
                        help="drive the attacker from a foreign checkpoint")
    p_eval.add_argument("--trace", action="store_true",
                        help="log per-step firing probabilities")

    p_sweep = sub.add_parser("sweep", help="train+evaluate over a config grid")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--grid", required=True)
    p_sweep.add_argument("--out", required=True)

    p_export = sub.add_parser("export", help="filter metrics rows to jsonl/csv")
    p_export.add_argument("--metrics", required=True)
    p_export.add_argument("--what", required=True,
                          choices=["curves", "attacks", "stepprobs"])
    p_export.add_argument("--format", required=True, choices=["jsonl", "csv"])
    p_export.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "train":
        config = load_config(args.config)
        seed = args.seed if args.seed is not None else config.seeds[0]
        artifacts = train(config, seed, args.out, method=args.method,
                          init_checkpoint=args.init_checkpoint)
        print(json.dumps(artifacts, indent=2))
        return 0
    if args.command == "eval":
        overrides = {}
        if args.init_mode is not None:
            overrides["init_mode"] = args.init_mode
        if args.followup_mode is not None:
            overrides["followup_mode"] = args.followup_mode
        if args.step_mode is not None:
            overrides["step_mode"] = args.step_mode
        summary = evaluate(args.checkpoint, args.attacker, args.episodes,
                           args.k, args.seed, out_dir=args.out,
                           epsilon=args.epsilon,
                           attack_overrides=overrides or None,
                           trace_stepprobs=args.trace,
                           attacker_checkpoint=args.attacker_checkpoint)
        print(json.dumps(summary, indent=2, sort_keys=True))
        return 0
    if args.command == "sweep":
        config = load_config(args.config)
        with open(args.grid, "r", encoding="utf-8") as fh:
            grid = json.load(fh)
        results = sweep(config, grid, args.out)
        print(json.dumps({"cells": len(results["cells"]),
                          "skipped": results["skipped"]}, indent=2))
        return 0
    if args.command == "export":
        out = export_rows(args.metrics, args.what, args.format, args.out)
        print(out)
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
