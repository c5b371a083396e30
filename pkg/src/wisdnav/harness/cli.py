"""``wisdnav`` command line.  Usage errors exit 2, runtime failures exit 1."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from ..exceptions import InvalidConfig, WisdNavError
from . import runner
from .config import RunConfig


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--scenario", help="builtin scenario name or scenario JSON path")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="wisdnav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", parents=[common], help="train a SAC policy")
    p.add_argument("--episodes", type=int, help="training episodes")
    p.add_argument("--action-mode", choices=("twist", "wheel"))

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a scenario")
    p.add_argument("--checkpoint", help="WISD checkpoint")
    p.add_argument("--episodes", type=int, help="evaluation episodes")
    p.add_argument("--action-mode", choices=("twist", "wheel"))

    p = sub.add_parser("run-controller", parents=[common],
                       help="twist CSV (vx,vy,wz) to wheel-command CSV")
    p.add_argument("twists", type=Path, help="input CSV with vx, vy, wz columns")

    p = sub.add_parser("navigate", parents=[common], help="A* route following with a policy")
    p.add_argument("--checkpoint", help="WISD checkpoint")

    p = sub.add_parser("replay", parents=[common], help="summarize a trajectory log")
    p.add_argument("log", type=Path, help="trajectory CSV")
    p.add_argument("--goal", type=float, nargs=2, metavar=("X", "Y"))

    p = sub.add_parser("bench", parents=[common], help="controller and policy latency")
    p.add_argument("--checkpoint", help="WISD checkpoint (default: fresh network)")
    p.add_argument("--iterations", type=int)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.scenario is not None:
        cfg.scenario = args.scenario
    if args.out is not None:
        cfg.out = str(args.out)
    if getattr(args, "action_mode", None):
        cfg.action_mode = args.action_mode
    if getattr(args, "checkpoint", None):
        cfg.checkpoint = args.checkpoint
    if getattr(args, "episodes", None) is not None:
        if args.command == "train":
            cfg.sac = dataclasses.replace(cfg.sac, episodes=args.episodes)
        else:
            cfg.eval = {**cfg.eval, "episodes": args.episodes}
    if getattr(args, "iterations", None) is not None:
        cfg.bench = {**cfg.bench, "iterations": args.iterations}
    return cfg.validate()


def dispatch(args) -> int:
    cfg = resolve_config(args)
    out = sys.stdout
    if args.command == "train":
        agent = runner.run_train(cfg)
        last = agent.training_log_[-1] if agent.training_log_ else {}
        out.write(f"trained {len(agent.training_log_)} episodes; "
                  f"final return {last.get('return', float('nan')):.3f}; "
                  f"checkpoint {Path(cfg.out) / 'checkpoint_final.wisd'}\n")
    elif args.command == "eval":
        report, _ = runner.run_eval(cfg)
        out.write(report.to_text())
    elif args.command == "run-controller":
        rows = runner.run_controller(cfg, args.twists)
        out.write(f"wrote {len(rows)} wheel commands to {Path(cfg.out) / 'wheel_commands.csv'}\n")
    elif args.command == "navigate":
        report, _, _ = runner.run_navigate(cfg)
        out.write(report.to_text())
    elif args.command == "replay":
        summary = runner.run_replay(cfg, args.log, goal=args.goal)
        out.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    elif args.command == "bench":
        runner.run_bench(cfg)
        out.write((Path(cfg.out) / "bench.txt").read_text())
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except (InvalidConfig, WisdNavError, OSError, ValueError, KeyError) as exc:
        print(f"wisdnav {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
