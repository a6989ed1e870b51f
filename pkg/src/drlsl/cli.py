"""Command line: ``drlsl train|test|shield-audit|plot``.

Precedence is defaults < flags < ``--config`` file < ``--set`` overrides.
The output directory falls back to $DRLSL_OUTPUT_DIR, then ./runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from . import config as C
from .harness import cmd_shield_audit, cmd_test, cmd_train, convergence_episode, plot_data

log = logging.getLogger("drlsl")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run config; its values override flags")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override applied last, e.g. env.shield.radar_range=80")
    p.add_argument("--agent", choices=C.AGENTS)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--track-file", dest="track_file")
    p.add_argument("--direction", choices=C.DIRECTIONS)
    p.add_argument("--shield", dest="shield", action="store_true", default=None)
    p.add_argument("--no-shield", dest="shield", action="store_false")
    p.add_argument("--decision-interval", dest="decision_interval", type=int)
    p.add_argument("--updates-per-decision", dest="updates_per_decision", type=int)
    p.add_argument("--spawn-retries", dest="spawn_retries", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--rules", help="rule file to use instead of the shipped one")


_FLAG_FIELDS = (
    "agent", "episodes", "seeds", "track_file", "direction", "shield", "decision_interval",
    "updates_per_decision", "spawn_retries", "checkpoint", "checkpoint_every", "output_dir", "workers",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drlsl", description="Shielded DQN lane-change training on a highway simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="mode", required=True)
    for name, text in (
        ("train", "train dqn or dqnsl agents, one run per seed"),
        ("test", "greedy evaluation of a checkpoint, shield off unless --shield"),
        ("shield-audit", "compare the rule engine's safe sets with the geometric oracle"),
    ):
        _add_run_flags(sub.add_parser(name, help=text))
    plot = sub.add_parser("plot", help="write moving-average curves from metrics files")
    plot.add_argument("metrics", nargs="+")
    plot.add_argument("--out", required=True)
    plot.add_argument("--window", type=int, default=50)
    return parser


def resolve_config(args: argparse.Namespace) -> C.RunConfig:
    data = C.to_dict(C.RunConfig())
    data["mode"] = args.mode
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if args.config:
        data = C.merge(data, C.load_file(args.config))
    for text in args.set:
        data = C.merge(data, C.parse_assignment(text))
    cfg = C.from_dict(data)
    cfg.mode = args.mode
    cfg.validate()
    return cfg


def _read_rules(path: Optional[str]) -> Optional[str]:
    if not path:
        return None
    with open(path) as fh:
        return fh.read()


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.mode == "plot":
            plot_data(args.metrics, args.out, args.window)
            return 0
        cfg = resolve_config(args)
        rules = _read_rules(args.rules)
        if args.mode == "train":
            out = cfg.resolved_output_dir()
            for res in cmd_train(cfg, out, rules):
                conv = convergence_episode([m.reward for m in res.metrics])
                print(f"seed {res.seed}: metrics {res.metrics_path} checkpoint {res.checkpoint_path} convergence {conv}")
            return 0
        if args.mode == "test":
            summary, _ = cmd_test(cfg, out_dir=cfg.resolved_output_dir())
            print(json.dumps(summary, sort_keys=True))
            return 0
        report = cmd_shield_audit(cfg, rules)
        sys.stdout.write(report.text())
        return 0 if report.passed else 1
    except Exception as exc:  # every failure maps to a nonzero exit
        log.error("%s: %s", type(exc).__name__, exc)
        if args.verbose:
            raise
        return 2


if __name__ == "__main__":
    sys.exit(main())
