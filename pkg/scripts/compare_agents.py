#!/usr/bin/env python3
"""Train DQN and DQNSL on the same seeds, then test both with the shield off.

Prints training incidents, convergence episodes and a shield-off test table
for both driving directions. Everything is written under --out.

    python scripts/compare_agents.py --episodes 300 --seeds 0 1 2 --out runs/compare
"""
from __future__ import annotations

import argparse
import os
import statistics

from drlsl.config import DIRECTIONS, RunConfig
from drlsl.harness import cmd_test, cmd_train, convergence_episode


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=300)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--test-episodes", type=int, default=50)
    ap.add_argument("--test-seed", type=int, default=100)
    ap.add_argument("--out", default="runs/compare")
    args = ap.parse_args()

    results = {}
    for agent in ("dqnsl", "dqn"):
        cfg = RunConfig(agent=agent, episodes=args.episodes, seeds=tuple(args.seeds))
        results[agent] = cmd_train(cfg, os.path.join(args.out, agent))

    print(f"{'agent':<6} {'ego-caused':>10} {'off-road':>9} {'convergence':>24}")
    for agent, runs in results.items():
        rows = [m for r in runs for m in r.metrics]
        conv = [convergence_episode([m.reward for m in r.metrics]) for r in runs]
        settled = [c for c in conv if c is not None]
        med = statistics.median(settled) if settled else None
        print(f"{agent:<6} {sum(m.ego_caused for m in rows):>10} {sum(m.off_road for m in rows):>9} "
              f"{str(conv):>16} med {med}")

    print(f"\nshield-off test, {args.test_episodes} episodes per checkpoint")
    print(f"{'agent':<6} {'direction':<14} {'lane changes':>12} {'collisions':>10} {'off-road':>9}")
    for agent, runs in results.items():
        for direction in DIRECTIONS:
            cfg = RunConfig(mode="test", agent=agent, episodes=args.test_episodes, seeds=(args.test_seed,),
                            direction=direction, shield=False, checkpoint="in-memory")
            totals = [0, 0, 0]
            for r in runs:
                out = os.path.join(args.out, agent, f"test_seed{r.seed}")
                s, _ = cmd_test(cfg, r.checkpoint, out_dir=out)
                totals = [t + s[k] for t, k in zip(totals, ("lane_changes", "collisions", "off_road"))]
            print(f"{agent:<6} {direction:<14} {totals[0]:>12} {totals[1]:>10} {totals[2]:>9}")


if __name__ == "__main__":
    main()
