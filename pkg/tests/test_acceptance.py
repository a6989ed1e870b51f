"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that conftest prints in the terminal
summary, then asserts it. Training for criteria 4, 5, 6 and 9 happens once
per session in the ``trained`` fixture.
"""
from __future__ import annotations

import random
import statistics
import time

import pytest

from drlsl.agent import agent_from_bytes, checkpoint_bytes, load_checkpoint, save_checkpoint
from drlsl.config import RunConfig
from drlsl.control import LongitudinalConfig, critical_distance
from drlsl.env import RewardConfig, position_penalty
from drlsl.harness import cmd_shield_audit, cmd_test, cmd_train, convergence_episode, train_seed

from helpers import TRACK, grad_rel_error
from programs import oracle_answers, random_program
from test_control import follow_run
from test_logic import engine_answers

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2)
EPISODES = 300
TEST_SEED = 100
TEST_EPISODES = 50


@pytest.fixture(scope="module")
def trained():
    out = {}
    t0 = time.perf_counter()
    for agent in ("dqnsl", "dqn"):
        cfg = RunConfig(agent=agent, episodes=EPISODES, seeds=SEEDS)
        out[agent] = [train_seed(cfg, s) for s in SEEDS]
    out["seconds"] = time.perf_counter() - t0
    return out


def test_criterion_1_gradient_check(verdict):
    t0 = time.perf_counter()
    worst = max(grad_rel_error(seed) for seed in range(20))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 10.0
    verdict(1, ok, f"worst relative error {worst:.2e} over 20 nets in {dt:.1f} s")
    assert ok


def test_criterion_2_engine_matches_enumeration(verdict):
    rnd = random.Random(2024)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(500):
        prog = random_program(rnd, max_rules=4, max_facts=12, max_consts=6)
        if set(engine_answers(prog)) != oracle_answers(prog):
            bad += 1
    dt = time.perf_counter() - t0
    ok = bad == 0 and dt < 30.0
    verdict(2, ok, f"{500 - bad}/500 programs agree in {dt:.1f} s")
    assert ok


def test_criterion_3_shield_audit(verdict):
    t0 = time.perf_counter()
    report = cmd_shield_audit()
    dt = time.perf_counter() - t0
    ok = report.passed and report.total >= 200 and dt < 5.0
    verdict(3, ok, f"{report.agreement:.2f}% of {report.total} scenes agree in {dt:.1f} s")
    assert ok


def test_criterion_4_safety_during_training(trained, verdict):
    sl = [m for r in trained["dqnsl"] for m in r.metrics]
    plain = [m for r in trained["dqn"] for m in r.metrics]
    sl_coll, sl_off = sum(m.ego_caused for m in sl), sum(m.off_road for m in sl)
    dqn_coll, dqn_off = sum(m.ego_caused for m in plain), sum(m.off_road for m in plain)
    dt = trained["seconds"]
    ok = sl_coll == 0 and sl_off == 0 and dqn_coll >= 1 and dqn_off >= 1 and dt < 20 * 60
    verdict(4, ok, f"DQNSL ego-caused {sl_coll} off-road {sl_off}; DQN ego-caused {dqn_coll} "
                   f"off-road {dqn_off}; {len(SEEDS)} seeds x {EPISODES} episodes in {dt / 60:.1f} min")
    assert ok


def test_criterion_5_faster_convergence(trained, verdict):
    def episodes(agent):
        # a run that never settles counts as one past the end
        out = []
        for r in trained[agent]:
            ep = convergence_episode([m.reward for m in r.metrics])
            out.append(EPISODES + 1 if ep is None else ep)
        return out

    sl, plain = episodes("dqnsl"), episodes("dqn")
    ratio = statistics.median(sl) / statistics.median(plain)
    ok = ratio <= 0.8
    verdict(5, ok, f"median convergence DQNSL {statistics.median(sl)} {sl} vs DQN "
                   f"{statistics.median(plain)} {plain}, ratio {ratio:.2f}")
    assert ok


def test_criterion_6_shield_off_testing(trained, verdict):
    t0 = time.perf_counter()
    totals = {}
    for agent in ("dqnsl", "dqn"):
        for direction in ("left_to_right", "right_to_left"):
            cfg = RunConfig(mode="test", agent=agent, episodes=TEST_EPISODES, seeds=(TEST_SEED,),
                            direction=direction, shield=False, workers=1)
            acc = {"lane_changes": 0, "collisions": 0, "off_road": 0}
            for r in trained[agent]:
                summary, _ = cmd_test(cfg, r.checkpoint, out_dir="")
                for k in acc:
                    acc[k] += summary[k]
            totals[agent, direction] = acc
    dt = time.perf_counter() - t0
    sl, plain = totals["dqnsl", "left_to_right"], totals["dqn", "left_to_right"]
    mirrored = totals["dqnsl", "right_to_left"]
    ok = (sl["lane_changes"] < plain["lane_changes"] and sl["collisions"] <= plain["collisions"]
          and mirrored["off_road"] == 0 and dt < 5 * 60)
    verdict(6, ok, f"lane changes {sl['lane_changes']} vs {plain['lane_changes']}, collisions "
                   f"{sl['collisions']} vs {plain['collisions']}, mirrored off-road {mirrored['off_road']} "
                   f"(DQN {totals['dqn', 'right_to_left']['off_road']}) in {dt:.0f} s")
    assert ok


def test_criterion_7_reward_fixtures(verdict):
    x = TRACK.episode_length
    at_start, at_half = position_penalty(0.0, x), position_penalty(x / 2, x)
    weights = RewardConfig().weights
    ok = abs(at_start + 1.0) <= 1e-12 and abs(at_half + 0.6) <= 1e-12 and weights == (5.0, 0.01, 100.0, 100.0)
    verdict(7, ok, f"r_c(0)={at_start}, r_c(X/2)={at_half:.12f}, weights={weights}")
    assert ok


def test_criterion_8_controller_never_overlaps(verdict):
    cfg = LongitudinalConfig()
    t0 = time.perf_counter()
    worst, runs = float("inf"), 0
    for v_ego in (25.0, 30.0, 33.3):
        c = critical_distance(v_ego, cfg)
        for v_tv in range(0, 40, 5):
            gap = c + 5.0
            while gap <= 150.0:
                worst = min(worst, follow_run(v_ego, float(v_tv), gap, cfg, v_max=v_ego, seconds=30.0))
                runs += 1
                gap += 5.0
    dt = time.perf_counter() - t0
    ok = worst > 0.0 and dt < 10.0
    verdict(8, ok, f"smallest gap {worst:.3f} m over {runs} runs in {dt:.1f} s")
    assert ok


def test_criterion_9_reproducibility(trained, tmp_path, verdict):
    same = True
    for agent in ("dqnsl", "dqn"):
        cfg = RunConfig(agent=agent, episodes=3, seeds=(7,))
        (a,) = cmd_train(cfg, str(tmp_path / f"{agent}_a"))
        (b,) = cmd_train(cfg, str(tmp_path / f"{agent}_b"))
        for pa, pb in ((a.metrics_path, b.metrics_path), (a.checkpoint_path, b.checkpoint_path)):
            same &= open(pa, "rb").read() == open(pb, "rb").read()
    round_trip = True
    for i, r in enumerate(trained["dqnsl"] + trained["dqn"]):
        first = tmp_path / f"ckpt{i}_a.bin"
        second = tmp_path / f"ckpt{i}_b.bin"
        first.write_bytes(r.checkpoint)
        save_checkpoint(load_checkpoint(str(first)), str(second))
        round_trip &= second.read_bytes() == r.checkpoint
        round_trip &= checkpoint_bytes(agent_from_bytes(r.checkpoint)) == r.checkpoint
    ok = same and round_trip
    verdict(9, ok, f"repeated runs identical: {same}; checkpoint save-load-save identical: {round_trip}")
    assert ok
