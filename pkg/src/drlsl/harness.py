"""Training, testing and shield-audit drivers plus metrics I/O."""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .agent import DQNAgent, Transition, agent_from_bytes, checkpoint_bytes, load_checkpoint, save_checkpoint
from .config import RunConfig, dump
from .env import HighwayEnv, SpawnBlocked, SpawnSpec, Termination, position_penalty
from .road import ALL_ACTIONS, EGO_ID, Action, Direction, EnvSnapshot, TrackConfig, VehicleState
from .shield import SECTORS, Sector, Shield, geometric_safe_actions, load_rules_text
from .traffic import TrafficSource, generate, load_track, mirror_direction

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "episode",
    "seed",
    "reward",
    "r_lc",
    "r_v",
    "r_c",
    "r_out",
    "lane_changes",
    "collision",
    "ego_caused",
    "off_road",
    "steps",
    "termination",
    "epsilon",
    "density",
)

SUMMARY_KEYS = ("lane_changes", "collisions", "off_road", "mean_steps")

# purposes mixed into per-episode seeds so each concern draws its own stream
_TRAFFIC, _SPAWN, _DENSITY = 1, 2, 3


class UnsafeAction(AssertionError):
    """A shielded agent executed an action outside the safe set."""


@dataclass
class EpisodeMetrics:
    episode: int
    seed: int
    reward: float = 0.0
    r_lc: float = 0.0
    r_v: float = 0.0
    r_c: float = 0.0
    r_out: float = 0.0
    lane_changes: int = 0
    collision: bool = False
    ego_caused: bool = False
    off_road: bool = False
    steps: int = 0
    termination: str = Termination.NONE.value
    epsilon: float = 0.0
    density: float = 1.0

    def row(self) -> List[str]:
        out = []
        for name in METRIC_COLUMNS:
            v = getattr(self, name)
            if isinstance(v, bool):
                out.append(str(int(v)))
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        return out


# ---------------------------------------------------------------------------
# seeding and traffic


def episode_seed(seed: int, episode: int, purpose: int) -> int:
    """Deterministic 32-bit seed for one concern of one episode."""
    return int(np.random.SeedSequence([seed, episode, purpose]).generate_state(1)[0])


def base_source(cfg: RunConfig, seed: int, episode: int, density: float = 1.0) -> TrafficSource:
    """Left-to-right traffic for an episode; recorded tracks ignore density."""
    track = cfg.env.track
    if cfg.track_file:
        return load_track(cfg.track_file, track=track)
    spec = cfg.synth.with_seed(episode_seed(seed, episode, _TRAFFIC))
    if density != 1.0:
        spec = spec.scaled(density)
    # enough frames to cover the episode at a crawl plus spawn retries
    frames = int(math.ceil(track.episode_length / 5.0 / track.dt)) + cfg.spawn_retries * cfg.spawn_retry_frames
    return generate(spec, frames, track)


def episode_source(cfg: RunConfig, seed: int, episode: int, density: float = 1.0) -> TrafficSource:
    src = base_source(cfg, seed, episode, density)
    if cfg.direction == Direction.RIGHT_TO_LEFT.value:
        src = mirror_direction(src)
    return src


def spawn_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng(episode_seed(seed, episode, _SPAWN))


def spawn_lanes(cfg: RunConfig) -> Tuple[int, ...]:
    return cfg.env.track.lanes_of(Direction(cfg.direction))


# ---------------------------------------------------------------------------
# one episode


def reset_with_retries(env: HighwayEnv, source: TrafficSource, cfg: RunConfig, rng: np.random.Generator):
    """Spawn in a random lane of the run's direction, waiting for a gap.

    Each retry delays the spawn by ``spawn_retry_frames``; the other lanes
    are tried at the same frame before waiting again.
    """
    lanes = list(spawn_lanes(cfg))
    first = int(rng.integers(len(lanes)))
    order = lanes[first:] + lanes[:first]
    for attempt in range(cfg.spawn_retries + 1):
        for lane in order:
            try:
                return env.reset(source, SpawnSpec(lane=lane, frame=attempt * cfg.spawn_retry_frames))
            except SpawnBlocked:
                continue
    raise SpawnBlocked(f"no lane cleared within {cfg.spawn_retries} retries")


def run_episode(
    env: HighwayEnv,
    agent: DQNAgent,
    source: TrafficSource,
    cfg: RunConfig,
    metrics: EpisodeMetrics,
    spawn_rng: np.random.Generator,
    shield: Optional[Shield] = None,
    epsilon: Optional[float] = None,
    learn: bool = True,
    trace: Optional[list] = None,
) -> EpisodeMetrics:
    """Drive one episode, deciding every ``decision_interval`` frames.

    Decisions are semi-Markov: a lane change holds until the ego is centred
    on the target lane, so a transition spans k frames. Its reward is the
    per-frame rewards discounted at gamma per nominal decision interval,
    and its bootstrap discount is gamma ** (k / interval).
    """
    obs, _ = reset_with_retries(env, source, cfg, spawn_rng)
    k0 = cfg.decision_interval
    gamma = agent.hp.gamma
    s = obs.as_array()
    pending = None  # [state, action, discounted reward, frames]
    since = k0
    comps = [0.0, 0.0, 0.0, 0.0]
    while True:
        action = None
        if not env.maneuvering and since >= k0:
            safe = shield.safe_actions(env.snapshot) if shield is not None else ALL_ACTIONS
            if pending is not None:
                _store(agent, pending, s, False, k0, learn, cfg)
            if learn and shield is not None and cfg.learn_blocked:
                _remember_blocked(env, agent, s, safe)
            action = agent.act(s, safe, epsilon)
            if action not in safe:
                raise UnsafeAction(f"{action.symbol} outside {sorted(a.symbol for a in safe)}")
            if trace is not None:
                trace.append((env.steps, action, frozenset(safe)))
            if action is not Action.LANE_KEEPING:
                metrics.lane_changes += 1
            pending = [s, int(action), 0.0, 0]
            since = 0
        res = env.drive(action)
        since += 1
        pending[2] += gamma ** (pending[3] / k0) * res.reward
        pending[3] += 1
        metrics.reward += res.reward
        for i, c in enumerate(res.reward_components):
            comps[i] += c
        s = res.obs.as_array()
        if res.done:
            _store(agent, pending, s, True, k0, learn, cfg)
            metrics.termination = res.termination.value
            metrics.collision = res.termination is Termination.COLLISION
            metrics.ego_caused = metrics.collision and res.ego_caused
            metrics.off_road = res.termination is Termination.OFF_ROAD
            break
    metrics.r_lc, metrics.r_v, metrics.r_c, metrics.r_out = comps
    metrics.steps = env.steps
    return metrics


def invalid_actions(ego: VehicleState, track: TrackConfig) -> Tuple[Action, ...]:
    """Lane changes whose target is not a lane of the ego's own carriageway."""
    lanes = track.lanes_of(ego.direction)
    out = []
    if ego.lane + ego.direction.left_step not in lanes:
        out.append(Action.LEFT_LANE_CHANGE)
    if ego.lane - ego.direction.left_step not in lanes:
        out.append(Action.RIGHT_LANE_CHANGE)
    return tuple(out)


def _remember_blocked(env: HighwayEnv, agent: DQNAgent, s: np.ndarray, safe) -> None:
    # The shield never lets these run, so the agent would otherwise know
    # nothing about them. Each one is stored as ending the episode with the
    # penalty it risks: off-road when the target lane does not exist,
    # collision when traffic is in the way.
    w = env.cfg.reward
    penalty = position_penalty(env.progress, env.track.track_length)
    invalid = invalid_actions(env.snapshot.ego, env.track)
    for a in Action:
        if a in safe:
            continue
        weight = w.w_out if a in invalid else w.w_c
        agent.remember(Transition(s, int(a), -w.w_lc + weight * penalty, s, True, tau=1.0))


def _store(agent: DQNAgent, pending, s_next: np.ndarray, done: bool, k0: int, learn: bool, cfg: RunConfig) -> None:
    if not learn:
        return
    s, a, r, k = pending
    agent.remember(Transition(s, a, r, s_next, done, tau=k / k0))
    for _ in range(cfg.updates_per_decision):
        agent.learn()


# ---------------------------------------------------------------------------
# metrics files


def write_metrics(rows: Iterable[EpisodeMetrics], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for m in rows:
            w.writerow(m.row())


def read_metrics(path: str) -> List[Dict[str, object]]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec: Dict[str, object] = {}
            for k, v in row.items():
                if k == "termination":
                    rec[k] = v
                elif k in ("episode", "seed", "lane_changes", "steps", "collision", "ego_caused", "off_road"):
                    rec[k] = int(v)
                else:
                    rec[k] = float(v)
            out.append(rec)
    return out


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over full windows; entry i ends at episode i + window - 1."""
    x = np.asarray(values, dtype=np.float64)
    if len(x) < window:
        return np.empty(0)
    c = np.cumsum(np.concatenate(([0.0], x)))
    return (c[window:] - c[:-window]) / window


def convergence_episode(
    rewards: Sequence[float], window: int = 50, reach: float = 0.9, band: float = 0.05
) -> Optional[int]:
    """First episode (1-based) whose moving average has reached ``reach`` of the
    final value and stays within ``band`` of it from there on."""
    ma = moving_average(rewards, window)
    if ma.size == 0:
        return None
    final = ma[-1]
    scale = abs(final)
    lo_reach = final - (1.0 - reach) * scale
    inside = np.abs(ma - final) <= band * scale
    # suffix-all: inside from i to the end
    stays = np.flip(np.logical_and.accumulate(np.flip(inside)))
    ok = stays & (ma >= lo_reach)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return None
    return int(idx[0]) + window


# ---------------------------------------------------------------------------
# commands


@dataclass
class TrainResult:
    seed: int
    metrics: List[EpisodeMetrics]
    checkpoint: bytes
    metrics_path: Optional[str] = None
    checkpoint_path: Optional[str] = None


def _hyper(cfg: RunConfig):
    # the schedules decay over the run's own episode count
    return dataclasses.replace(cfg.hyper, episodes=cfg.episodes)


def make_shield(cfg: RunConfig, rules_text: Optional[str] = None) -> Shield:
    return Shield(cfg.env.shield, cfg.env.track, rules_text)


def train_seed(cfg: RunConfig, seed: int, out_dir: Optional[str] = None, rules_text: Optional[str] = None) -> TrainResult:
    agent = DQNAgent(_hyper(cfg), seed=seed)
    env = HighwayEnv(cfg.env)
    shield = make_shield(cfg, rules_text) if cfg.shield_on else None
    rows = []
    ckpt_path = None
    for ep in range(cfg.episodes):
        m = EpisodeMetrics(ep, seed, epsilon=agent.epsilon)
        run_episode(env, agent, episode_source(cfg, seed, ep), cfg, m, spawn_rng(seed, ep), shield)
        agent.end_episode()
        rows.append(m)
        log.debug("seed %d episode %d: %s reward %.2f", seed, ep, m.termination, m.reward)
        if out_dir and cfg.checkpoint_every and (ep + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(agent, os.path.join(out_dir, f"{cfg.agent}_seed{seed}_ep{ep + 1}.ckpt"))
    blob = checkpoint_bytes(agent)
    res = TrainResult(seed, rows, blob)
    if out_dir:
        res.metrics_path = os.path.join(out_dir, f"{cfg.agent}_seed{seed}_train.csv")
        write_metrics(rows, res.metrics_path)
        ckpt_path = os.path.join(out_dir, f"{cfg.agent}_seed{seed}.ckpt")
        with open(ckpt_path, "wb") as fh:
            fh.write(blob)
        res.checkpoint_path = ckpt_path
    return res


def cmd_train(cfg: RunConfig, out_dir: Optional[str] = None, rules_text: Optional[str] = None) -> List[TrainResult]:
    cfg.validate()
    out_dir = out_dir if out_dir is not None else cfg.resolved_output_dir()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{cfg.agent}_config.yaml"), "w") as fh:
            fh.write(dump(cfg))
    return [train_seed(cfg, s, out_dir, rules_text) for s in cfg.seeds]


def test_seed(cfg: RunConfig, blob: bytes, seed: int) -> List[EpisodeMetrics]:
    agent = agent_from_bytes(blob)
    env = HighwayEnv(cfg.env)
    shield = make_shield(cfg) if cfg.shield_on else None
    lo, hi = cfg.test_density
    rows = []
    for ep in range(cfg.episodes):
        density = float(np.random.default_rng(episode_seed(seed, ep, _DENSITY)).uniform(lo, hi))
        m = EpisodeMetrics(ep, seed, epsilon=0.0, density=density)
        run_episode(env, agent, episode_source(cfg, seed, ep, density), cfg, m, spawn_rng(seed, ep), shield, epsilon=0.0, learn=False)
        rows.append(m)
    return rows


def summarize(rows: Sequence[EpisodeMetrics]) -> Dict[str, float]:
    n = len(rows)
    return {
        "lane_changes": sum(m.lane_changes for m in rows),
        "collisions": sum(m.collision for m in rows),
        "off_road": sum(m.off_road for m in rows),
        "mean_steps": (sum(m.steps for m in rows) / n) if n else 0.0,
        "ego_caused": sum(m.ego_caused for m in rows),
    }


def cmd_test(cfg: RunConfig, checkpoint: Optional[bytes] = None, out_dir: Optional[str] = None):
    """Greedy, shield-off evaluation; returns (summary, rows) merged in seed order."""
    if checkpoint is None:
        cfg.validate()
        with open(cfg.checkpoint, "rb") as fh:
            checkpoint = fh.read()
    agent_from_bytes(checkpoint)  # surface CheckpointMismatch before spawning workers
    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        per_seed = list(pool.map(lambda s: test_seed(cfg, checkpoint, s), cfg.seeds))
    rows = [m for part in per_seed for m in part]
    summary = summarize(rows)
    out_dir = out_dir if out_dir is not None else cfg.resolved_output_dir()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        stem = f"{cfg.agent}_{cfg.direction}_test"
        write_metrics(rows, os.path.join(out_dir, stem + ".csv"))
        with open(os.path.join(out_dir, stem + "_summary.json"), "w") as fh:
            json.dump(summary, fh, sort_keys=True, indent=2)
    return summary, rows


# ---------------------------------------------------------------------------
# shield audit


# (gap along heading, lane offset towards the driver's left) for each sector
_NEAR = {
    Sector.FRONT: (20.0, 0),
    Sector.BACK: (-20.0, 0),
    Sector.LEFT: (0.5, 1),
    Sector.RIGHT: (-0.5, -1),
    Sector.FRONT_LEFT: (15.0, 1),
    Sector.FRONT_RIGHT: (15.0, -1),
    Sector.BACK_LEFT: (-15.0, 1),
    Sector.BACK_RIGHT: (-15.0, -1),
}
_FAR = {s: (math.copysign(70.0, g) if abs(g) > 1 else g, off) for s, (g, off) in _NEAR.items()}


@dataclass
class AuditScene:
    direction: Direction
    lane: int
    sectors: Tuple[Sector, ...]
    far: bool
    snapshot: EnvSnapshot


def _scene(track: TrackConfig, direction: Direction, lane: int, sectors, far: bool) -> Optional[AuditScene]:
    ego = VehicleState(
        EGO_ID, lane, 420.0, track.lane_center(lane), 4.5, 1.9,
        direction.heading * track.speed_limit(lane), 0.0, direction,
    )
    table = _FAR if far else _NEAR
    traffic = []
    for i, sec in enumerate(sectors):
        gap, off = table[sec]
        tv_lane = lane + off * direction.left_step
        if tv_lane not in track.lanes:
            return None
        tv_dir = track.direction_of_lane(tv_lane)
        speed = 0.9 * track.speed_limit(tv_lane)
        traffic.append(VehicleState(
            i, tv_lane, ego.x + direction.heading * gap, track.lane_center(tv_lane), 4.5, 1.9,
            tv_dir.heading * speed, 0.0, tv_dir,
        ))
    return AuditScene(direction, lane, tuple(sectors), far, EnvSnapshot(ego, tuple(traffic)))


def audit_scenes(track: Optional[TrackConfig] = None) -> List[AuditScene]:
    """Every legal ego lane x every subset of the eight sectors x both directions,
    with each occupied sector's vehicle close by; single-vehicle scenes are
    repeated with the vehicle far out in its sector."""
    track = track or TrackConfig()
    scenes = []
    for direction in Direction:
        for lane in track.lanes_of(direction):
            for r in range(len(SECTORS) + 1):
                for subset in itertools.combinations(SECTORS, r):
                    sc = _scene(track, direction, lane, subset, far=False)
                    if sc is not None:
                        scenes.append(sc)
            for sec in SECTORS:
                sc = _scene(track, direction, lane, (sec,), far=True)
                if sc is not None:
                    scenes.append(sc)
    return scenes


@dataclass
class AuditReport:
    total: int
    agree: int
    over_conservative: List[AuditScene]
    unsound: List[AuditScene]

    @property
    def agreement(self) -> float:
        return 100.0 * self.agree / self.total if self.total else 100.0

    @property
    def passed(self) -> bool:
        return self.agree == self.total

    def text(self, limit: int = 10) -> str:
        buf = io.StringIO()
        buf.write(f"scenes: {self.total}\nagreement: {self.agreement:.2f}%\n")
        buf.write(f"over-conservative: {len(self.over_conservative)}\nunsound: {len(self.unsound)}\n")
        for label, group in (("over-conservative", self.over_conservative), ("unsound", self.unsound)):
            for sc in group[:limit]:
                secs = ",".join(s.value for s in sc.sectors) or "-"
                buf.write(f"  {label}: {sc.direction.value} lane {sc.lane} far={sc.far} sectors={secs}\n")
        return buf.getvalue()


def cmd_shield_audit(cfg: Optional[RunConfig] = None, rules_text: Optional[str] = None) -> AuditReport:
    cfg = cfg or RunConfig(mode="shield-audit")
    track, scfg = cfg.env.track, cfg.env.shield
    shield = Shield(scfg, track, rules_text if rules_text is not None else load_rules_text())
    agree, over, unsound = 0, [], []
    scenes = audit_scenes(track)
    for sc in scenes:
        got = shield.safe_actions(sc.snapshot)
        want = geometric_safe_actions(sc.snapshot, scfg, track)
        if got == want:
            agree += 1
        elif got - want:
            unsound.append(sc)
        else:
            over.append(sc)
    return AuditReport(len(scenes), agree, over, unsound)


# ---------------------------------------------------------------------------
# plot data


def plot_data(metrics_paths: Sequence[str], out_path: str, window: int = 50) -> None:
    """Per-episode moving averages of every reward column, one block per file."""
    cols = ("reward", "r_lc", "r_v", "r_c", "r_out")
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("source", "episode") + cols)
        for path in metrics_paths:
            rows = read_metrics(path)
            series = {c: moving_average([r[c] for r in rows], window) for c in cols}
            for i in range(len(series["reward"])):
                w.writerow([os.path.basename(path), i + window] + [repr(float(series[c][i])) for c in cols])


__all__ = [
    "METRIC_COLUMNS",
    "SUMMARY_KEYS",
    "AuditReport",
    "EpisodeMetrics",
    "TrainResult",
    "UnsafeAction",
    "audit_scenes",
    "cmd_shield_audit",
    "cmd_test",
    "cmd_train",
    "convergence_episode",
    "episode_seed",
    "load_checkpoint",
    "moving_average",
    "plot_data",
    "read_metrics",
    "run_episode",
    "summarize",
    "write_metrics",
]
