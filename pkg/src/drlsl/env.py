"""Highway MDP: ego kinematics over replayed or synthetic traffic, rewards and observations."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .control import (
    InvalidManeuver,
    LaneTarget,
    LongitudinalCommand,
    LongitudinalConfig,
    PIState,
    critical_distance,
    longitudinal_accel,
    phantom_target,
    pi_lateral,
    switch_box,
)
from .road import EGO_ID, Action, Direction, EnvSnapshot, TrackConfig, VehicleState
from .shield import SECTORS, SectorOccupancy, ShieldConfig, occupancy
from .traffic import TrafficSource


class Termination(str, enum.Enum):
    NONE = "none"
    COLLISION = "collision"
    OFF_ROAD = "off_road"
    TRACK_END = "track_end"


class SpawnBlocked(RuntimeError):
    pass


class StepAfterDone(RuntimeError):
    pass


class TrafficExhausted(RuntimeError):
    """The traffic source ran out of frames before the episode ended."""


@dataclass
class RewardConfig:
    w_lc: float = 5.0
    w_v: float = 0.01
    w_c: float = 100.0
    w_out: float = 100.0
    # use the normalised speed instead of raw m/s for the velocity term
    normalized_velocity: bool = False

    @property
    def weights(self) -> Tuple[float, float, float, float]:
        return (self.w_lc, self.w_v, self.w_c, self.w_out)


@dataclass
class SpawnSpec:
    lane: int = 5
    # progress along the travel direction; the start of the track by default
    progress: float = 0.0
    speed: Optional[float] = None  # lane speed limit when None
    # free bumper-to-bumper space required around the spawn point
    clearance: float = 5.0
    # same-lane space behind the ego; ahead it is the critical distance
    clearance_behind: float = 15.0
    # start no faster than the nearest same-lane vehicle ahead
    match_leader: bool = True
    frame: int = 0


@dataclass
class EnvConfig:
    track: TrackConfig = field(default_factory=TrackConfig)
    shield: ShieldConfig = field(default_factory=ShieldConfig)
    longitudinal: LongitudinalConfig = field(default_factory=LongitudinalConfig)
    lateral: PIState = field(default_factory=PIState)
    reward: RewardConfig = field(default_factory=RewardConfig)
    ego_length: float = 4.5
    ego_width: float = 1.9
    # a maneuver completes once the lateral error drops below this
    latch_tolerance: float = 0.1
    # a rear-end only clears the ego once it has held the lane this long
    blame_window: float = 2.0
    # traffic farther than this (m, longitudinally) is not materialised
    sensing_reach: float = 130.0
    # count lanes from the driving direction's own side so both carriageways look alike
    relative_lane: bool = True


@dataclass(frozen=True)
class Observation:
    d_bar: Tuple[float, ...]
    l_bar: float
    v_bar: float

    def as_array(self) -> np.ndarray:
        return np.array(self.d_bar + (self.l_bar, self.v_bar), dtype=np.float64)


@dataclass(frozen=True)
class StepResult:
    obs: Observation
    reward: float
    reward_components: Tuple[float, float, float, float]
    done: bool
    termination: Termination
    ego_caused: bool
    snapshot: EnvSnapshot
    scenario: str = ""
    collided_with: Optional[int] = None


@dataclass(frozen=True)
class Events:
    collision: bool = False
    off_road: bool = False
    # progress along the ego's travel direction when the event happened
    x: float = 0.0


def observe(
    snapshot: EnvSnapshot,
    cfg: ShieldConfig,
    track: TrackConfig,
    occ: Optional[SectorOccupancy] = None,
    relative_lane: bool = False,
) -> Observation:
    occ = occ if occ is not None else occupancy(snapshot, cfg)
    r = cfg.radar_range
    d_bar = tuple(min(max(occ.nearest_distance[s] / r, 0.0), 1.0) for s in SECTORS)
    ego = snapshot.ego
    lane = ego.lane
    if relative_lane and ego.direction is Direction.RIGHT_TO_LEFT:
        lane = track.mirror_lane(lane)
    l_bar = lane / track.num_lanes
    v_bar = min(max(ego.speed / track.speed_limit(ego.lane), 0.0), 1.0)
    return Observation(d_bar, l_bar, v_bar)


def position_penalty(x: float, track_length: float) -> float:
    """Terminal penalty for an event at progress ``x``: -1 at the start, -0.2 at the end."""
    x = min(max(x, 0.0), track_length)
    return -(1.0 - 0.8 * x / track_length)


def compute_reward(
    prev: Optional[EnvSnapshot],
    action: Optional[Action],
    next_: EnvSnapshot,
    events: Events,
    cfg: Optional[RewardConfig] = None,
    track: Optional[TrackConfig] = None,
) -> Tuple[float, Tuple[float, float, float, float]]:
    cfg = cfg or RewardConfig()
    track = track or TrackConfig()
    r_lc = -1.0 if action is not None and Action(action) is not Action.LANE_KEEPING else 0.0
    ego = next_.ego
    if cfg.normalized_velocity:
        r_v = min(max(ego.speed / track.speed_limit(ego.lane), 0.0), 1.0)
    else:
        r_v = ego.speed
    r_c = position_penalty(events.x, track.track_length) if events.collision else 0.0
    r_out = position_penalty(events.x, track.track_length) if events.off_road else 0.0
    comps = (r_lc, r_v, r_c, r_out)
    reward = cfg.w_lc * r_lc + cfg.w_v * r_v + cfg.w_c * r_c + cfg.w_out * r_out
    return reward, comps


def detect_collision(a: VehicleState, b: VehicleState) -> bool:
    """Axis-aligned box overlap; touching edges do not count."""
    return abs(a.x - b.x) < (a.length + b.length) / 2 and abs(a.y - b.y) < (a.width + b.width) / 2


@dataclass(frozen=True)
class EgoHistory:
    # seconds since the ego's centre entered its current lane
    since_lane_entry: float = float("inf")


def classify_collision(ego: VehicleState, tv: VehicleState, history: EgoHistory, window: float = 2.0) -> bool:
    """True when the ego is to blame for the contact.

    The ego is blameless only when a TV in its own lane runs into it from
    behind (front face within the ego's rear half) and the ego has held
    that lane for longer than ``window``; a fresh cut-in stays the ego's fault.
    """
    h = ego.direction.heading
    rel = h * (tv.x - ego.x)
    tv_front = rel + tv.length / 2
    from_behind = rel < 0 and -ego.length / 2 <= tv_front <= 0
    settled = tv.lane == ego.lane and history.since_lane_entry > window
    return not (from_behind and settled)


def _mirror_safe_lane(track: TrackConfig, y: float, direction: Direction, fallback: int) -> int:
    lane = track.lane_of_y(y)
    if lane is None or track.direction_of_lane(lane) is not direction:
        return fallback
    return lane


class HighwayEnv:
    """One ego on a six-lane road; single-threaded, one episode at a time."""

    def __init__(self, cfg: Optional[EnvConfig] = None, source: Optional[TrafficSource] = None):
        self.cfg = cfg or EnvConfig()
        self.track = self.cfg.track
        self.adjacency = self.cfg.shield.adjacency_for(self.track)
        self.source = source
        self.pi = PIState(**{k: getattr(self.cfg.lateral, k) for k in ("kp", "ki", "kd", "windup_limit", "output_limit")})
        self._snapshot: Optional[EnvSnapshot] = None
        self._occ: Optional[SectorOccupancy] = None
        self.done = True

    # -- episode control -------------------------------------------------

    def reset(self, source: Optional[TrafficSource] = None, spawn: Optional[SpawnSpec] = None) -> Tuple[Observation, EnvSnapshot]:
        if source is not None:
            self.source = source
        if self.source is None:
            raise ValueError("no traffic source")
        if len(self.source) < 1:
            raise TrafficExhausted("traffic source has no frames")
        spawn = spawn or SpawnSpec()
        track = self.track
        direction = track.direction_of_lane(spawn.lane)
        x = track.start_x(direction) + direction.heading * spawn.progress
        y = track.lane_center(spawn.lane)
        self.frame = spawn.frame
        traffic = self._traffic(x)
        speed = track.speed_limit(spawn.lane) if spawn.speed is None else spawn.speed
        ahead = [
            tv for tv in traffic
            if tv.lane == spawn.lane and direction.heading * (tv.x - x) >= 0
        ]
        if spawn.match_leader and ahead:
            leader = min(ahead, key=lambda tv: abs(tv.x - x))
            speed = min(speed, max(leader.speed, 0.0))
        ego = VehicleState(
            EGO_ID,
            spawn.lane,
            x,
            y,
            self.cfg.ego_length,
            self.cfg.ego_width,
            direction.heading * speed,
            0.0,
            direction,
        )
        c_ahead = critical_distance(speed, self.cfg.longitudinal)
        for tv in traffic:
            if abs(tv.y - y) >= (tv.width + ego.width) / 2:
                continue
            gap = direction.heading * (tv.x - x)
            free = abs(gap) - (tv.length + ego.length) / 2
            needed = spawn.clearance
            if tv.lane == ego.lane:
                needed = max(needed, c_ahead if gap >= 0 else spawn.clearance_behind)
            if free < needed:
                raise SpawnBlocked(f"vehicle {tv.id} within {needed:.1f} m of the spawn point")
        self._set_snapshot(EnvSnapshot(ego, traffic, self.frame))
        self.target = LaneTarget(ego.lane, track.lane_center(ego.lane))
        self.maneuvering = False
        self.pi.reset()
        self.time = 0.0
        self.lane_entered = -float("inf")
        self.steps = 0
        self.done = False
        self.last_command: Optional[LongitudinalCommand] = None
        return self.observation, self._snapshot

    def _traffic(self, x: float) -> Tuple[VehicleState, ...]:
        if self.frame >= len(self.source):
            raise TrafficExhausted(f"traffic source ended at frame {len(self.source)}")
        return self.source.vehicles_near(self.frame, x, self.cfg.sensing_reach)

    def _set_snapshot(self, snap: EnvSnapshot) -> None:
        self._snapshot = snap
        self._occ = occupancy(snap, self.cfg.shield)

    @property
    def snapshot(self) -> EnvSnapshot:
        return self._snapshot

    @property
    def occupancy(self) -> SectorOccupancy:
        return self._occ

    @property
    def observation(self) -> Observation:
        return observe(self._snapshot, self.cfg.shield, self.track, self._occ, self.cfg.relative_lane)

    @property
    def progress(self) -> float:
        ego = self._snapshot.ego
        return self.track.progress(ego.x, ego.direction) - self.track.progress(
            self.track.start_x(ego.direction), ego.direction
        )

    # -- control ---------------------------------------------------------

    def command(self, action: Optional[Action]) -> Tuple[float, float]:
        """Longitudinal and lateral accelerations for this frame.

        ``action`` is the high-level decision taken at this frame, or None
        while a previous decision is still being carried out. Lane changes
        latch until the ego is centred on the target lane.
        """
        ego = self._snapshot.ego
        if action is not None:
            action = Action(action)
            if action is Action.LANE_KEEPING:
                if not self.maneuvering:
                    self.target = LaneTarget(ego.lane, self.track.lane_center(ego.lane))
            else:
                try:
                    self.target = switch_box(ego.lane, action, ego.direction, self.adjacency, self.track)
                except InvalidManeuver:
                    # only reachable without the shield: steer off the carriageway
                    self.target = phantom_target(ego.lane, action, ego.direction, self.track)
                self.maneuvering = True
                self.pi.reset()
        cmd = longitudinal_accel(self._snapshot, self._occ, self.cfg.longitudinal, self.track)
        self.last_command = cmd
        a_y = pi_lateral(self.pi, ego.y, self.target.y_d, self.track.dt, ego.vy)
        return cmd.a_x * ego.direction.heading, a_y

    def drive(self, action: Optional[Action]) -> StepResult:
        a_x, a_y = self.command(action)
        return self.step(action, a_x, a_y)

    # -- dynamics ----------------------------------------------------------

    def step(self, action: Optional[Action], a_x: float, a_y: float) -> StepResult:
        """Advance one frame with accelerations in world axes.

        ``action`` only enters the lane-change reward; steering comes from
        ``a_y``. Pass None on frames without a new decision.
        """
        if self.done:
            raise StepAfterDone("episode is over; call reset()")
        track, dt = self.track, self.track.dt
        prev = self._snapshot
        ego = prev.ego
        h = ego.direction.heading
        along = a_x * h
        v = ego.speed
        ds = max(0.0, v * dt + 0.5 * along * dt * dt)
        v_new = min(max(v + along * dt, 0.0), track.speed_limit(ego.lane))
        vy = ego.vy + a_y * dt
        y = ego.y + vy * dt
        x = ego.x + h * ds
        lane = _mirror_safe_lane(track, y, ego.direction, ego.lane)
        # the new lane's limit applies as soon as the midline is crossed
        v_new = min(v_new, track.speed_limit(lane))
        new_ego = ego.moved(x=x, y=y, vx=h * v_new, vy=vy, lane=lane)

        self.time += dt
        self.steps += 1
        if lane != ego.lane:
            self.lane_entered = self.time
        if self.maneuvering and abs(self.target.y_d - y) < self.cfg.latch_tolerance:
            self.maneuvering = False
            self.pi.reset()
            self.target = LaneTarget(lane, track.lane_center(lane))

        self.frame += 1
        traffic = self._traffic(x)
        snap = EnvSnapshot(new_ego, traffic, self.frame)
        self._set_snapshot(snap)

        progress = self.progress
        hit = next((tv for tv in traffic if detect_collision(new_ego, tv)), None)
        lo, hi = track.carriageway(new_ego.direction)
        off = not (lo <= y <= hi)
        termination = Termination.NONE
        ego_caused = False
        if hit is not None:
            termination = Termination.COLLISION
            history = EgoHistory(self.time - self.lane_entered)
            ego_caused = classify_collision(new_ego, hit, history, self.cfg.blame_window)
        elif off:
            termination = Termination.OFF_ROAD
        elif progress >= track.episode_length:
            termination = Termination.TRACK_END
        events = Events(
            collision=termination is Termination.COLLISION,
            off_road=termination is Termination.OFF_ROAD,
            x=progress,
        )
        reward, comps = compute_reward(prev, action, snap, events, self.cfg.reward, track)
        self.done = termination is not Termination.NONE
        return StepResult(
            obs=self.observation,
            reward=reward,
            reward_components=comps,
            done=self.done,
            termination=termination,
            ego_caused=ego_caused,
            snapshot=snap,
            scenario=self.last_command.scenario.value if self.last_command else "",
            collided_with=hit.id if hit is not None else None,
        )
