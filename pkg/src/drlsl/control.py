"""Longitudinal speed rules and the lateral switch-box / PI path."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

from .road import Action, Adjacency, Direction, TrackConfig, VehicleState


class Scenario(str, enum.Enum):
    FREE_ROAD = "free_road"
    FOLLOW = "follow"
    EMERGENCY_BRAKE = "emergency_brake"


class DegenerateGap(ArithmeticError):
    """Front gap too small to divide by; callers fall back to full braking."""


class InvalidManeuver(ValueError):
    def __init__(self, lane: int, action: Action):
        super().__init__(f"no same-direction lane for {action.symbol} from lane {lane}")
        self.lane = lane
        self.action = action


@dataclass
class LongitudinalConfig:
    # free-road horizon: the gap to the speed limit is closed over dt_ctl seconds
    dt_ctl: float = 1.0
    a_max_comfort: float = 3.0
    a_max_brake: float = 8.0
    min_critical: float = 10.0
    critical_headway: float = 1.5
    # include the full-braking stopping distance in the critical distance
    braking_distance: bool = True
    eps_gap: float = 0.5

    def __post_init__(self):
        if self.dt_ctl <= 0:
            raise ValueError("dt_ctl must be positive")
        if self.a_max_comfort <= 0 or self.a_max_brake < self.a_max_comfort:
            raise ValueError("need 0 < a_max_comfort <= a_max_brake")
        if self.eps_gap <= 0:
            raise ValueError("eps_gap must be positive")


@dataclass(frozen=True)
class LongitudinalCommand:
    a_x: float
    v_desired: float
    scenario: Scenario


def critical_distance(v_ego: float, cfg: LongitudinalConfig) -> float:
    c = max(cfg.min_critical, cfg.critical_headway * v_ego)
    if cfg.braking_distance:
        c = max(c, v_ego * v_ego / (2.0 * cfg.a_max_brake))
    return c


def bumper_gap(ego: VehicleState, tv: VehicleState) -> float:
    """Free space between the ego's front and the rear of a TV ahead."""
    return abs(tv.x - ego.x) - (ego.length + tv.length) / 2


def free_road_accel(v: float, v_max: float, cfg: LongitudinalConfig) -> float:
    return (v_max - v) / cfg.dt_ctl


def follow_accel(v: float, v_tv: float, gap: float, critical: float) -> float:
    return (v_tv * v_tv - v * v) / (2.0 * (gap - critical))


def brake_accel(v: float, gap: float, eps: float) -> float:
    if gap <= eps:
        raise DegenerateGap(f"gap {gap:.3f} m at or below {eps} m")
    return -v * v / (2.0 * gap)


def update_desired_velocity(v_x: float, a_x: float, dt: float, v_max: float) -> float:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return min(max(v_x + a_x * dt, 0.0), v_max)


def longitudinal_command(
    v: float,
    v_max: float,
    front: Optional[tuple],
    cfg: LongitudinalConfig,
    dt: float,
) -> LongitudinalCommand:
    """Speed rule on scalars; ``front`` is (gap, tv_speed) or None when free."""
    if front is None:
        a = min(max(free_road_accel(v, v_max, cfg), -cfg.a_max_comfort), cfg.a_max_comfort)
        return LongitudinalCommand(a, update_desired_velocity(v, a, dt, v_max), Scenario.FREE_ROAD)
    gap, v_tv = front
    c = critical_distance(v, cfg)
    scenario = Scenario.FOLLOW
    if gap > c:
        a = follow_accel(v, v_tv, gap, c)
    else:
        scenario = Scenario.EMERGENCY_BRAKE
        try:
            a = brake_accel(v, gap, cfg.eps_gap)
        except DegenerateGap:
            a = -cfg.a_max_brake
    if a < -cfg.a_max_comfort:
        # harder than comfort is only allowed as an emergency
        scenario = Scenario.EMERGENCY_BRAKE
        a = max(a, -cfg.a_max_brake)
    elif scenario is Scenario.EMERGENCY_BRAKE:
        a = min(a, 0.0)
    else:
        a = min(a, cfg.a_max_comfort)
    return LongitudinalCommand(a, update_desired_velocity(v, a, dt, v_max), scenario)


def longitudinal_accel(snapshot, occupancy, cfg: LongitudinalConfig, track: TrackConfig) -> LongitudinalCommand:
    """Command for the ego given this step's sector occupancy."""
    from .shield import Sector

    ego = snapshot.ego
    v = max(ego.speed, 0.0)
    v_max = track.speed_limit(ego.lane)
    tv = occupancy.nearest_vehicle[Sector.FRONT]
    # the nearest centre in the front sector is also the nearest rear bumper
    front = None if tv is None else (bumper_gap(ego, tv), tv.vx * ego.direction.heading)
    return longitudinal_command(v, v_max, front, cfg, track.dt)


@dataclass(frozen=True)
class LaneTarget:
    target_lane: int
    y_d: float


def switch_box(
    current_lane: int,
    action: Action,
    direction: Direction,
    adjacency: Adjacency,
    track: TrackConfig,
) -> LaneTarget:
    action = Action(action)
    if action is Action.LANE_KEEPING:
        return LaneTarget(current_lane, track.lane_center(current_lane))
    left, right = adjacency[direction].get(current_lane, (None, None))
    lane = left if action is Action.LEFT_LANE_CHANGE else right
    if lane is None:
        raise InvalidManeuver(current_lane, action)
    return LaneTarget(lane, track.lane_center(lane))


def phantom_target(current_lane: int, action: Action, direction: Direction, track: TrackConfig) -> LaneTarget:
    """Where an unchecked lane change steers: one lane width towards the requested side."""
    step = direction.left_step if Action(action) is Action.LEFT_LANE_CHANGE else -direction.left_step
    lane = current_lane + step
    return LaneTarget(lane, track.lane_center(current_lane) + step * track.lane_width)


@dataclass
class PIState:
    kp: float = 2.6
    ki: float = 0.05
    # lateral-velocity damping; without it a PI loop around a double integrator never settles
    kd: float = 2.8
    windup_limit: float = 2.0
    output_limit: float = 4.0
    integral: float = 0.0

    def __post_init__(self):
        if self.windup_limit < 0 or self.output_limit <= 0:
            raise ValueError("limits must be non-negative")

    def reset(self) -> None:
        self.integral = 0.0


def _clamp(x: float, lim: float) -> float:
    return -lim if x < -lim else (lim if x > lim else x)


def pi_lateral(state: PIState, y: float, y_d: float, dt: float, vy: float = 0.0) -> float:
    """Lateral acceleration towards ``y_d``; updates ``state.integral`` in place."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = y_d - y
    state.integral = _clamp(state.integral + e * dt, state.windup_limit)
    a = state.kp * e + state.ki * state.integral - state.kd * vy
    if not math.isfinite(a):
        raise ArithmeticError("non-finite lateral command")
    return _clamp(a, state.output_limit)
