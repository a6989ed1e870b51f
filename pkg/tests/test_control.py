from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drlsl.control import (
    DegenerateGap,
    InvalidManeuver,
    LongitudinalConfig,
    PIState,
    Scenario,
    brake_accel,
    critical_distance,
    follow_accel,
    longitudinal_accel,
    longitudinal_command,
    phantom_target,
    pi_lateral,
    switch_box,
    update_desired_velocity,
)
from drlsl.road import Action, Direction, default_adjacency
from drlsl.shield import ShieldConfig, occupancy

from helpers import TRACK, car, ego, scene

CFG = LongitudinalConfig()
ADJ = default_adjacency(TRACK)
L2R = Direction.LEFT_TO_RIGHT


def follow_run(v0, v_tv, gap, cfg=CFG, v_max=33.3, dt=0.04, seconds=60.0):
    """Two cars on a line, the ego commanded every frame; returns the smallest gap."""
    x_ego, x_tv, v = 0.0, gap, v0
    smallest = gap
    for _ in range(int(seconds / dt)):
        g = x_tv - x_ego
        smallest = min(smallest, g)
        if g <= 0:
            break
        a = longitudinal_command(v, v_max, (g, v_tv), cfg, dt).a_x
        x_ego += max(0.0, v * dt + 0.5 * a * dt * dt)
        v = min(max(v + a * dt, 0.0), v_max)
        x_tv += v_tv * dt
    return smallest


# -- longitudinal --------------------------------------------------------------


def test_free_road_at_limit_holds_speed():
    cmd = longitudinal_command(30.0, 30.0, None, CFG, 0.04)
    assert cmd.a_x == 0.0 and cmd.scenario is Scenario.FREE_ROAD and cmd.v_desired == 30.0


def test_free_road_is_clamped_to_comfort():
    cmd = longitudinal_command(10.0, 30.0, None, CFG, 0.04)
    assert cmd.a_x == CFG.a_max_comfort


def test_follow_formula():
    assert follow_accel(25.0, 20.0, 50.0, 20.0) == pytest.approx((400 - 625) / 60)
    assert follow_accel(25.0, 20.0, 50.0, 20.0) == pytest.approx(-3.75)


def test_brake_formula():
    assert brake_accel(20.0, 40.0, 0.5) == pytest.approx(-5.0)


def test_brake_guard():
    with pytest.raises(DegenerateGap):
        brake_accel(20.0, 0.3, 0.5)
    cmd = longitudinal_command(20.0, 30.0, (0.3, 0.0), CFG, 0.04)
    assert cmd.a_x == -CFG.a_max_brake and cmd.scenario is Scenario.EMERGENCY_BRAKE


def test_critical_distance_rule():
    assert critical_distance(0.0, CFG) == 10.0
    assert critical_distance(20.0, CFG) == pytest.approx(30.0)
    # stopping distance dominates at motorway speed
    assert critical_distance(33.3, CFG) == pytest.approx(33.3**2 / 16)
    headway_only = LongitudinalConfig(braking_distance=False)
    assert critical_distance(33.3, headway_only) == pytest.approx(49.95)


def test_gap_just_above_critical_clamps_to_full_brake():
    v = 25.0
    c = critical_distance(v, CFG)
    cmd = longitudinal_command(v, 30.0, (c + 1e-6, 10.0), CFG, 0.04)
    assert cmd.a_x == -CFG.a_max_brake
    assert cmd.scenario is Scenario.EMERGENCY_BRAKE


def test_desired_velocity_update():
    assert update_desired_velocity(30.0, -5.0, 0.04, 33.3) == pytest.approx(29.8)
    assert update_desired_velocity(33.0, 3.0, 1.0, 33.3) == 33.3
    assert update_desired_velocity(0.1, -8.0, 1.0, 33.3) == 0.0
    with pytest.raises(ValueError):
        update_desired_velocity(1.0, 0.0, 0.0, 33.3)


@settings(max_examples=300, deadline=None)
@given(
    st.floats(0.0, 33.3),
    st.one_of(st.none(), st.tuples(st.floats(0.0, 200.0), st.floats(0.0, 40.0))),
)
def test_command_bounds(v, front):
    cmd = longitudinal_command(v, 33.3, front, CFG, 0.04)
    if cmd.scenario is Scenario.EMERGENCY_BRAKE:
        assert -CFG.a_max_brake <= cmd.a_x <= 0.0
    else:
        assert abs(cmd.a_x) <= CFG.a_max_comfort
    assert 0.0 <= cmd.v_desired <= 33.3


def test_snapshot_command_uses_front_sector():
    e = ego(lane=5, speed=25.0)
    s = scene(e, car(1, 5, e.x + 95.0, speed=20.0), car(2, 4, e.x + 20.0, speed=5.0))
    cmd = longitudinal_accel(s, occupancy(s, ShieldConfig()), CFG, TRACK)
    gap = 95.0 - 4.5
    assert cmd.scenario is Scenario.FOLLOW
    assert cmd.a_x == pytest.approx(follow_accel(25.0, 20.0, gap, critical_distance(25.0, CFG)))


def test_following_sweep_spot_checks():
    for v_tv in (0.0, 15.0, 35.0):
        c = critical_distance(33.3, CFG)
        assert follow_run(33.3, v_tv, c + 5.0) > 0.0


# -- lateral ----------------------------------------------------------------------


def test_switch_box_targets():
    t = switch_box(5, Action.RIGHT_LANE_CHANGE, L2R, ADJ, TRACK)
    assert t.target_lane == 6 and t.y_d == TRACK.lane_center(6)
    t = switch_box(5, Action.LANE_KEEPING, L2R, ADJ, TRACK)
    assert t.target_lane == 5 and t.y_d == TRACK.lane_center(5)


def test_switch_box_refuses_opposite_direction():
    with pytest.raises(InvalidManeuver):
        switch_box(4, Action.LEFT_LANE_CHANGE, L2R, ADJ, TRACK)
    with pytest.raises(InvalidManeuver):
        switch_box(1, Action.RIGHT_LANE_CHANGE, Direction.RIGHT_TO_LEFT, ADJ, TRACK)


@pytest.mark.parametrize("lane", [4, 5, 6])
def test_lane_keeping_is_identity(lane):
    assert switch_box(lane, Action.LANE_KEEPING, L2R, ADJ, TRACK).target_lane == lane


def test_phantom_target_leaves_the_carriageway():
    t = phantom_target(4, Action.LEFT_LANE_CHANGE, L2R, TRACK)
    lo, _ = TRACK.carriageway(L2R)
    assert t.y_d < lo


def test_pi_zero_error():
    assert pi_lateral(PIState(), 5.0, 5.0, 0.04) == 0.0


def test_pi_proportional_term():
    st_ = PIState(kp=2.0, ki=0.0, kd=0.0)
    assert pi_lateral(st_, 0.0, 0.5, 0.04) == pytest.approx(1.0)


def step_response(seconds=6.0, dt=0.04):
    s = PIState()
    y, vy, y_d = 0.0, 0.0, 3.75
    trace = []
    for _ in range(int(seconds / dt)):
        a = pi_lateral(s, y, y_d, dt, vy)
        vy += a * dt
        y += vy * dt
        trace.append((y, s.integral, a))
    return trace


def test_closed_loop_lane_change_settles():
    dt = 0.04
    trace = step_response(dt=dt)
    settled = next(i for i in range(len(trace)) if all(abs(3.75 - y) < 0.05 for y, _, _ in trace[i:]))
    assert settled * dt <= 3.0
    # never crosses into the lane beyond the target
    assert max(y for y, _, _ in trace) < 3.75 + 3.75 / 2


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-5, 5), st.integers(1, 50))
def test_pi_limits_hold(y, y_d, vy, n):
    s = PIState()
    for _ in range(n):
        a = pi_lateral(s, y, y_d, 0.04, vy)
        assert abs(a) <= s.output_limit
        assert abs(s.integral) <= s.windup_limit
    assert math.isfinite(a)
