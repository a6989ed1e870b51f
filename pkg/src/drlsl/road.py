"""Road geometry and the vehicle/scene types shared by every module.

Lanes are numbered 1..6 from the top of the road (smallest y) to the
bottom, matching the highD drone framing: lanes 1-3 carry right-to-left
traffic, lanes 4-6 left-to-right traffic. For left-to-right traffic the
driver's left is towards smaller y; for right-to-left traffic it is
towards larger y.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple


class Direction(str, enum.Enum):
    LEFT_TO_RIGHT = "left_to_right"
    RIGHT_TO_LEFT = "right_to_left"

    @property
    def heading(self) -> int:
        """Sign of x-velocity for traffic moving this way."""
        return 1 if self is Direction.LEFT_TO_RIGHT else -1

    @property
    def left_step(self) -> int:
        """Lane-index offset of the driver's left-hand neighbour."""
        return -1 if self is Direction.LEFT_TO_RIGHT else 1

    @property
    def opposite(self) -> "Direction":
        return Direction.RIGHT_TO_LEFT if self is Direction.LEFT_TO_RIGHT else Direction.LEFT_TO_RIGHT


class Action(enum.IntEnum):
    LANE_KEEPING = 0
    LEFT_LANE_CHANGE = 1
    RIGHT_LANE_CHANGE = 2

    @property
    def symbol(self) -> str:
        return self.name.lower()

    @classmethod
    def from_symbol(cls, name: str) -> "Action":
        return cls[name.upper()]


ALL_ACTIONS = frozenset(Action)


@dataclass(frozen=True)
class VehicleState:
    id: int
    lane: int
    x: float
    y: float
    length: float
    width: float
    vx: float
    vy: float
    direction: Direction

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"vehicle {self.id}: non-positive dimensions")

    @property
    def speed(self) -> float:
        """Longitudinal speed along the vehicle's own direction of travel."""
        return self.vx * self.direction.heading

    def moved(self, **changes) -> "VehicleState":
        return replace(self, **changes)


@dataclass(frozen=True)
class EnvSnapshot:
    ego: VehicleState
    traffic: Tuple[VehicleState, ...]
    frame_index: int = 0

    def __post_init__(self):
        if any(tv.id == self.ego.id for tv in self.traffic):
            raise ValueError(f"ego id {self.ego.id} reused by a traffic vehicle")


EGO_ID = -1


def _default_limits() -> Dict[int, float]:
    # faster lanes next to the median, slower at the outer edge
    return {1: 25.0, 2: 30.0, 3: 33.3, 4: 33.3, 5: 30.0, 6: 25.0}


@dataclass
class TrackConfig:
    """Straight six-lane bidirectional road."""

    lane_width: float = 3.75
    num_lanes: int = 6
    speed_limits: Dict[int, float] = field(default_factory=_default_limits)
    dt: float = 0.04
    track_length: float = 840.0
    episode_length: float = 840.0

    def __post_init__(self):
        self.speed_limits = {int(k): float(v) for k, v in self.speed_limits.items()}
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.num_lanes != 6:
            raise ValueError("the track family has exactly six lanes")
        if set(self.speed_limits) != set(range(1, self.num_lanes + 1)):
            raise ValueError("speed_limits must name every lane")
        if self.episode_length > self.track_length:
            raise ValueError("episode_length exceeds the track")

    @property
    def lane_centers(self) -> Dict[int, float]:
        return {lane: self.lane_center(lane) for lane in self.lanes}

    @property
    def lanes(self) -> range:
        return range(1, self.num_lanes + 1)

    @property
    def road_width(self) -> float:
        return self.num_lanes * self.lane_width

    def lane_center(self, lane: int) -> float:
        return (lane - 0.5) * self.lane_width

    def lane_of_y(self, y: float) -> Optional[int]:
        idx = int(y // self.lane_width) + 1
        return idx if 1 <= idx <= self.num_lanes else None

    def direction_of_lane(self, lane: int) -> Direction:
        return Direction.RIGHT_TO_LEFT if lane <= self.num_lanes // 2 else Direction.LEFT_TO_RIGHT

    def lanes_of(self, direction: Direction) -> Tuple[int, ...]:
        half = self.num_lanes // 2
        if direction is Direction.RIGHT_TO_LEFT:
            return tuple(range(1, half + 1))
        return tuple(range(half + 1, self.num_lanes + 1))

    def carriageway(self, direction: Direction) -> Tuple[float, float]:
        """y-interval covered by the lanes of one driving direction."""
        lanes = self.lanes_of(direction)
        return ((min(lanes) - 1) * self.lane_width, max(lanes) * self.lane_width)

    def speed_limit(self, lane: int) -> float:
        return self.speed_limits[lane]

    def progress(self, x: float, direction: Direction) -> float:
        """Distance travelled along ``direction`` from the start of the track."""
        return x if direction is Direction.LEFT_TO_RIGHT else self.track_length - x

    def start_x(self, direction: Direction) -> float:
        return 0.0 if direction is Direction.LEFT_TO_RIGHT else self.track_length

    def mirror_lane(self, lane: int) -> int:
        return self.num_lanes + 1 - lane


Adjacency = Dict[Direction, Dict[int, Tuple[Optional[int], Optional[int]]]]


def default_adjacency(track: TrackConfig) -> Adjacency:
    """Same-direction (left, right) neighbours of every lane, per direction."""
    table: Adjacency = {}
    for direction in Direction:
        lanes = track.lanes_of(direction)
        row = {}
        for lane in lanes:
            left = lane + direction.left_step
            right = lane - direction.left_step
            row[lane] = (left if left in lanes else None, right if right in lanes else None)
        table[direction] = row
    return table


def lateral_side(direction: Direction, ego_lane: int, other_lane: int) -> Optional[str]:
    """'same', 'left' or 'right' for lanes at most one apart, else None."""
    if other_lane == ego_lane:
        return "same"
    if other_lane == ego_lane + direction.left_step:
        return "left"
    if other_lane == ego_lane - direction.left_step:
        return "right"
    return None
