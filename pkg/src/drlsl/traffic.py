"""Traffic sources: recorded highD-schema tracks and a seeded synthetic generator.

Both expose the same small interface (:class:`TrafficSource`): ``len(src)``
frames, ``src.frame(k)`` for ``0 <= k < len(src)``, and metadata. Vehicles
never react to the ego.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .road import Direction, TrackConfig, VehicleState

COLUMNS = ("frame", "id", "x", "y", "width", "height", "xVelocity", "yVelocity", "laneId")


class SchemaError(ValueError):
    pass


class EmptyTrack(ValueError):
    pass


class InfeasibleSpec(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryFrame:
    frame_index: int
    vehicles: Tuple[VehicleState, ...]

    def __post_init__(self):
        ids = [v.id for v in self.vehicles]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate vehicle id in frame {self.frame_index}")


class TrafficSource:
    """Indexable sequence of frames plus the geometry they were recorded on."""

    frame_rate: float = 25.0
    track: TrackConfig

    def __len__(self) -> int:
        raise NotImplementedError

    def frame(self, index: int) -> TrajectoryFrame:
        raise NotImplementedError

    @property
    def extent(self) -> Tuple[float, float]:
        """Longitudinal interval (m) the vehicles are defined over."""
        raise NotImplementedError

    def frames(self) -> Iterator[TrajectoryFrame]:
        for k in range(len(self)):
            yield self.frame(k)

    def vehicles_near(self, index: int, x: float, reach: float) -> Tuple[VehicleState, ...]:
        """Vehicles of frame ``index`` whose centre lies within ``reach`` of ``x`` longitudinally."""
        return tuple(v for v in self.frame(index).vehicles if abs(v.x - x) <= reach)

    def _check(self, index: int) -> None:
        if not 0 <= index < len(self):
            raise IndexError(f"frame {index} outside 0..{len(self) - 1}")


class RecordedSource(TrafficSource):
    def __init__(self, frames: Sequence[TrajectoryFrame], track: TrackConfig, frame_rate: float = 25.0):
        if frame_rate <= 0:
            raise ValueError("frame rate must be positive")
        self._frames = tuple(frames)
        for k, f in enumerate(self._frames):
            if f.frame_index != k:
                raise ValueError("frame indices must be contiguous from 0")
        self.track = track
        self.frame_rate = frame_rate

    def __len__(self) -> int:
        return len(self._frames)

    def frame(self, index: int) -> TrajectoryFrame:
        self._check(index)
        return self._frames[index]

    @property
    def extent(self) -> Tuple[float, float]:
        xs = [v.x for f in self._frames for v in f.vehicles]
        if not xs:
            return (0.0, self.track.track_length)
        return (min(xs), max(xs))


# ---------------------------------------------------------------------------
# highD-schema files


def _lane_map_path(path: str) -> str:
    root, _ = os.path.splitext(path)
    return root + ".lanes.json"


def load_lane_map(path: str) -> Dict[int, int]:
    """Sidecar JSON: ``{"lanes": {"<laneId>": <lane 1..6>, ...}}``."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    lanes = raw.get("lanes", raw)
    return {int(k): int(v) for k, v in lanes.items()}


def load_track(
    path: str,
    lane_map: Optional[Mapping[int, int]] = None,
    track: Optional[TrackConfig] = None,
    frame_rate: float = 25.0,
    delimiter: str = ",",
) -> RecordedSource:
    """Read a delimited-text track file.

    ``x``/``y`` are the upper-left corner of each bounding box (highD
    convention, y downward); ``width`` is the box extent along x and
    ``height`` across it. Frames are shifted to start at 0; frame numbers
    missing from the file become empty frames.
    """
    track = track or TrackConfig()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise EmptyTrack(f"{path}: no rows")
    if lane_map is None:
        sidecar = _lane_map_path(path)
        lane_map = load_lane_map(sidecar) if os.path.exists(sidecar) else None
    by_frame: Dict[int, List[VehicleState]] = {}
    for n, row in enumerate(rows, start=2):
        try:
            raw_lane = int(row["laneId"])
            lane = lane_map[raw_lane] if lane_map is not None else raw_lane
            width, height = float(row["width"]), float(row["height"])
            v = VehicleState(
                id=int(row["id"]),
                lane=lane,
                x=float(row["x"]) + width / 2,
                y=float(row["y"]) + height / 2,
                length=width,
                width=height,
                vx=float(row["xVelocity"]),
                vy=float(row["yVelocity"]),
                direction=track.direction_of_lane(lane),
            )
            frame = int(row["frame"])
        except KeyError as exc:
            raise SchemaError(f"{path}:{n}: laneId {exc.args[0]} not in the lane map") from None
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}:{n}: {exc}") from None
        if not 1 <= lane <= track.num_lanes:
            raise SchemaError(f"{path}:{n}: lane {lane} outside 1..{track.num_lanes}; supply a lane map")
        by_frame.setdefault(frame, []).append(v)
    first, last = min(by_frame), max(by_frame)
    frames = [
        TrajectoryFrame(k - first, tuple(sorted(by_frame.get(k, ()), key=lambda v: v.id)))
        for k in range(first, last + 1)
    ]
    return RecordedSource(frames, track, frame_rate)


def save_track(source: TrafficSource, path: str, lane_map: Optional[Mapping[int, int]] = None) -> None:
    """Write ``source`` in the format :func:`load_track` reads (repr floats, lossless)."""
    inverse = {v: k for k, v in lane_map.items()} if lane_map else None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for f in source.frames():
            for v in f.vehicles:
                w.writerow(
                    [
                        f.frame_index,
                        v.id,
                        repr(v.x - v.length / 2),
                        repr(v.y - v.width / 2),
                        repr(v.length),
                        repr(v.width),
                        repr(v.vx),
                        repr(v.vy),
                        inverse[v.lane] if inverse else v.lane,
                    ]
                )
    if lane_map:
        with open(_lane_map_path(path), "w", encoding="utf-8") as fh:
            json.dump({"lanes": {str(k): v for k, v in sorted(lane_map.items())}}, fh, indent=1)


# ---------------------------------------------------------------------------
# synthetic traffic


def _default_rates() -> Dict[int, float]:
    return {1: 0.0, 2: 0.0, 3: 0.0, 4: 12.0, 5: 12.0, 6: 12.0}


def _default_speeds() -> Dict[int, Tuple[float, float]]:
    return {
        1: (20.0, 24.0),
        2: (24.0, 28.0),
        3: (28.0, 32.0),
        4: (28.0, 32.0),
        5: (24.0, 28.0),
        6: (20.0, 24.0),
    }


@dataclass
class SynthSpec:
    """Per-lane Poisson arrivals of constant-velocity vehicles."""

    seed: int = 0
    rates: Dict[int, float] = field(default_factory=_default_rates)  # vehicles per minute
    speeds: Dict[int, Tuple[float, float]] = field(default_factory=_default_speeds)  # m/s
    min_gap: float = 15.0  # bumper to bumper, m
    length_range: Tuple[float, float] = (4.0, 5.5)
    width_range: Tuple[float, float] = (1.8, 2.1)
    truck_share: float = 0.1
    truck_length: float = 12.0
    truck_width: float = 2.5
    # vehicles are simulated over the track plus this much on either side
    margin: float = 150.0

    def __post_init__(self):
        self.rates = {int(k): float(v) for k, v in self.rates.items()}
        self.speeds = {int(k): (float(v[0]), float(v[1])) for k, v in self.speeds.items()}
        self.length_range = tuple(self.length_range)
        self.width_range = tuple(self.width_range)

    @property
    def max_length(self) -> float:
        return max(self.length_range[1], self.truck_length if self.truck_share > 0 else 0.0)

    def validate(self, track: TrackConfig) -> None:
        if self.min_gap <= self.max_length:
            raise InfeasibleSpec(f"min_gap {self.min_gap} m must exceed the longest vehicle {self.max_length} m")
        if not 0 <= self.truck_share <= 1:
            raise InfeasibleSpec("truck_share must be in [0, 1]")
        for lane, rate in self.rates.items():
            if lane not in track.speed_limits:
                raise InfeasibleSpec(f"unknown lane {lane}")
            if rate < 0:
                raise InfeasibleSpec(f"lane {lane}: negative rate")
            if rate == 0:
                continue
            lo, hi = self.speeds[lane]
            if not 0 < lo <= hi <= track.speed_limit(lane):
                raise InfeasibleSpec(f"lane {lane}: speed range {lo}..{hi} outside (0, {track.speed_limit(lane)}]")
            capacity = 60.0 * lo / (self.min_gap + self.max_length)
            if rate >= capacity:
                raise InfeasibleSpec(
                    f"lane {lane}: {rate}/min cannot respect a {self.min_gap} m gap at {lo} m/s "
                    f"(capacity {capacity:.1f}/min)"
                )

    def scaled(self, factor: float) -> "SynthSpec":
        return replace(self, rates={k: v * factor for k, v in self.rates.items()})

    def with_seed(self, seed: int) -> "SynthSpec":
        return replace(self, seed=seed)


class SyntheticSource(TrafficSource):
    """Analytic constant-velocity traffic; frames are computed on demand.

    Each lane is a queue of vehicles entering at its upstream end. Entry
    times are a shifted-exponential renewal process: the shift keeps the
    spawn gap, and a follower's speed is capped so it cannot close that gap
    before it leaves the simulated stretch. A warm-up period places
    vehicles along the whole road at frame 0.
    """

    def __init__(self, spec: SynthSpec, duration_frames: int, track: Optional[TrackConfig] = None):
        if duration_frames <= 0:
            raise ValueError("duration_frames must be positive")
        self.spec = spec
        self.track = track or TrackConfig()
        spec.validate(self.track)
        self.frame_rate = 1.0 / self.track.dt
        self.duration_frames = int(duration_frames)
        lo_x, hi_x = -spec.margin, self.track.track_length + spec.margin
        self._x_range = (lo_x, hi_x)
        rng = np.random.default_rng(spec.seed)
        rows = []
        next_id = 1
        horizon = self.duration_frames * self.track.dt
        span = hi_x - lo_x
        for lane in sorted(self.track.lanes):
            rate = spec.rates.get(lane, 0.0)
            if rate <= 0:
                continue
            direction = self.track.direction_of_lane(lane)
            heading = direction.heading
            entry = lo_x if heading > 0 else hi_x
            lo, hi = spec.speeds[lane]
            mean_gap = 60.0 / rate
            max_shift = (spec.min_gap + spec.max_length) / lo
            warmup = span / lo
            t = -warmup
            prev = None
            while True:
                if rng.random() < spec.truck_share:
                    length, width = spec.truck_length, spec.truck_width
                else:
                    length = rng.uniform(*spec.length_range)
                    width = rng.uniform(*spec.width_range)
                v = rng.uniform(lo, hi)
                extra = rng.exponential(mean_gap - max_shift)
                if prev is None:
                    t = t + extra
                else:
                    p_t, p_v, p_len = prev
                    shift = (spec.min_gap + (p_len + length) / 2) / p_v
                    t = p_t + shift + extra
                    gap0 = p_v * (t - p_t) - (p_len + length) / 2
                    k = (gap0 - spec.min_gap) / span
                    if k < 1:
                        v = min(v, p_v / (1.0 - k))
                if t > horizon:
                    break
                rows.append((next_id, lane, heading, entry, t, v, length, width))
                next_id += 1
                prev = (t, v, length)
        arr = np.array(rows, dtype=float).reshape(-1, 8)
        self._ids = arr[:, 0].astype(int)
        self._lanes = arr[:, 1].astype(int)
        self._heading = arr[:, 2]
        self._entry = arr[:, 3]
        self._t0 = arr[:, 4]
        self._v = arr[:, 5]
        self._len = arr[:, 6]
        self._wid = arr[:, 7]
        self._centers = np.array([self.track.lane_center(int(l)) for l in self._lanes])
        self._dirs = [self.track.direction_of_lane(int(l)) for l in self._lanes]

    def __len__(self) -> int:
        return self.duration_frames

    @property
    def extent(self) -> Tuple[float, float]:
        return self._x_range

    @property
    def num_vehicles(self) -> int:
        return len(self._ids)

    def _positions(self, index: int):
        t = index * self.track.dt
        x = self._entry + self._heading * self._v * (t - self._t0)
        lo, hi = self._x_range
        return x, (t >= self._t0) & (x >= lo) & (x <= hi)

    def frame(self, index: int) -> TrajectoryFrame:
        self._check(index)
        x, mask = self._positions(index)
        return TrajectoryFrame(index, self._build(x, np.nonzero(mask)[0]))

    def vehicles_near(self, index: int, x: float, reach: float) -> Tuple[VehicleState, ...]:
        self._check(index)
        xs, mask = self._positions(index)
        return self._build(xs, np.nonzero(mask & (np.abs(xs - x) <= reach))[0])

    def _build(self, x, active) -> Tuple[VehicleState, ...]:
        return tuple(
            VehicleState(
                id=int(self._ids[i]),
                lane=int(self._lanes[i]),
                x=float(x[i]),
                y=float(self._centers[i]),
                length=float(self._len[i]),
                width=float(self._wid[i]),
                vx=float(self._heading[i] * self._v[i]),
                vy=0.0,
                direction=self._dirs[i],
            )
            for i in active
        )


def generate(spec: SynthSpec, duration_frames: int, track: Optional[TrackConfig] = None) -> SyntheticSource:
    return SyntheticSource(spec, duration_frames, track)


# ---------------------------------------------------------------------------
# direction mirroring


def mirror_vehicle(v: VehicleState, track: TrackConfig) -> VehicleState:
    return VehicleState(
        id=v.id,
        lane=track.mirror_lane(v.lane),
        x=track.track_length - v.x,
        y=track.road_width - v.y,
        length=v.length,
        width=v.width,
        vx=-v.vx,
        vy=-v.vy,
        direction=v.direction.opposite,
    )


class MirroredSource(TrafficSource):
    """Point reflection of a source through the road centre.

    Driving directions swap, lane ``l`` becomes ``7 - l`` and x runs the
    other way, so a left-to-right scene becomes its right-to-left twin.
    """

    def __init__(self, inner: TrafficSource):
        self.inner = inner
        self.track = inner.track
        self.frame_rate = inner.frame_rate

    def __len__(self) -> int:
        return len(self.inner)

    def frame(self, index: int) -> TrajectoryFrame:
        f = self.inner.frame(index)
        return TrajectoryFrame(f.frame_index, tuple(mirror_vehicle(v, self.track) for v in f.vehicles))

    def vehicles_near(self, index: int, x: float, reach: float) -> Tuple[VehicleState, ...]:
        inner = self.inner.vehicles_near(index, self.track.track_length - x, reach)
        return tuple(mirror_vehicle(v, self.track) for v in inner)

    @property
    def extent(self) -> Tuple[float, float]:
        lo, hi = self.inner.extent
        return (self.track.track_length - hi, self.track.track_length - lo)


def mirror_direction(source: TrafficSource) -> TrafficSource:
    # unwrapping keeps mirror(mirror(s)) exactly s, with no float round trip
    if isinstance(source, MirroredSource):
        return source.inner
    return MirroredSource(source)


class EmptySource(TrafficSource):
    def __init__(self, duration_frames: int, track: Optional[TrackConfig] = None):
        self.track = track or TrackConfig()
        self.frame_rate = 1.0 / self.track.dt
        self.duration_frames = duration_frames

    def __len__(self) -> int:
        return self.duration_frames

    def frame(self, index: int) -> TrajectoryFrame:
        self._check(index)
        return TrajectoryFrame(index, ())

    @property
    def extent(self) -> Tuple[float, float]:
        return (0.0, self.track.track_length)
