"""Safe-action shield: scene facts in, permitted maneuvers out.

The rule-engine path (:class:`Shield`) and the purely geometric path
(:func:`occupancy`, :func:`geometric_safe_actions`) are kept independent so
each can audit the other.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, FrozenSet, List, Optional, Tuple

from .logic import (
    Atom,
    Clause,
    Compound,
    FactStore,
    LogicError,
    Num,
    RuleBase,
    Var,
    find_all,
    parse_rules,
)
from .road import (
    Action,
    Adjacency,
    Direction,
    EnvSnapshot,
    TrackConfig,
    VehicleState,
    default_adjacency,
    lateral_side,
)


class Sector(str, enum.Enum):
    FRONT = "front"
    FRONT_RIGHT = "front_right"
    RIGHT = "right"
    BACK_RIGHT = "back_right"
    BACK = "back"
    BACK_LEFT = "back_left"
    LEFT = "left"
    FRONT_LEFT = "front_left"


SECTORS: Tuple[Sector, ...] = tuple(Sector)


class ShieldError(RuntimeError):
    pass


class OutOfRange(ValueError):
    pass


@dataclass
class ShieldConfig:
    radar_range: float = 100.0
    # diagonal neighbours closer than max(min_clearance, headway * ego speed)
    # block a lane change; min_clearance >= radar_range reproduces the
    # stricter "no vehicle anywhere in the side sectors" reading
    min_clearance: float = 10.0
    headway: float = 1.0
    # seconds of closing speed added to the margin; about one lane change
    closing_horizon: float = 3.0
    adjacency: Optional[Adjacency] = None

    def __post_init__(self):
        if self.radar_range <= 0:
            raise ValueError("radar_range must be positive")
        if min(self.min_clearance, self.headway, self.closing_horizon) < 0:
            raise ValueError("clearance parameters must be non-negative")
        if self.adjacency is not None:
            self.adjacency = {
                Direction(d): {int(k): tuple(v) for k, v in row.items()} for d, row in self.adjacency.items()
            }

    def adjacency_for(self, track: TrackConfig) -> Adjacency:
        return self.adjacency if self.adjacency is not None else default_adjacency(track)


def euclidean(a: VehicleState, b: VehicleState) -> float:
    # same operation order as the rule file's distance/3 so both agree at the range boundary
    dx, dy = b.x - a.x, b.y - a.y
    return math.sqrt(dx * dx + dy * dy)


def sector_of(ego: VehicleState, tv: VehicleState, radar_range: float = 100.0) -> Optional[Sector]:
    """Sector of ``tv`` around ``ego``; None when it is two or more lanes away."""
    if euclidean(ego, tv) >= radar_range:
        raise OutOfRange(f"vehicle {tv.id} is outside radar range")
    side = lateral_side(ego.direction, ego.lane, tv.lane)
    if side is None:
        return None
    gap = ego.direction.heading * (tv.x - ego.x)
    if side == "same":
        return Sector.FRONT if gap >= 0 else Sector.BACK
    reach = (ego.length + tv.length) / 2
    if abs(gap) < reach:
        return Sector.LEFT if side == "left" else Sector.RIGHT
    if gap >= reach:
        return Sector.FRONT_LEFT if side == "left" else Sector.FRONT_RIGHT
    return Sector.BACK_LEFT if side == "left" else Sector.BACK_RIGHT


@dataclass(frozen=True)
class SectorOccupancy:
    busy: Dict[Sector, bool]
    nearest_distance: Dict[Sector, float]
    nearest_vehicle: Dict[Sector, Optional[VehicleState]]
    # every (distance, vehicle) per sector, nearest first
    members: Dict[Sector, Tuple[Tuple[float, VehicleState], ...]] = field(repr=False)


def occupancy(snapshot: EnvSnapshot, cfg: ShieldConfig) -> SectorOccupancy:
    ego, r = snapshot.ego, cfg.radar_range
    found: Dict[Sector, List[Tuple[float, VehicleState]]] = {s: [] for s in SECTORS}
    for tv in snapshot.traffic:
        d = euclidean(ego, tv)
        if d >= r:
            continue
        s = sector_of(ego, tv, r)
        if s is not None:
            found[s].append((d, tv))
    members = {s: tuple(sorted(v, key=lambda p: p[0])) for s, v in found.items()}
    return SectorOccupancy(
        busy={s: bool(members[s]) for s in SECTORS},
        nearest_distance={s: members[s][0][0] if members[s] else r for s in SECTORS},
        nearest_vehicle={s: members[s][0][1] if members[s] else None for s in SECTORS},
        members=members,
    )


def _blocking(ego: VehicleState, members, cfg: ShieldConfig, ahead: bool) -> bool:
    v0 = ego.speed
    base = max(cfg.min_clearance, cfg.headway * v0)
    for d, tv in members:
        v1 = tv.vx * ego.direction.heading
        closing = max(0.0, v0 - v1) if ahead else max(0.0, v1 - v0)
        if d <= base + cfg.closing_horizon * closing:
            return True
    return False


def geometric_safe_actions(snapshot: EnvSnapshot, cfg: ShieldConfig, track: TrackConfig) -> FrozenSet[Action]:
    """Reference safe set computed directly from sector geometry."""
    ego = snapshot.ego
    occ = occupancy(snapshot, cfg)
    left, right = cfg.adjacency_for(track)[ego.direction].get(ego.lane, (None, None))
    out = {Action.LANE_KEEPING}
    if (
        left is not None
        and not occ.busy[Sector.LEFT]
        and not _blocking(ego, occ.members[Sector.FRONT_LEFT], cfg, ahead=True)
        and not _blocking(ego, occ.members[Sector.BACK_LEFT], cfg, ahead=False)
    ):
        out.add(Action.LEFT_LANE_CHANGE)
    if (
        right is not None
        and not occ.busy[Sector.RIGHT]
        and not _blocking(ego, occ.members[Sector.FRONT_RIGHT], cfg, ahead=True)
        and not _blocking(ego, occ.members[Sector.BACK_RIGHT], cfg, ahead=False)
    ):
        out.add(Action.RIGHT_LANE_CHANGE)
    return frozenset(out)


def load_rules_text(path: Optional[str] = None) -> str:
    if path is None:
        return resources.files("drlsl").joinpath("rules/highway.rules").read_text(encoding="utf-8")
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _pair(a: float, b: float) -> Compound:
    return Compound("c", (Num(float(a)), Num(float(b))))


def vehicle_fact(v: VehicleState, ego: bool = False) -> Compound:
    return Compound(
        "vehicle",
        (
            Atom("ego") if ego else Num(float(v.id)),
            Num(float(v.lane)),
            _pair(v.x, v.y),
            _pair(v.length, v.width),
            _pair(v.vx, v.vy),
        ),
    )


def config_clauses(cfg: ShieldConfig, track: TrackConfig) -> List[Clause]:
    out = [
        Clause(Compound("radar_range", (Num(cfg.radar_range),))),
        Clause(
            Compound(
                "clearance",
                (Num(cfg.min_clearance), Num(cfg.headway), Num(cfg.closing_horizon)),
            )
        ),
    ]
    for direction, row in cfg.adjacency_for(track).items():
        for lane, (left, right) in sorted(row.items()):
            if left is not None:
                out.append(Clause(Compound("left_neighbor", (Atom(direction.value), Num(lane), Num(left)))))
            if right is not None:
                out.append(Clause(Compound("right_neighbor", (Atom(direction.value), Num(lane), Num(right)))))
    return out


_ACTION = Var("Action")
_SAFE_GOAL = Compound("safe_actions", (_ACTION,))


class Shield:
    """Runs the highway rule base over per-step scene facts."""

    def __init__(
        self,
        cfg: Optional[ShieldConfig] = None,
        track: Optional[TrackConfig] = None,
        rules_text: Optional[str] = None,
        depth_limit: int = 512,
    ):
        self.cfg = cfg or ShieldConfig()
        self.track = track or TrackConfig()
        text = load_rules_text() if rules_text is None else rules_text
        self.rule_base: RuleBase = parse_rules(text).extend(config_clauses(self.cfg, self.track))
        self.depth_limit = depth_limit
        self.facts = FactStore()

    def emit_facts(self, snapshot: EnvSnapshot, fs: Optional[FactStore] = None) -> FactStore:
        return emit_facts(snapshot, self.cfg, self.track, fs)

    def query(self, goal, snapshot: EnvSnapshot):
        self.emit_facts(snapshot, self.facts)
        return find_all(goal, goal, self.rule_base, self.facts, self.depth_limit)

    def safe_actions(self, snapshot: EnvSnapshot) -> FrozenSet[Action]:
        self.emit_facts(snapshot, self.facts)
        try:
            found = find_all(_ACTION, _SAFE_GOAL, self.rule_base, self.facts, self.depth_limit)
        except LogicError as exc:
            raise ShieldError(f"rule evaluation failed: {exc}") from exc
        out = set()
        for t in found:
            if not isinstance(t, Atom):
                raise ShieldError(f"safe_actions produced a non-action term {t}")
            try:
                out.add(Action.from_symbol(t.name))
            except KeyError:
                raise ShieldError(f"unknown action {t.name}") from None
        if Action.LANE_KEEPING not in out:
            raise ShieldError("rule base did not permit lane_keeping")
        return frozenset(out)


def emit_facts(
    snapshot: EnvSnapshot,
    cfg: Optional[ShieldConfig] = None,
    track: Optional[TrackConfig] = None,
    fs: Optional[FactStore] = None,
) -> FactStore:
    """Scene facts for one step: vehicles in radar range plus road facts."""
    cfg = cfg or ShieldConfig()
    track = track or TrackConfig()
    fs = fs if fs is not None else FactStore()
    fs.clear()
    ego = snapshot.ego
    fs.add(vehicle_fact(ego, ego=True))
    for tv in snapshot.traffic:
        if euclidean(ego, tv) < cfg.radar_range:
            fs.add(vehicle_fact(tv))
    fs.add(Compound("direction", (Atom("ego"), Atom(ego.direction.value))))
    fs.add(Compound("lane_count", (Num(float(track.num_lanes)),)))
    for lane in track.lanes:
        fs.add(Compound("speed_limit", (Num(float(lane)), Num(track.speed_limit(lane)))))
    return fs


def safe_action_set(snapshot: EnvSnapshot, shield: Shield) -> FrozenSet[Action]:
    return shield.safe_actions(snapshot)
