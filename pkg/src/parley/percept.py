"""Rule-based, partially observable captioner.

Each agent sees only vehicles whose center is within sensing range and not
hidden behind a third vehicle; the visible scene is turned into fixed-order
factual text.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .world.geometry import segment_hits_rect, wrap_angle
from .world.scenario import ScenarioSpec
from .world.state import VehicleState, WorldState

SENSING_RADIUS = 150.0


def line_of_sight(world: WorldState, observer: VehicleState, target: VehicleState,
                  sensing_radius: float = SENSING_RADIUS) -> bool:
    """Center-to-center visibility, blocked by any third vehicle's rectangle."""
    if observer.id == target.id:
        raise ValueError("observer and target must differ")
    if observer.distance_to(target) > sensing_radius:
        return False
    p0, p1 = observer.position, target.position
    for v in world.vehicles:
        if v.id == observer.id or v.id == target.id or v.status == "arrived":
            continue
        if segment_hits_rect(p0, p1, v.rect):
            return False
    return True


def _r(x: float) -> float:
    # one decimal, with -0.0 folded to 0.0 so text is stable
    return round(x, 1) + 0.0


@dataclass(frozen=True)
class OtherFact:
    tag: str  # "Vehicle 102" or "an unconnected vehicle"
    connected: bool
    lane: int
    ahead: float  # meters along ego heading, negative = behind
    left: float  # meters to the ego's left, negative = right
    distance: float
    speed: float
    heading_class: str
    status: str


@dataclass(frozen=True)
class VisibleFactSet:
    agent_id: int
    label: str
    task: str
    lane: int
    lane_label: str
    speed: float
    lane_s: float
    lane_remaining: float
    changing_to: int | None
    goal_distance: float | None
    goal_bearing: str | None
    others: tuple[OtherFact, ...]
    lane_facts: tuple[str, ...]
    signal_facts: tuple[str, ...]

    @property
    def visible_ids(self) -> tuple[str, ...]:
        return tuple(o.tag for o in self.others)


@dataclass(frozen=True)
class TextObservation:
    text: str
    facts: VisibleFactSet
    agent_id: int
    decision_step: int

    @property
    def others_present(self) -> bool:
        return bool(self.facts.others)


def _heading_class(ego: VehicleState, other: VehicleState) -> str:
    if other.speed < 0.1:
        return "stationary"
    d = wrap_angle(other.heading - ego.heading)
    if abs(d) <= math.pi / 4:
        return "same direction"
    if abs(d) >= 3 * math.pi / 4:
        return "oncoming"
    return "crossing from your right" if d > 0 else "crossing from your left"


def _bearing(dx_ahead: float, dy_left: float) -> str:
    ang = math.degrees(math.atan2(dy_left, dx_ahead))
    if abs(ang) <= 20:
        return "ahead"
    if abs(ang) >= 160:
        return "behind"
    if ang > 0:
        return "ahead to your left" if ang < 90 else "behind to your left"
    return "ahead to your right" if ang > -90 else "behind to your right"


def _lane_neighbors_text(world: WorldState, lane_id: int) -> list[str]:
    lane = world.map.lane(lane_id)
    out = []
    for side, nid in (("left", lane.left_neighbor), ("right", lane.right_neighbor)):
        if nid is None:
            out.append(f"There is no lane to the {side} of lane {lane_id}.")
            continue
        other = world.map.lane(nid)
        same = math.cos(other.centerline.heading_at(0.0) - lane.centerline.heading_at(0.0)) > 0
        direction = "same direction" if same else "opposite direction"
        out.append(f"Lane {nid} ({other.label}) is to the {side} of lane {lane_id}, traffic in the {direction}.")
    return out


def collect_facts(world: WorldState, agent_id: int, spec: ScenarioSpec) -> VisibleFactSet:
    ego = world.vehicle(agent_id)
    aspec = spec.agent(agent_id)
    radius = spec.sensing_radius
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    lane = world.map.lane(ego.lane_id)
    proj = lane.centerline.project(ego.x, ego.y)
    others = []
    for v in world.vehicles:
        if v.id == agent_id or v.status == "arrived":
            continue
        if not line_of_sight(world, ego, v, radius):
            continue
        dx, dy = v.x - ego.x, v.y - ego.y
        others.append(
            OtherFact(
                tag=f"Vehicle {v.id}" if v.comm_capable else "an unconnected vehicle",
                connected=v.comm_capable,
                lane=v.lane_id,
                ahead=_r(dx * c + dy * s),
                left=_r(-dx * s + dy * c),
                distance=_r(math.hypot(dx, dy)),
                speed=_r(v.speed),
                heading_class=_heading_class(ego, v),
                status=v.status,
            )
        )
    others.sort(key=lambda o: (o.distance, o.ahead, o.left, o.tag))

    goal_distance = goal_bearing = None
    gp = spec.goal_point(agent_id)
    if gp is not None:
        dx, dy = gp[0] - ego.x, gp[1] - ego.y
        goal_distance = _r(math.hypot(dx, dy))
        goal_bearing = _bearing(dx * c + dy * s, -dx * s + dy * c)

    lane_facts = _lane_neighbors_text(world, ego.lane_id)
    jn = world.map.junction_near(ego.x, ego.y, 80.0)
    if jn is not None:
        j, d = jn
        lane_facts.append(
            f"You are inside the {j.label}." if d == 0 else f"The {j.label} is {_r(d)} m away."
        )
    signal_facts = []
    light = world.map.light_for(ego.lane_id)
    if light is not None:
        to_line = light.stop_s - proj.s
        if to_line >= 0:
            state = light.state.replace("_", " ")
            signal_facts.append(f"The traffic light for your lane is {state}; the stop line is {_r(to_line)} m ahead.")
    return VisibleFactSet(
        agent_id=agent_id,
        label=aspec.label,
        task=aspec.task,
        lane=ego.lane_id,
        lane_label=lane.label,
        speed=_r(ego.speed),
        lane_s=_r(proj.s),
        lane_remaining=_r(lane.length - proj.s),
        changing_to=ego.target_lane_id,
        goal_distance=goal_distance,
        goal_bearing=goal_bearing,
        others=tuple(others),
        lane_facts=tuple(lane_facts),
        signal_facts=tuple(signal_facts),
    )


def render(facts: VisibleFactSet) -> str:
    """Caption text; a pure function of the fact set."""
    lines = ["Task:", facts.task or "No task assigned.", "", "Ego state:"]
    lines.append(f"You are Vehicle {facts.agent_id} ({facts.label}).")
    lines.append(f"You are on lane {facts.lane} ({facts.lane_label}), driving at {facts.speed} m/s.")
    lines.append(f"You are {facts.lane_s} m along lane {facts.lane}; {facts.lane_remaining} m of it remain.")
    if facts.changing_to is not None:
        lines.append(f"You are changing into lane {facts.changing_to}.")
    if facts.goal_distance is not None:
        lines.append(f"Your destination is {facts.goal_distance} m away, {facts.goal_bearing}.")
    lines += ["", "Other vehicles you can see:"]
    if not facts.others:
        lines.append("You see no other vehicles.")
    for o in facts.others:
        rel = "ahead" if o.ahead >= 0 else "behind"
        side = "to your left" if o.left >= 0 else "to your right"
        state = " It has crashed." if o.status == "crashed" else ""
        tag = o.tag[0].upper() + o.tag[1:]
        lines.append(
            f"{tag} on lane {o.lane} is {abs(o.ahead)} m {rel} and {abs(o.left)} m {side}, "
            f"{o.distance} m away, moving at {o.speed} m/s ({o.heading_class}).{state}"
        )
    lines += ["", "Road:"]
    lines += list(facts.lane_facts)
    lines += ["", "Signals:"]
    lines += list(facts.signal_facts) or ["No traffic light applies to your lane."]
    return "\n".join(lines)


def caption(world: WorldState, agent_id: int, spec: ScenarioSpec, decision_step: int | None = None) -> TextObservation:
    if not world.has_vehicle(agent_id):
        raise KeyError(f"unknown agent {agent_id}")
    facts = collect_facts(world, agent_id, spec)
    step = decision_step if decision_step is not None else world.step // spec.decision_interval
    return TextObservation(text=render(facts), facts=facts, agent_id=agent_id, decision_step=step)
