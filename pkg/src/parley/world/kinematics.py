"""Bicycle kinematics, the closed-loop command controller, and collision checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .commands import (
    CHANGE_LEFT,
    GO,
    SLOW_DOWN,
    SPEED_UP,
    STOP,
    HighLevelCommand,
    RejectedCommand,
)
from .geometry import obb_overlap, wrap_angle
from .mapmodel import MapModel
from .state import ControlInput, VehicleState, WorldState

DT = 0.05
K_STEPS = 10
DECISION_INTERVAL = DT * K_STEPS
A_MAX = 3.0
B_MAX = 6.0
WHEELBASE = 2.7
MAX_STEER = 0.6  # rad at steer = 1
SPEED_DELTA = 2.0
LANE_CHANGE_TOL = 0.2
SPEED_GAIN = 2.0

ZERO = ControlInput(0.0, 0.0, 0.0)
FULL_BRAKE = ControlInput(0.0, 1.0, 0.0)


@dataclass(frozen=True, slots=True)
class CollisionEvent:
    a: int
    b: int
    time: float
    step: int

    def involves(self, vid: int) -> bool:
        return vid == self.a or vid == self.b

    def other(self, vid: int) -> int:
        return self.b if vid == self.a else self.a


def apply_command(vehicle: VehicleState, cmd: HighLevelCommand, world_map: MapModel) -> VehicleState:
    """Load a command into the vehicle's maneuver state.

    Longitudinal commands set the speed target; lane changes set a target lane
    and leave the speed target alone. A lane change persists until completion,
    and the opposite lane change aborts it.
    """
    lane = world_map.lane(vehicle.lane_id)
    limit = lane.speed_limit
    if cmd.kind == GO:
        return replace(vehicle, target_speed=min(cmd.target_speed, limit), hard_stop=False)
    if cmd.kind == STOP:
        return replace(vehicle, target_speed=0.0, hard_stop=True)
    if cmd.kind == SLOW_DOWN:
        return replace(vehicle, target_speed=max(vehicle.speed - SPEED_DELTA, 0.0), hard_stop=False)
    if cmd.kind == SPEED_UP:
        return replace(vehicle, target_speed=min(vehicle.speed + SPEED_DELTA, limit), hard_stop=False)
    want = lane.left_neighbor if cmd.kind == CHANGE_LEFT else lane.right_neighbor
    if vehicle.target_lane_id is not None:
        if vehicle.target_lane_id == want:
            return vehicle
        return replace(vehicle, target_lane_id=None)
    if want is None:
        side = "left" if cmd.kind == CHANGE_LEFT else "right"
        raise RejectedCommand(f"vehicle {vehicle.id}: no {side} neighbor of lane {lane.id}")
    return replace(vehicle, target_lane_id=want)


def _next_lane(vehicle: VehicleState, lane, world_map: MapModel):
    if not lane.successors:
        return None
    for lid in vehicle.route:
        if lid in lane.successors:
            return world_map.lane(lid)
    return world_map.lane(lane.successors[0])


def _lookahead(v: float) -> float:
    return max(4.0, 0.9 * v)


def control_for(vehicle: VehicleState, world_map: MapModel) -> ControlInput:
    """One step of the closed-loop controller: speed P-control plus pure pursuit."""
    v = vehicle.speed
    if vehicle.hard_stop:
        throttle, brake = 0.0, 1.0
    else:
        err = vehicle.target_speed - v
        a = SPEED_GAIN * err
        if a > 0.0:
            throttle, brake = min(a / A_MAX, 1.0), 0.0
        elif a < 0.0:
            throttle, brake = 0.0, min(-a / B_MAX, 1.0)
        else:
            throttle, brake = 0.0, 0.0
    if v <= 1e-9:
        return ControlInput(throttle, brake, 0.0)

    lane = world_map.lane(vehicle.target_lane_id if vehicle.target_lane_id is not None else vehicle.lane_id)
    line = lane.centerline
    proj = line.project(vehicle.x, vehicle.y)
    reverse = math.cos(vehicle.heading - proj.heading) < 0.0
    ld = _lookahead(v)
    if reverse:
        tx, ty, _ = line.point_at(proj.s - ld)
    else:
        s_t = proj.s + ld
        nxt = _next_lane(vehicle, lane, world_map) if s_t > line.length else None
        if nxt is not None:
            tx, ty, _ = nxt.centerline.point_at(s_t - line.length)
        else:
            tx, ty, _ = line.point_at(s_t)
    alpha = wrap_angle(math.atan2(ty - vehicle.y, tx - vehicle.x) - vehicle.heading)
    delta = math.atan2(2.0 * WHEELBASE * math.sin(alpha), ld)
    steer = max(-1.0, min(1.0, delta / MAX_STEER))
    return ControlInput(throttle, brake, steer)


def integrate(vehicle: VehicleState, ctrl: ControlInput, world_map: MapModel, dt: float = DT) -> VehicleState:
    """Advance one vehicle by one step and update its lane registration."""
    v = vehicle.speed
    h = vehicle.heading
    x = vehicle.x + v * math.cos(h) * dt
    y = vehicle.y + v * math.sin(h) * dt
    h = wrap_angle(h + v / WHEELBASE * math.tan(ctrl.steer * MAX_STEER) * dt)
    accel = A_MAX * ctrl.throttle - B_MAX * ctrl.brake
    speed = min(max(v + accel * dt, 0.0), vehicle.max_speed)

    lane_id = vehicle.lane_id
    target = vehicle.target_lane_id
    if target is not None:
        if abs(world_map.lane(target).centerline.project(x, y).offset) < LANE_CHANGE_TOL:
            lane_id, target = target, None
    else:
        lane = world_map.lane(lane_id)
        proj = lane.centerline.project(x, y)
        if proj.s > lane.length and math.cos(h - proj.heading) > 0.0:
            nxt = _next_lane(vehicle, lane, world_map)
            if nxt is not None:
                lane_id = nxt.id
    return replace(vehicle, x=x, y=y, heading=h, speed=speed, lane_id=lane_id, target_lane_id=target)


def step_simulation(world: WorldState, controls: dict) -> WorldState:
    """Advance the world one simulation step.

    ``controls`` maps every active vehicle id to a ControlInput. Crashed and
    arrived vehicles are frozen.
    """
    out = []
    for veh in world.vehicles:
        if not veh.active:
            out.append(veh)
            continue
        try:
            ctrl = controls[veh.id]
        except KeyError:
            raise ValueError(f"no control for active vehicle {veh.id}") from None
        out.append(integrate(veh, ctrl, world.map, world.dt))
    return world.with_vehicles(out, step=world.step + 1)


def expand_command(cmd: HighLevelCommand, vehicle: VehicleState, world_map: MapModel, k: int = K_STEPS):
    """The k low-level controls the controller produces for ``cmd``.

    Rolls the vehicle forward in isolation, re-reading its state each step the
    same way the episode loop does.
    """
    veh = apply_command(vehicle, cmd, world_map)
    controls = []
    for _ in range(k):
        ctrl = control_for(veh, world_map)
        controls.append(ctrl)
        veh = integrate(veh, ctrl, world_map)
    return controls


def detect_collisions(world: WorldState) -> list[CollisionEvent]:
    """One event per overlapping pair, ids ordered, among vehicles on the road.

    Pairs of two wrecks are skipped; a moving car hitting a wreck counts.
    """
    present = sorted(world.present(), key=lambda v: v.id)
    events = []
    for i, a in enumerate(present):
        ra = a.rect
        for b in present[i + 1:]:
            if not (a.active or b.active):
                continue
            if obb_overlap(ra, b.rect):
                events.append(CollisionEvent(a.id, b.id, round(world.time, 6), world.step))
    return events
