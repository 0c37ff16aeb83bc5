"""Deterministic rule policies: background traffic, naive focal drivers and oracle confederates.

Every policy is a pure function of (world, dialog, params). Oracles get full
state access and talk in short keyword-led messages ("hold: ...",
"request: ...") so their partners can parse them without a language model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..world.commands import ChangeLaneLeft, ChangeLaneRight, Go, HighLevelCommand, Stop
from ..world.kinematics import B_MAX, DECISION_INTERVAL
from .base import AgentDecision, DecisionContext, Policy


class UnknownPolicy(KeyError):
    pass


REGISTRY: dict = {}


def register(name):
    def deco(fn):
        REGISTRY[name] = fn
        return fn
    return deco


# ---------------------------------------------------------------- helpers

def lane_s(world, veh, lane_id=None) -> float:
    lane = world.map.lane(veh.lane_id if lane_id is None else lane_id)
    return lane.centerline.project(veh.x, veh.y).s


def heard(ctx: DecisionContext, sender: int, *prefixes) -> str | None:
    """Latest message text from ``sender`` if it starts with one of ``prefixes``."""
    env = ctx.dialog.latest_from(sender)
    if env is None:
        return None
    text = env.text.strip().lower()
    return env.text if any(text.startswith(p) for p in prefixes) else None


def present(world, vid):
    return world.vehicle(vid) if world.has_vehicle(vid) and world.vehicle(vid).status != "arrived" else None


def approach_stop(d: float, v: float, cruise: float) -> HighLevelCommand | None:
    """Command that brings the front bumper to rest ``d`` meters ahead.

    Returns None when the stop is no longer feasible at full braking.
    """
    brake = v * v / (2 * B_MAX)
    if d < brake - 0.5 and v > 0.5:
        return None
    if d <= brake + v * DECISION_INTERVAL + 0.5:
        return Stop
    return Go(cruise)


def leader(world, veh, lateral=None):
    """Nearest vehicle ahead in ``veh``'s lane: (bumper gap, leader) or (inf, None)."""
    lane = world.map.lane(veh.lane_id)
    me = lane.centerline.project(veh.x, veh.y).s
    lateral = lane.width / 2 + 1.0 if lateral is None else lateral
    best = (math.inf, None)
    for o in world.vehicles:
        if o.id == veh.id or o.status == "arrived":
            continue
        p = lane.centerline.project(o.x, o.y)
        if abs(p.offset) > lateral or p.s <= me or p.s - me > 200:
            continue
        gap = p.s - me - veh.half_extents[0] - o.half_extents[0]
        if gap < best[0]:
            best = (gap, o)
    return best


def gap_ok(world, veh, target_lane: int, margin=3.0, horizon=2.0) -> bool:
    """True when a lane change into ``target_lane`` leaves room ahead and behind."""
    lane = world.map.lane(target_lane)
    me = lane.centerline.project(veh.x, veh.y).s
    for o in world.vehicles:
        if o.id == veh.id or o.status == "arrived":
            continue
        if o.lane_id != target_lane and o.target_lane_id != target_lane:
            continue
        ds = lane.centerline.project(o.x, o.y).s - me
        need = veh.half_extents[0] + o.half_extents[0] + margin
        if ds >= 0:
            # the car ahead may brake while we are still moving across
            need += max(0.0, veh.speed - o.speed + 2.0) * horizon
        else:
            need += max(0.0, o.speed - veh.speed) * horizon
        if abs(ds) < need:
            return False
    return True


def _p(ctx, key, default=None):
    return ctx.agent.params.get(key, default)


def _cruise(ctx):
    return float(_p(ctx, "cruise", ctx.agent.speed or 8.0))


# ------------------------------------------------------------ background

@register("stationary")
def stationary(ctx):
    return AgentDecision(Stop)


@register("constant_speed")
def constant_speed(ctx):
    v = _cruise(ctx)
    return AgentDecision(Go(v) if v > 0 else Stop)


@register("red_light_runner")
def red_light_runner(ctx):
    """Holds its speed straight through the junction whatever the signal says."""
    return AgentDecision(Go(_cruise(ctx)))


@register("traffic_flow")
def traffic_flow(ctx):
    """Gap-keeping follower (intelligent-driver-model acceleration, applied per decision)."""
    veh = ctx.vehicle
    v0 = _cruise(ctx)
    headway, s0, a, b = 1.2, 3.0, 2.0, 3.0
    gap, lead = leader(ctx.world, veh)
    v = veh.speed
    acc = a * (1 - (v / v0) ** 4)
    if lead is not None:
        dv = v - lead.speed
        s_star = s0 + max(0.0, v * headway + v * dv / (2 * math.sqrt(a * b)))
        acc -= a * (s_star / max(gap, 0.1)) ** 2
    target = min(max(v + acc, 0.0), v0)
    if target < 0.5 and gap < s0 + 2.0:
        return AgentDecision(Stop)
    return AgentDecision(Go(max(target, 0.5)))


# ---------------------------------------------------------------- naive

@register("always_go")
def always_go(ctx):
    """Route follower that never waits for anyone."""
    return AgentDecision(Go(_cruise(ctx)))


def _overtake(ctx, open_: bool):
    """Pass a stopped obstacle using the oncoming lane; waits behind it while ``open_`` is false."""
    world, veh = ctx.world, ctx.vehicle
    cruise = _cruise(ctx)
    home = int(_p(ctx, "home_lane", ctx.agent.lane))
    obstacle = world.vehicle(int(_p(ctx, "obstacle")))
    pull_gap = float(_p(ctx, "pull_gap", 12.0))
    hold_gap = float(_p(ctx, "hold_gap", 8.0))
    margin = float(_p(ctx, "return_margin", 4.0))
    s_me = lane_s(world, veh, home)
    s_ob = lane_s(world, obstacle, home)
    gap = s_ob - obstacle.half_extents[0] - (s_me + veh.half_extents[0])
    passed = s_me - veh.half_extents[0] > s_ob + obstacle.half_extents[0] + margin
    if veh.target_lane_id is not None:
        return Go(cruise)
    if veh.lane_id == home:
        if passed or gap > pull_gap:
            return Go(cruise)
        if not open_:
            return approach_stop(gap - hold_gap, veh.speed, cruise) or Stop
        if veh.speed < 1.0:
            return Go(cruise)
        return ChangeLaneLeft
    return ChangeLaneRight if passed else Go(cruise)


@register("naive_overtake")
def naive_overtake(ctx):
    return AgentDecision(_overtake(ctx, True))


@register("naive_lane_change")
def naive_lane_change(ctx):
    """Changes into ``target_lane`` as soon as it reaches ``change_from`` along its lane."""
    veh = ctx.vehicle
    target = int(_p(ctx, "target_lane"))
    if veh.lane_id != target and veh.target_lane_id is None and lane_s(ctx.world, veh) >= float(_p(ctx, "change_from", 0.0)):
        return AgentDecision(ChangeLaneLeft if _p(ctx, "side", "left") == "left" else ChangeLaneRight)
    return AgentDecision(Go(_cruise(ctx)))


# --------------------------------------------------------------- oracles

@register("conflict_monitor")
def conflict_monitor(ctx):
    """Stationary lookout: "hold" while a vehicle on a watched lane has yet to clear the conflict point."""
    world = ctx.world
    cx, cy = _p(ctx, "conflict_point")
    clear = float(_p(ctx, "clear_margin", 4.0))
    watch = float(_p(ctx, "watch_range", 120.0))
    nearest = None
    for lid in _p(ctx, "watch_lanes"):
        lane = world.map.lane(int(lid))
        sc = lane.centerline.project(cx, cy).s
        for o in world.vehicles:
            if o.id == ctx.agent_id or not o.active or o.lane_id != lane.id or o.speed < 0.1:
                continue
            s = lane.centerline.project(o.x, o.y).s
            to_go = sc - (s + o.half_extents[0])
            if s - o.half_extents[0] <= sc + clear and to_go <= watch:
                nearest = to_go if nearest is None else min(nearest, to_go)
    if nearest is not None:
        text = _p(ctx, "hold_text", "hold: vehicle approaching the conflict area, {distance:.0f} m away")
        return AgentDecision(Stop, text.format(distance=max(nearest, 0.0)))
    return AgentDecision(Stop, _p(ctx, "clear_text", "go: the conflict area is clear"))


@register("gated_overtake")
def gated_overtake(ctx):
    """Waits behind the obstacle until the lookout says "go"."""
    monitor = int(_p(ctx, "monitor"))
    open_ = heard(ctx, monitor, "go", "clear") is not None
    return AgentDecision(_overtake(ctx, open_))


@register("gated_go")
def gated_go(ctx):
    """Route follower that stops at a line while the lookout says "hold"."""
    veh = ctx.vehicle
    cruise = _cruise(ctx)
    hold = heard(ctx, int(_p(ctx, "monitor")), "hold") is not None
    stop_lane = int(_p(ctx, "stop_lane"))
    if hold and veh.lane_id == stop_lane:
        d = float(_p(ctx, "stop_s")) - (lane_s(ctx.world, veh) + veh.half_extents[0])
        cmd = approach_stop(d, veh.speed, cruise)
        return AgentDecision(cmd or Go(cruise))
    return AgentDecision(Go(cruise))


@register("negotiating_overtake")
def negotiating_overtake(ctx):
    """Asks the oncoming car to wait, overtakes once it has stopped, then reports back."""
    world, veh = ctx.world, ctx.vehicle
    partner = present(world, int(_p(ctx, "partner")))
    obstacle = world.vehicle(int(_p(ctx, "obstacle")))
    home = int(_p(ctx, "home_lane", ctx.agent.lane))
    s_me = lane_s(world, veh, home)
    s_ob = lane_s(world, obstacle, home)
    done = veh.lane_id == home and veh.target_lane_id is None and s_me - veh.half_extents[0] > s_ob + obstacle.half_extents[0]
    if partner is None or not partner.active:
        clear = True
    else:
        s_pa = lane_s(world, partner, home)
        passed_me = s_pa + partner.half_extents[0] < s_me - veh.half_extents[0] - 3.0
        # far enough away that the whole pass fits in before it arrives
        far = s_pa - partner.half_extents[0] - (s_ob + obstacle.half_extents[0]) > partner.speed * 8.0 + 20.0
        clear = passed_me or far
    ack = partner is not None and heard(ctx, partner.id, "yield") is not None and partner.speed < 0.2
    cmd = _overtake(ctx, clear or ack)
    if done:
        msg = "done: I have passed the truck and I am back in my lane. You can go."
    else:
        msg = ("request: I am behind the stopped truck and need your lane to pass it. "
               "Please stop before the truck and wait until I am back in my lane.")
    return AgentDecision(cmd, msg)


@register("yielding_oncoming")
def yielding_oncoming(ctx):
    """Stops short of the obstacle when asked, resumes when the overtaker is done."""
    world, veh = ctx.world, ctx.vehicle
    cruise = _cruise(ctx)
    req_id = int(_p(ctx, "requester"))
    requester = present(world, req_id)
    obstacle = world.vehicle(int(_p(ctx, "obstacle")))
    home = int(_p(ctx, "requester_lane"))
    if requester is None or not requester.active:
        return AgentDecision(Go(cruise))
    s_rq = lane_s(world, requester, home)
    s_ob = lane_s(world, obstacle, home)
    back_home = (requester.lane_id == home and requester.target_lane_id is None
                 and s_rq - requester.half_extents[0] > s_ob + obstacle.half_extents[0])
    if back_home or heard(ctx, req_id, "done"):
        return AgentDecision(Go(cruise))
    if heard(ctx, req_id, "request") is None and veh.speed > 0.2:
        return AgentDecision(Go(cruise))
    # distance from my front bumper to the hold point beyond the obstacle, along my lane
    my_lane = world.map.lane(veh.lane_id)
    s_me = my_lane.centerline.project(veh.x, veh.y).s
    s_hold = my_lane.centerline.project(obstacle.x, obstacle.y).s - obstacle.half_extents[0] - float(_p(ctx, "hold_margin", 15.0))
    d = s_hold - (s_me + veh.half_extents[0])
    cmd = approach_stop(d, veh.speed, cruise)
    if cmd is None:
        return AgentDecision(Go(cruise), "cannot stop in time, passing first; wait for me")
    return AgentDecision(cmd, "yield: I will stop before the truck and wait for you to pass.")


@register("merge_requester")
def merge_requester(ctx):
    """Asks the target-lane car for a gap and changes lanes once the gap is safe."""
    world, veh = ctx.world, ctx.vehicle
    cruise = _cruise(ctx)
    target = int(_p(ctx, "target_lane"))
    side = ChangeLaneLeft if _p(ctx, "side", "left") == "left" else ChangeLaneRight
    if veh.lane_id == target:
        return AgentDecision(Go(cruise))
    if veh.target_lane_id is not None:
        return AgentDecision(Go(cruise), "merging now")
    msg = "request: I need to merge into your lane. Please slow down and let me in ahead of you."
    s = lane_s(world, veh)
    if s >= float(_p(ctx, "change_from", 0.0)) and gap_ok(world, veh, target):
        return AgentDecision(side, "merging now")
    lane_end = _p(ctx, "lane_end")
    if lane_end is not None:
        cmd = approach_stop(float(lane_end) - (s + veh.half_extents[0]) - 2.0, veh.speed, cruise)
        return AgentDecision(cmd or Stop, msg)
    return AgentDecision(Go(cruise), msg)


@register("gap_yielder")
def gap_yielder(ctx):
    """Slows to open a gap ahead of itself while a neighbor asks to merge."""
    world, veh = ctx.world, ctx.vehicle
    cruise = _cruise(ctx)
    rid = int(_p(ctx, "requester"))
    requester = present(world, rid)
    if requester is None or not requester.active:
        return AgentDecision(Go(cruise))
    if requester.lane_id == veh.lane_id and requester.target_lane_id is None:
        return AgentDecision(Go(cruise))
    lane = world.map.lane(veh.lane_id)
    behind = lane.centerline.project(requester.x, requester.y).s < lane.centerline.project(veh.x, veh.y).s - 2 * veh.half_extents[0]
    if behind:
        # already clearly behind me: it can slot in after me, no need to brake
        return AgentDecision(Go(cruise))
    if heard(ctx, rid, "request", "merging") is not None:
        return AgentDecision(Go(float(_p(ctx, "yield_speed", cruise - 5.0))),
                             "yield: slowing down, merge ahead of me.")
    return AgentDecision(Go(cruise))


# -------------------------------------------------------------- binding

def scripted_policy(name: str, ctx: DecisionContext) -> AgentDecision:
    try:
        fn = REGISTRY[name]
    except KeyError:
        raise UnknownPolicy(f"no scripted policy named {name!r}") from None
    dec = fn(ctx)
    if not ctx.can_speak:
        dec.message = None
    return dec


@dataclass
class ScriptedPolicy(Policy):
    name: str
    kind: str = field(default="scripted")

    def __post_init__(self):
        if self.name not in REGISTRY:
            raise UnknownPolicy(f"no scripted policy named {self.name!r}")

    def decide(self, ctx: DecisionContext) -> AgentDecision:
        return scripted_policy(self.name, ctx)
