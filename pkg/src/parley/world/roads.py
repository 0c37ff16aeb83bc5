"""Road layout builders referenced by scenario files."""
from __future__ import annotations

import math

from .geometry import Polyline
from .mapmodel import Junction, Lane, MapModel, TrafficLight

LANE_W = 3.5
H = LANE_W / 2


def _line(p0, p1):
    return Polyline([p0, p1])


def _arc(center, radius, a0, a1, n=16):
    cx, cy = center
    pts = [
        (cx + radius * math.cos(a0 + (a1 - a0) * i / n), cy + radius * math.sin(a0 + (a1 - a0) * i / n))
        for i in range(n + 1)
    ]
    return Polyline(pts)


def two_lane_road(length=200.0, speed_limit=13.9, **_):
    """Straight two-way road along +x. Lane 1 eastbound, lane -1 westbound."""
    lanes = (
        Lane(1, _line((0.0, -H), (length, -H)), LANE_W, speed_limit, left_neighbor=-1, label="eastbound lane"),
        Lane(-1, _line((length, H), (0.0, H)), LANE_W, speed_limit, right_neighbor=1, label="westbound lane"),
    )
    return MapModel("two_lane_road", lanes)


def _cross_street(reach, speed_limit, box):
    return (
        Lane(10, _line((-reach, -H), (reach, -H)), LANE_W, speed_limit, left_neighbor=-10, label="eastbound cross lane"),
        Lane(-10, _line((reach, H), (box, H)), LANE_W, speed_limit, right_neighbor=10, successors=(-11,),
             label="westbound cross lane"),
        Lane(-11, _line((box, H), (-reach, H)), LANE_W, speed_limit, label="westbound cross lane, west leg"),
    )


def red_light_intersection(reach=90.0, speed_limit=13.9, stop=7.0, **_):
    """North-south road with a left-turn pocket, crossed by an east-west road.

    Lane 1 northbound approach continues as lane 2; lane 3 is the northbound
    left-turn pocket; lane -1 southbound; lanes 10/-10 the cross street.
    """
    lanes = (
        Lane(1, _line((H, -reach), (H, -stop)), LANE_W, speed_limit, successors=(2,), left_neighbor=3,
             label="northbound through lane"),
        Lane(2, _line((H, -stop), (H, reach)), LANE_W, speed_limit, label="northbound lane past the intersection"),
        Lane(3, _line((-H, -reach), (-H, -stop)), LANE_W, speed_limit, right_neighbor=1, left_neighbor=-1,
             label="northbound left-turn lane"),
        Lane(-1, _line((-3 * H, reach), (-3 * H, -reach)), LANE_W, speed_limit, right_neighbor=3,
             label="southbound lane"),
    ) + _cross_street(reach, speed_limit, -stop)
    lights = (
        TrafficLight("nb_through", (1,), reach - stop, "green"),
        TrafficLight("nb_left", (3,), reach - stop, "red"),
        TrafficLight("eb_cross", (10,), reach - stop, "red"),
    )
    return MapModel("red_light_intersection", lanes, (Junction("main", (0.0, 0.0), stop),), lights)


def left_turn_intersection(reach=90.0, speed_limit=13.9, stop=7.0, **_):
    """Lane 1 northbound turns left through connector lane 3 onto lane -11.

    Lane -1 is the southbound left-turn queue, lane -2 the southbound through
    lane carrying oncoming traffic.
    """
    r = stop + H
    lanes = (
        Lane(1, _line((H, -reach), (H, -stop)), LANE_W, speed_limit, successors=(2, 3), label="northbound lane"),
        Lane(2, _line((H, -stop), (H, reach)), LANE_W, speed_limit, label="northbound lane past the intersection"),
        Lane(3, _arc((-stop, -stop), r, 0.0, math.pi / 2), LANE_W, speed_limit, successors=(-11,),
             label="left-turn path"),
        Lane(-1, _line((-H, reach), (-H, stop)), LANE_W, speed_limit, left_neighbor=-2,
             label="southbound left-turn lane"),
        Lane(-2, _line((-3 * H, reach), (-3 * H, -reach)), LANE_W, speed_limit, right_neighbor=-1,
             label="southbound through lane"),
    ) + _cross_street(reach, speed_limit, -stop)
    lights = (TrafficLight("nb", (1,), reach - stop, "left_turn_yield"),)
    return MapModel("left_turn_intersection", lanes, (Junction("main", (0.0, 0.0), stop),), lights)


def highway(length=400.0, speed_limit=20.0, ramp_end=None, **_):
    """Eastbound highway: lane 1 right, lane 2 left; optional lane 3 on-ramp
    (acceleration lane to the right of lane 1) ending at ``ramp_end``."""
    lanes = [
        Lane(1, _line((0.0, 0.0), (length, 0.0)), LANE_W, speed_limit, left_neighbor=2,
             right_neighbor=3 if ramp_end else None, label="right highway lane"),
        Lane(2, _line((0.0, LANE_W), (length, LANE_W)), LANE_W, speed_limit, right_neighbor=1,
             label="left highway lane"),
    ]
    junctions = ()
    if ramp_end:
        lanes.append(Lane(3, _line((0.0, -LANE_W), (ramp_end, -LANE_W)), LANE_W, speed_limit, left_neighbor=1,
                          label="on-ramp acceleration lane"))
        junctions = (Junction("merge", (ramp_end, -LANE_W), 3.0, "end of the on-ramp"),)
    return MapModel("highway", tuple(lanes), junctions)


BUILDERS = {
    "two_lane_road": two_lane_road,
    "red_light_intersection": red_light_intersection,
    "left_turn_intersection": left_turn_intersection,
    "highway": highway,
}


def build_map(cfg: dict) -> MapModel:
    cfg = dict(cfg)
    name = cfg.pop("builder")
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown road builder {name!r}") from None
    return builder(**cfg)
