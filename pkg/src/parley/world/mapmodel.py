"""Lane-graph map model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .geometry import Polyline


class MapError(ValueError):
    pass


@dataclass(frozen=True)
class Lane:
    """A directed lane.

    Positive ids run in the scenario's ego direction, negative ids the opposite
    way. ``left_neighbor``/``right_neighbor`` are expressed in the ego-direction
    frame, so lane 1 and lane -1 of a two-way road are each other's left/right.
    """

    id: int
    centerline: Polyline
    width: float = 3.5
    speed_limit: float = 13.9
    successors: tuple[int, ...] = ()
    left_neighbor: int | None = None
    right_neighbor: int | None = None
    label: str = ""

    def __post_init__(self):
        if self.width <= 0:
            raise MapError(f"lane {self.id}: width must be positive")
        if self.speed_limit <= 0:
            raise MapError(f"lane {self.id}: speed_limit must be positive")

    @property
    def length(self) -> float:
        return self.centerline.length


@dataclass(frozen=True)
class Junction:
    id: str
    center: tuple[float, float]
    radius: float
    label: str = "intersection"


@dataclass(frozen=True)
class TrafficLight:
    id: str
    lane_ids: tuple[int, ...]
    stop_s: float  # arclength of the stop line on each controlled lane
    state: str = "green"  # green | red | yellow | flashing_yellow | left_turn_yield


@dataclass(frozen=True)
class MapModel:
    name: str
    lanes: tuple[Lane, ...]
    junctions: tuple[Junction, ...] = ()
    traffic_lights: tuple[TrafficLight, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for lane in self.lanes:
            if lane.id in index:
                raise MapError(f"duplicate lane id {lane.id}")
            index[lane.id] = lane
        object.__setattr__(self, "_index", index)
        for lane in self.lanes:
            for succ in lane.successors:
                if succ not in index:
                    raise MapError(f"lane {lane.id}: unknown successor {succ}")
            if lane.left_neighbor is not None:
                other = index.get(lane.left_neighbor)
                if other is None or other.right_neighbor != lane.id:
                    raise MapError(f"lane {lane.id}: left neighbor link is not symmetric")
            if lane.right_neighbor is not None:
                other = index.get(lane.right_neighbor)
                if other is None or other.left_neighbor != lane.id:
                    raise MapError(f"lane {lane.id}: right neighbor link is not symmetric")
        for light in self.traffic_lights:
            for lid in light.lane_ids:
                if lid not in index:
                    raise MapError(f"traffic light {light.id}: unknown lane {lid}")

    def lane(self, lane_id: int) -> Lane:
        try:
            return self._index[lane_id]
        except KeyError:
            raise MapError(f"unknown lane {lane_id}") from None

    def has_lane(self, lane_id: int) -> bool:
        return lane_id in self._index

    def light_for(self, lane_id: int) -> TrafficLight | None:
        for light in self.traffic_lights:
            if lane_id in light.lane_ids:
                return light
        return None

    def junction_near(self, x: float, y: float, horizon: float):
        """Closest junction within ``horizon`` meters of its boundary, with distance."""
        best = None
        for j in self.junctions:
            d = max(math.hypot(x - j.center[0], y - j.center[1]) - j.radius, 0.0)
            if d <= horizon and (best is None or d < best[1]):
                best = (j, d)
        return best
