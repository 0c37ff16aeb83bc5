"""Immutable simulation state."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .mapmodel import MapModel

ROLES = ("focal", "background", "collider")


@dataclass(frozen=True, slots=True)
class VehicleState:
    id: int
    x: float
    y: float
    heading: float
    speed: float
    lane_id: int
    half_extents: tuple[float, float] = (2.25, 1.0)
    role: str = "background"
    comm_capable: bool = False
    # maneuver state carried between sim steps by the closed-loop controller
    target_speed: float = 0.0
    hard_stop: bool = False
    target_lane_id: int | None = None
    route: tuple[int, ...] = ()
    status: str = "active"  # active | crashed | arrived
    max_speed: float = 40.0

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError(f"vehicle {self.id}: negative speed {self.speed}")
        if self.half_extents[0] <= 0 or self.half_extents[1] <= 0:
            raise ValueError(f"vehicle {self.id}: half extents must be positive")
        if self.role not in ROLES:
            raise ValueError(f"vehicle {self.id}: unknown role {self.role!r}")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def active(self) -> bool:
        return self.status == "active"

    @property
    def rect(self):
        return (self.x, self.y, self.heading, self.half_extents[0], self.half_extents[1])

    def distance_to(self, other: "VehicleState") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


@dataclass(frozen=True, slots=True)
class ControlInput:
    throttle: float = 0.0
    brake: float = 0.0
    steer: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.throttle <= 1.0:
            raise ValueError(f"throttle out of range: {self.throttle}")
        if not 0.0 <= self.brake <= 1.0:
            raise ValueError(f"brake out of range: {self.brake}")
        if not -1.0 <= self.steer <= 1.0:
            raise ValueError(f"steer out of range: {self.steer}")
        if self.throttle * self.brake != 0.0:
            raise ValueError("throttle and brake are mutually exclusive")


@dataclass(frozen=True)
class WorldState:
    map: MapModel
    vehicles: tuple[VehicleState, ...]
    step: int = 0
    dt: float = 0.05
    _by_id: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id = {v.id: v for v in self.vehicles}
        if len(by_id) != len(self.vehicles):
            raise ValueError("duplicate vehicle ids")
        for v in self.vehicles:
            if not self.map.has_lane(v.lane_id):
                raise ValueError(f"vehicle {v.id}: unknown lane {v.lane_id}")
        object.__setattr__(self, "_by_id", by_id)

    @property
    def time(self) -> float:
        return self.step * self.dt

    def vehicle(self, vid: int) -> VehicleState:
        try:
            return self._by_id[vid]
        except KeyError:
            raise KeyError(f"unknown vehicle {vid}") from None

    def has_vehicle(self, vid: int) -> bool:
        return vid in self._by_id

    def present(self):
        """Vehicles still on the road (active or crashed wrecks)."""
        return [v for v in self.vehicles if v.status != "arrived"]

    def with_vehicles(self, vehicles, step: int | None = None) -> "WorldState":
        return WorldState(
            map=self.map,
            vehicles=tuple(vehicles),
            step=self.step if step is None else step,
            dt=self.dt,
        )
