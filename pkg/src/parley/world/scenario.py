"""Declarative scenario specs and seeded world instantiation."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .geometry import obb_overlap
from .kinematics import DT, K_STEPS
from .mapmodel import MapModel
from .roads import build_map
from .state import ROLES, VehicleState, WorldState

VARIANTS = ("safe", "accident_prone", "randomized")
MEDIATION_MODES = ("parallel", "turn_based")
SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"
GOAL_RADIUS = 2.0


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Goal:
    lane: int
    s: float
    radius: float = GOAL_RADIUS


@dataclass(frozen=True)
class AgentSpec:
    id: int
    label: str
    role: str
    lane: int
    s: float
    speed: float
    length: float = 4.5
    width: float = 2.0
    comm_capable: bool = False
    reward_eligible: bool = False
    route: tuple[int, ...] = ()
    goal: Goal | None = None
    task: str = ""
    # policy bindings by method family: "background", "oracle", "naive"
    policies: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def focal(self) -> bool:
        return self.role == "focal"


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    category: str
    description: str
    map_config: dict
    agents: tuple[AgentSpec, ...]
    mediation_mode: str = "parallel"
    config_variant: str = "accident_prone"
    sim_step: float = DT
    decision_interval: int = K_STEPS
    time_limit: float = 30.0
    comm_radius: float = 100.0
    sensing_radius: float = 150.0
    jitter: dict = field(default_factory=dict)
    safe_alternative: str = "safe"
    map: MapModel = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.map is None:
            object.__setattr__(self, "map", build_map(self.map_config))
        self.validate()

    def validate(self):
        if self.mediation_mode not in MEDIATION_MODES:
            raise ScenarioError(f"{self.name}: unknown mediation mode {self.mediation_mode!r}")
        if self.config_variant not in VARIANTS:
            raise ScenarioError(f"{self.name}: unknown variant {self.config_variant!r}")
        if self.time_limit <= 0:
            raise ScenarioError(f"{self.name}: time limit must be positive")
        if not self.focal_ids:
            raise ScenarioError(f"{self.name}: no focal agents")
        seen = set()
        for a in self.agents:
            if a.id in seen:
                raise ScenarioError(f"{self.name}: duplicate agent id {a.id}")
            seen.add(a.id)
            if a.role not in ROLES:
                raise ScenarioError(f"agent {a.id}: unknown role {a.role!r}")
            for lid in (a.lane, *a.route):
                if not self.map.has_lane(lid):
                    raise ScenarioError(f"agent {a.id}: unknown lane {lid}")
            if a.goal is not None and not self.map.has_lane(a.goal.lane):
                raise ScenarioError(f"agent {a.id}: goal on unknown lane {a.goal.lane}")
            if a.reward_eligible and (not a.focal or a.goal is None):
                raise ScenarioError(f"agent {a.id}: reward-eligible agents must be focal with a goal")

    @property
    def focal_ids(self) -> tuple[int, ...]:
        return tuple(a.id for a in self.agents if a.focal)

    @property
    def eligible_ids(self) -> tuple[int, ...]:
        return tuple(a.id for a in self.agents if a.reward_eligible)

    @property
    def speaker_order(self) -> tuple[int, ...]:
        """Comm-capable focal agents in roster order; the first one opens turn-based talk."""
        return tuple(a.id for a in self.agents if a.focal and a.comm_capable)

    @property
    def max_steps(self) -> int:
        return int(round(self.time_limit / self.sim_step))

    def agent(self, aid: int) -> AgentSpec:
        for a in self.agents:
            if a.id == aid:
                return a
        raise KeyError(f"unknown agent {aid}")

    def goal_point(self, aid: int):
        g = self.agent(aid).goal
        if g is None:
            return None
        x, y, _ = self.map.lane(g.lane).centerline.point_at(g.s)
        return (x, y)


def _agent_from_dict(d: dict) -> AgentSpec:
    d = dict(d)
    spawn = d.pop("spawn")
    goal = d.pop("goal", None)
    size = d.pop("size", None)
    kw = {}
    if size:
        kw["length"], kw["width"] = float(size[0]), float(size[1])
    return AgentSpec(
        id=int(d.pop("id")),
        label=d.pop("label", ""),
        role=d.pop("role"),
        lane=int(spawn["lane"]),
        s=float(spawn["s"]),
        speed=float(spawn.get("speed", 0.0)),
        comm_capable=bool(d.pop("comm_capable", False)),
        reward_eligible=bool(d.pop("reward_eligible", False)),
        route=tuple(int(x) for x in d.pop("route", ())),
        goal=Goal(int(goal["lane"]), float(goal["s"])) if goal else None,
        task=d.pop("task", "").strip(),
        policies=dict(d.pop("policies", {})),
        params=dict(d.pop("params", {})),
        **kw,
    )


def spec_from_dict(doc: dict, variant: str | None = None) -> ScenarioSpec:
    """Build a ScenarioSpec from a parsed scenario document.

    A document holds the accident-prone base roster plus a ``variants``
    mapping; each variant may ``remove`` agents, ``override`` agent fields and
    set its own spawn ``jitter``.
    """
    doc = copy.deepcopy(doc)
    variants = doc.pop("variants", {}) or {}
    variant = variant or doc.get("default_variant", "accident_prone")
    if variant not in VARIANTS:
        raise ScenarioError(f"unknown variant {variant!r}")
    agents = doc.pop("agents")
    jitter = {}
    vdoc = variants.get(variant, {}) or {}
    if variant != "accident_prone" and variant not in variants:
        raise ScenarioError(f"{doc.get('name')}: variant {variant!r} not defined")
    removed = {int(x) for x in vdoc.get("remove", [])}
    overrides = {int(k): v for k, v in (vdoc.get("override") or {}).items()}
    roster = []
    for a in agents:
        if int(a["id"]) in removed:
            continue
        a = copy.deepcopy(a)
        for key, val in (overrides.get(int(a["id"])) or {}).items():
            if isinstance(val, dict) and isinstance(a.get(key), dict):
                a[key].update(val)
            else:
                a[key] = val
        roster.append(_agent_from_dict(a))
    for aid, j in (vdoc.get("jitter") or {}).items():
        if int(aid) not in removed:
            jitter[int(aid)] = {k: (float(v[0]), float(v[1])) for k, v in j.items()}
    safe_alt = "randomized" if "randomized" in variants and "safe" not in variants else "safe"
    return ScenarioSpec(
        name=doc["name"],
        category=doc.get("category", ""),
        description=doc.get("description", "").strip(),
        map_config=doc["map"],
        agents=tuple(roster),
        mediation_mode=doc.get("mediation", "parallel"),
        config_variant=variant,
        time_limit=float(doc.get("time_limit", 30.0)),
        comm_radius=float(doc.get("comm_radius", 100.0)),
        sensing_radius=float(doc.get("sensing_radius", 150.0)),
        jitter=jitter,
        safe_alternative=safe_alt,
    )


def scenario_path(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.suffix in (".yaml", ".yml") and p.exists():
        return p
    cand = SCENARIO_DIR / f"{name_or_path}.yaml"
    if cand.exists():
        return cand
    raise ScenarioError(f"no scenario named {name_or_path!r}")


def load_spec(name_or_path, variant: str | None = None) -> ScenarioSpec:
    with open(scenario_path(name_or_path)) as fh:
        doc = yaml.safe_load(fh)
    return spec_from_dict(doc, variant)


def scenario_names() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))


def load_scenario(spec: ScenarioSpec, seed: int) -> WorldState:
    """Instantiate the initial world for ``spec``.

    Spawn offsets are drawn from a generator seeded only by ``seed``, one
    draw per jittered field in roster order, so (spec, seed) fixes the world.
    """
    rng = np.random.default_rng(seed)
    vehicles = []
    for a in spec.agents:
        s, speed = a.s, a.speed
        j = spec.jitter.get(a.id, {})
        if "s" in j:
            s += float(rng.uniform(*j["s"]))
        if "speed" in j:
            speed = max(0.0, speed + float(rng.uniform(*j["speed"])))
        lane = spec.map.lane(a.lane)
        x, y, heading = lane.centerline.point_at(s)
        vehicles.append(
            VehicleState(
                id=a.id,
                x=x,
                y=y,
                heading=heading,
                speed=speed,
                lane_id=a.lane,
                half_extents=(a.length / 2, a.width / 2),
                role=a.role,
                comm_capable=a.comm_capable,
                target_speed=speed,
                hard_stop=speed == 0.0,
                route=a.route,
            )
        )
    for i, va in enumerate(vehicles):
        for vb in vehicles[i + 1:]:
            if obb_overlap(va.rect, vb.rect):
                raise ScenarioError(f"agent {vb.id} spawns overlapping agent {va.id}")
    return WorldState(map=spec.map, vehicles=tuple(vehicles), step=0, dt=spec.sim_step)


def reached_goal(spec: ScenarioSpec, veh: VehicleState) -> bool:
    a = spec.agent(veh.id)
    if a.goal is None:
        return False
    gx, gy = spec.goal_point(veh.id)
    return math.hypot(veh.x - gx, veh.y - gy) <= a.goal.radius
