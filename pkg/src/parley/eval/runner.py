"""Closed-loop episode execution with deterministic logs.

Per decision step: every active agent decides, messages are published, the
commands are loaded into the controllers and the world advances ten
simulation steps with collision and arrival checks after each one.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..agents.base import AgentDecision, DecisionContext, Policy
from ..backend import BackendError
from ..comms import Broker, MediationMode, MessageEnvelope, mediate_turn
from ..percept import caption
from ..replay import ReplayBuffer, Transition, label_episode
from ..world.commands import HighLevelCommand, RejectedCommand, Stop
from ..world.kinematics import apply_command, control_for, detect_collisions, step_simulation
from ..world.outcome import EpisodeHistory, EpisodeOutcome, evaluate_episode
from ..world.scenario import ScenarioSpec, load_scenario, reached_goal

LOG_FILES = ("meta.json", "steps.jsonl", "decisions.jsonl", "messages.jsonl", "transcripts.jsonl",
             "buffer.jsonl", "outcome.json")
# what a replayed episode must reproduce byte for byte (no model transcripts, no run metadata)
REPLAY_FILES = ("steps.jsonl", "decisions.jsonl", "messages.jsonl", "buffer.jsonl", "outcome.json")
TIMINGS_FILE = "timings.jsonl"  # wall-clock data, excluded from determinism checks


def episode_seed(seed: int, index: int) -> int:
    """Seed for episode ``index`` of a run seeded with ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


@dataclass
class EpisodeResult:
    scenario: str
    variant: str
    seed: int
    outcome: EpisodeOutcome | None
    buffer: ReplayBuffer
    decisions: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    transcripts: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    invalid: bool = False
    error: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def total_bytes(self) -> int:
        return sum(m["bytes"] for m in self.messages)

    @property
    def duration(self) -> float:
        return self.outcome.duration if self.outcome else 0.0


class ReplayPolicy(Policy):
    """Plays back recorded (command, message) pairs for one agent."""

    kind = "replay"

    def __init__(self, records: dict):
        self.records = records  # step -> decision dict

    def decide(self, ctx: DecisionContext) -> AgentDecision:
        rec = self.records.get(ctx.step)
        if rec is None:
            raise KeyError(f"no recorded decision for agent {ctx.agent_id} at step {ctx.step}")
        return AgentDecision(HighLevelCommand.from_dict(rec["issued"]), rec["message"], rec["reasoning"],
                             rec["fallback"])


def _vehicle_row(v):
    return [v.id, v.x, v.y, v.heading, v.speed, v.lane_id, v.target_lane_id, v.status]


def run_episode(spec: ScenarioSpec, seed: int, policies: dict, *, comm: bool = True,
                record_buffer: bool = True, log_dir=None, meta: dict | None = None) -> EpisodeResult:
    """Run one episode. ``policies`` maps every agent id to a Policy.

    Backend failures make the episode invalid instead of raising.
    """
    world = load_scenario(spec, seed)
    broker = Broker(spec.comm_radius)
    mode = MediationMode(spec.mediation_mode, spec.speaker_order)
    history = EpisodeHistory()
    focal = set(spec.focal_ids)
    eligible = set(spec.eligible_ids)
    k = spec.decision_interval
    max_decisions = spec.max_steps // k
    res = EpisodeResult(spec.name, spec.config_variant, seed, None, ReplayBuffer(),
                        meta={"scenario": spec.name, "variant": spec.config_variant, "seed": seed, "comm": comm,
                              **(meta or {})})
    collided_pairs = set()
    pending: dict[int, dict] = {}  # agent -> partially built transition awaiting o_{t+1}
    observations = {}
    res.steps.append({"step": 0, "t": 0.0, "vehicles": [_vehicle_row(v) for v in world.vehicles]})

    try:
        for d in range(max_decisions):
            speakers = mediate_turn(mode, d) if comm else frozenset()
            decisions = {}
            for v in world.vehicles:
                if not v.active:
                    continue
                pol = policies[v.id]
                obs = None
                t0 = time.perf_counter()
                if v.id in focal and (record_buffer or pol.needs_observation):
                    obs = caption(world, v.id, spec, d)
                cap_latency = time.perf_counter() - t0
                observations[v.id] = obs
                # close the previous transition of this agent now that o_{t+1} exists
                if v.id in pending and obs is not None:
                    res.buffer.add(Transition(next_observation=obs.text, **pending.pop(v.id)))
                dialog = broker.dialog(v.id)
                ctx = DecisionContext(world, spec, v.id, d, dialog, can_speak=v.id in speakers,
                                      comm_enabled=comm, observation=obs)
                dec = pol.decide(ctx)
                if not ctx.can_speak or not v.comm_capable:
                    dec.message = None
                decisions[v.id] = dec
                res.timings.append({"step": d, "agent": v.id, "captioner": cap_latency if obs else None,
                                    "reasoning": dec.latency.get("reasoning"),
                                    "decision": dec.latency.get("decision")})
                for tr in dec.transcript:
                    res.transcripts.append({"step": d, "agent": v.id, **tr})
                if v.id in focal and obs is not None and record_buffer:
                    pending[v.id] = dict(agent=v.id, step=d, observation=obs.text, dialog=dialog.render(),
                                         reasoning=dec.reasoning, command=str(dec.command),
                                         command_kind=dec.command.kind, message=dec.message, speed=v.speed,
                                         others_present=obs.others_present)

            for vid in sorted(decisions):
                dec = decisions[vid]
                if dec.message:
                    broker.publish(MessageEnvelope(vid, d, dec.message), world)

            vehicles = []
            for v in world.vehicles:
                dec = decisions.get(v.id)
                applied, rejected = (dec.command if dec else None), False
                if dec is not None:
                    try:
                        v = apply_command(v, dec.command, world.map)
                    except RejectedCommand:
                        rejected, applied = True, Stop
                        v = apply_command(v, Stop, world.map)
                    res.decisions.append({"step": d, "agent": v.id, "issued": dec.command.to_dict(),
                                          "applied": applied.to_dict(), "rejected": rejected, **dec.to_dict()})
                vehicles.append(v)
            world = world.with_vehicles(vehicles)

            for _ in range(k):
                controls = {v.id: control_for(v, world.map) for v in world.vehicles if v.active}
                world = step_simulation(world, controls)
                crashed = set()
                for ev in detect_collisions(world):
                    if (ev.a, ev.b) in collided_pairs:
                        continue
                    collided_pairs.add((ev.a, ev.b))
                    history.collisions.append(ev)
                    crashed.update((ev.a, ev.b))
                changed = []
                for v in world.vehicles:
                    if v.id in crashed and v.status != "crashed":
                        v = _freeze(v, "crashed")
                    elif v.active and v.id in focal and reached_goal(spec, v):
                        v = _freeze(v, "arrived")
                        history.arrivals[v.id] = round(world.time, 6)
                    changed.append(v)
                world = world.with_vehicles(changed)
                res.steps.append({"step": world.step, "t": round(world.time, 6),
                                  "vehicles": [_vehicle_row(v) for v in world.vehicles]})
                if all(world.vehicle(a).status != "active" for a in eligible) or world.time >= spec.time_limit - 1e-9:
                    break
            broker.advance()
            # responses: what others said at d, delivered now at d + 1
            if record_buffer:
                for aid, p in pending.items():
                    if p["step"] == d:
                        p["responses"] = tuple(e.envelope.text for e in broker.dialog(aid).entries
                                               if not e.self_sent and e.envelope.step == d)
            if all(world.vehicle(a).status != "active" for a in eligible) or world.time >= spec.time_limit - 1e-9:
                break
    except BackendError as exc:
        res.invalid, res.error = True, f"{type(exc).__name__}: {exc}"
        res.messages = [m.to_dict() for m in broker.log]
        if log_dir is not None:
            write_logs(res, log_dir)
        return res

    history.time = round(world.time, 6)
    history.terminated = True
    outcome = evaluate_episode(world, spec, history)
    res.outcome = outcome
    for aid, p in pending.items():
        res.buffer.add(Transition(next_observation="", **p))
    if record_buffer:
        res.buffer = label_episode(res.buffer, outcome)
    res.messages = [m.to_dict() for m in broker.log]
    if log_dir is not None:
        write_logs(res, log_dir)
    return res


def _freeze(v, status):
    from dataclasses import replace

    return replace(v, status=status, speed=0.0, target_speed=0.0, hard_stop=True, target_lane_id=None)


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def write_logs(res: EpisodeResult, log_dir) -> Path:
    out = Path(log_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(res.meta, invalid=res.invalid, error=res.error)
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    (out / "steps.jsonl").write_text(_jsonl(res.steps))
    (out / "decisions.jsonl").write_text(_jsonl(res.decisions))
    (out / "messages.jsonl").write_text(_jsonl(res.messages))
    (out / "transcripts.jsonl").write_text(_jsonl(res.transcripts))
    (out / "buffer.jsonl").write_text(res.buffer.to_jsonl())
    (out / "outcome.json").write_text(
        json.dumps(res.outcome.to_dict() if res.outcome else None, sort_keys=True, indent=1) + "\n")
    (out / TIMINGS_FILE).write_text(_jsonl(res.timings))
    return out


def load_outcome(log_dir) -> EpisodeOutcome | None:
    d = json.loads((Path(log_dir) / "outcome.json").read_text())
    return EpisodeOutcome.from_dict(d) if d else None


def replay_policies(log_dir, spec: ScenarioSpec) -> dict:
    by_agent = {}
    for line in (Path(log_dir) / "decisions.jsonl").read_text().splitlines():
        rec = json.loads(line)
        by_agent.setdefault(rec["agent"], {})[rec["step"]] = rec
    return {a.id: ReplayPolicy(by_agent.get(a.id, {})) for a in spec.agents}


def diff_logs(a, b, files=LOG_FILES) -> list[str]:
    """Names of log files whose bytes differ between two episode directories."""
    out = []
    for name in files:
        pa, pb = Path(a) / name, Path(b) / name
        if not pa.exists() or not pb.exists() or pa.read_bytes() != pb.read_bytes():
            out.append(name)
    return out
