"""Per-episode transition buffer, retrospective labels and keyframe sampling.

Keyframes for post-episode analysis are drawn without replacement with
probability proportional to a heuristic weight that favours moments shortly
before a collision, moments with other vehicles around, and stalls.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .world.commands import ACCELERATING, DECELERATING
from .world.kinematics import DECISION_INTERVAL
from .world.outcome import EpisodeOutcome

CONTRIBUTION_HORIZON = 2.0  # s before an own collision in which accelerating counts
STAGNATION_SPEED = 0.1
STAGNATION_TIME = 3.0
BATCH_SIZE = 4


class LabelingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransitionLabels:
    others_present: bool
    time_to_collision: float  # math.inf without an own collision later on
    contributed_to_collision: bool
    stagnation: bool
    contributed_to_stagnation: bool
    responses: tuple[str, ...]
    reward: int
    outcome: str

    def to_dict(self):
        d = asdict(self)
        d["time_to_collision"] = None if math.isinf(self.time_to_collision) else self.time_to_collision
        d["responses"] = list(self.responses)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        ttc = d.pop("time_to_collision")
        return cls(time_to_collision=math.inf if ttc is None else ttc,
                   responses=tuple(d.pop("responses")), **d)


@dataclass(frozen=True)
class Transition:
    agent: int
    step: int  # decision index
    observation: str
    dialog: str
    reasoning: str
    command: str
    command_kind: str
    message: str | None
    next_observation: str = ""
    speed: float = 0.0
    others_present: bool = False
    responses: tuple[str, ...] = ()  # messages from others delivered at step + 1
    labels: TransitionLabels | None = None

    @property
    def time(self) -> float:
        return self.step * DECISION_INTERVAL

    def to_dict(self):
        d = asdict(self)
        d["responses"] = list(self.responses)
        d["labels"] = self.labels.to_dict() if self.labels else None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        labels = d.pop("labels")
        return cls(responses=tuple(d.pop("responses")),
                   labels=TransitionLabels.from_dict(labels) if labels else None, **d)

    def render(self) -> str:
        """Compact text used inside analysis prompts."""
        lines = [f"Time {self.time:g} s (decision step {self.step})", "Observation:", self.observation,
                 "Dialog:", self.dialog or "No messages received.",
                 f"Reasoning: {self.reasoning or '(none)'}",
                 f"Command: {self.command}", f"Message sent: {self.message or 'none'}"]
        if self.labels is not None:
            ttc = self.labels.time_to_collision
            lines.append(f"Time to own collision: {'none' if math.isinf(ttc) else f'{ttc:g} s'}")
            if self.labels.stagnation:
                lines.append("The vehicle was stalled at this point.")
        return "\n".join(lines)


@dataclass
class ReplayBuffer:
    transitions: list = field(default_factory=list)
    labeled: bool = False

    def add(self, t: Transition) -> None:
        if self.labeled:
            raise LabelingError("buffer already labeled")
        self.transitions.append(t)

    def for_agent(self, aid: int) -> list:
        return sorted((t for t in self.transitions if t.agent == aid), key=lambda t: t.step)

    def __len__(self):
        return len(self.transitions)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(t.to_dict(), sort_keys=True) + "\n" for t in self.transitions)

    @classmethod
    def from_jsonl(cls, text: str) -> "ReplayBuffer":
        ts = [Transition.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
        return cls(ts, labeled=bool(ts) and all(t.labels is not None for t in ts))


def _stagnation_flags(ts):
    """Per-transition (stalled, in_window) flags.

    ``stalled``: speed has been below threshold for at least STAGNATION_TIME up
    to this step. ``in_window``: the step belongs to a low-speed run that
    reaches that length at some point.
    """
    need = int(round(STAGNATION_TIME / DECISION_INTERVAL)) + 1  # samples spanning the window
    runs, run, prev = [], 0, None
    for t in ts:
        if t.speed < STAGNATION_SPEED:
            run = run + 1 if run > 0 and t.step == prev + 1 else 1
        else:
            run = 0
        prev = t.step
        runs.append(run)
    stalled = [r >= need for r in runs]
    window = [False] * len(ts)
    i = len(ts) - 1
    while i >= 0:
        if runs[i] >= need:
            for j in range(i - runs[i] + 1, i + 1):
                window[j] = True
            i -= runs[i]
        else:
            i -= 1
    return list(zip(stalled, window))


def label_episode(buffer: ReplayBuffer, outcome: EpisodeOutcome | None) -> ReplayBuffer:
    """Attach retrospective labels. Idempotent on an already labeled buffer."""
    if outcome is None:
        raise LabelingError("cannot label before the episode has terminated")
    out = []
    by_agent = {}
    for t in buffer.transitions:
        by_agent.setdefault(t.agent, []).append(t)
    for aid, ts in by_agent.items():
        ts = sorted(ts, key=lambda t: t.step)
        coll = outcome.collision_time(aid)
        res = outcome.results.get(aid, "timeout")
        reward = outcome.rewards.get(aid, 0)
        stag = _stagnation_flags(ts)
        for t, (st, in_window) in zip(ts, stag):
            if coll is not None and coll >= t.time:
                ttc = round(coll - t.time, 9)
            else:
                ttc = math.inf
            contributed = ttc <= CONTRIBUTION_HORIZON and t.command_kind in ACCELERATING
            labels = TransitionLabels(
                others_present=t.others_present,
                time_to_collision=ttc,
                contributed_to_collision=contributed,
                stagnation=st,
                contributed_to_stagnation=in_window and t.command_kind in DECELERATING,
                responses=t.responses,
                reward=reward,
                outcome=res,
            )
            out.append(replace(t, labels=labels))
    out.sort(key=lambda t: (t.step, t.agent))
    return ReplayBuffer(out, labeled=True)


def weight(t: Transition, labels: TransitionLabels | None = None) -> float:
    """Keyframe weight; always at least 1."""
    lb = labels if labels is not None else t.labels
    w = 1.0
    if lb.others_present:
        w += 2.0
    w += 5.0 * max(2.0 - lb.time_to_collision, 0.0)
    if lb.contributed_to_collision:
        w += 10.0
    if lb.stagnation:
        w += 0.1 * t.step
    if lb.contributed_to_stagnation:
        w += 2.0
    return w


@dataclass(frozen=True)
class SampleBatch:
    transitions: tuple[Transition, ...]
    weights: tuple[float, ...]

    def __len__(self):
        return len(self.transitions)


def weighted_draw_without_replacement(weights, k: int, rng: np.random.Generator) -> list[int]:
    """Indices drawn one at a time, renormalising over the remaining items."""
    remaining = list(range(len(weights)))
    picked = []
    for _ in range(min(k, len(weights))):
        w = np.array([weights[i] for i in remaining], dtype=float)
        j = int(rng.choice(len(remaining), p=w / w.sum()))
        picked.append(remaining.pop(j))
    return picked


def sample_batch(transitions, batch_size: int = BATCH_SIZE, rng: np.random.Generator | None = None) -> SampleBatch:
    ts = list(transitions.transitions if isinstance(transitions, ReplayBuffer) else transitions)
    if not ts:
        return SampleBatch((), ())
    ws = [weight(t) for t in ts]
    if len(ts) <= batch_size:
        return SampleBatch(tuple(ts), tuple(ws))
    rng = rng if rng is not None else np.random.default_rng(0)
    idx = weighted_draw_without_replacement(ws, batch_size, rng)
    idx.sort(key=lambda i: (ts[i].step, ts[i].agent))
    return SampleBatch(tuple(ts[i] for i in idx), tuple(ws[i] for i in idx))
