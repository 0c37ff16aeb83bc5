"""Episode termination bookkeeping, outcomes, rewards and verbal feedback."""
from __future__ import annotations

from dataclasses import dataclass, field

from .kinematics import CollisionEvent
from .scenario import ScenarioSpec

SUCCESS = "success"
COLLISION = "collision"
TIMEOUT = "timeout"
REWARDS = {SUCCESS: 1, COLLISION: -1, TIMEOUT: 0}


class EpisodeNotTerminated(RuntimeError):
    pass


def format_seconds(t: float) -> str:
    t = round(t, 2)
    return f"{t:g}"


def collision_feedback(i: int, j: int, t: float) -> str:
    return f"Vehicle {i} collided with Vehicle {j} after {format_seconds(t)} seconds."


def stagnation_feedback(i: int) -> str:
    return f"Vehicle {i} stagnated for too long to complete its task."


@dataclass
class EpisodeHistory:
    """What the episode loop has observed so far."""

    collisions: list[CollisionEvent] = field(default_factory=list)
    arrivals: dict[int, float] = field(default_factory=dict)
    time: float = 0.0
    terminated: bool = False

    def first_collision(self, vid: int) -> CollisionEvent | None:
        for ev in self.collisions:
            if ev.involves(vid):
                return ev
        return None

    def to_dict(self):
        return {
            "collisions": [[e.a, e.b, e.time, e.step] for e in self.collisions],
            "arrivals": {str(k): v for k, v in sorted(self.arrivals.items())},
            "time": self.time,
            "terminated": self.terminated,
        }


@dataclass(frozen=True)
class EpisodeOutcome:
    results: dict[int, str]  # focal agent id -> success | collision | timeout
    rewards: dict[int, int]
    collisions: tuple[CollisionEvent, ...]
    feedback: tuple[str, ...]
    eligible: tuple[int, ...]
    duration: float

    def __post_init__(self):
        for aid, res in self.results.items():
            if self.rewards[aid] != REWARDS[res]:
                raise ValueError(f"agent {aid}: reward {self.rewards[aid]} inconsistent with {res}")
            if res == SUCCESS and any(e.involves(aid) for e in self.collisions):
                raise ValueError(f"agent {aid}: success despite a collision")

    @property
    def failed(self) -> bool:
        """A failure episode: some reward-eligible agent collided or stagnated."""
        return any(self.results[a] != SUCCESS for a in self.eligible)

    @property
    def succeeded(self) -> bool:
        return not self.failed

    def collision_time(self, aid: int) -> float | None:
        for e in self.collisions:
            if e.involves(aid):
                return e.time
        return None

    def to_dict(self):
        return {
            "results": {str(k): v for k, v in sorted(self.results.items())},
            "rewards": {str(k): v for k, v in sorted(self.rewards.items())},
            "collisions": [[e.a, e.b, e.time, e.step] for e in self.collisions],
            "feedback": list(self.feedback),
            "eligible": list(self.eligible),
            "duration": self.duration,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            results={int(k): v for k, v in d["results"].items()},
            rewards={int(k): v for k, v in d["rewards"].items()},
            collisions=tuple(CollisionEvent(*c) for c in d["collisions"]),
            feedback=tuple(d["feedback"]),
            eligible=tuple(d["eligible"]),
            duration=d["duration"],
        )


def evaluate_episode(world, spec: ScenarioSpec, history: EpisodeHistory) -> EpisodeOutcome:
    """Score a finished episode.

    Success needs the goal reached within the time limit with no collision
    involvement; collision wins over arrival; everything else times out.
    Feedback covers focal agents: collisions always, stagnation only for
    reward-eligible ones.
    """
    if not history.terminated:
        raise EpisodeNotTerminated("evaluate_episode called before the episode terminated")
    results, rewards, feedback = {}, {}, []
    for aid in spec.focal_ids:
        ev = history.first_collision(aid)
        if ev is not None:
            res = COLLISION
            feedback.append(collision_feedback(aid, ev.other(aid), ev.time))
        elif aid in history.arrivals and history.arrivals[aid] <= spec.time_limit:
            res = SUCCESS
        else:
            res = TIMEOUT
            if spec.agent(aid).reward_eligible:
                feedback.append(stagnation_feedback(aid))
        results[aid] = res
        rewards[aid] = REWARDS[res]
    return EpisodeOutcome(
        results=results,
        rewards=rewards,
        collisions=tuple(history.collisions),
        feedback=tuple(feedback),
        eligible=spec.eligible_ids,
        duration=history.time,
    )
