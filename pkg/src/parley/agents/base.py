"""Policy interface shared by LLM, scripted and oracle agents."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..comms import Dialog
from ..world.commands import HighLevelCommand
from ..world.scenario import ScenarioSpec
from ..world.state import WorldState


@dataclass
class DecisionContext:
    world: WorldState
    spec: ScenarioSpec
    agent_id: int
    step: int  # decision step
    dialog: Dialog
    can_speak: bool = True
    comm_enabled: bool = True
    observation: object = None  # TextObservation when the runner captioned this agent

    @property
    def vehicle(self):
        return self.world.vehicle(self.agent_id)

    @property
    def agent(self):
        return self.spec.agent(self.agent_id)


@dataclass
class AgentDecision:
    command: HighLevelCommand
    message: str | None = None
    reasoning: str = ""
    fallback: bool = False
    transcript: list = field(default_factory=list)
    latency: dict = field(default_factory=dict)  # reasoning / decision seconds

    def to_dict(self):
        return {
            "command": str(self.command),
            "message": self.message,
            "reasoning": self.reasoning,
            "fallback": self.fallback,
        }


class Policy:
    """Anything with ``decide(ctx) -> AgentDecision``."""

    kind = "abstract"
    needs_observation = False

    def decide(self, ctx: DecisionContext) -> AgentDecision:
        raise NotImplementedError
