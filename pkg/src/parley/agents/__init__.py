"""Driving policies and the per-agent binding logic."""
from __future__ import annotations

from dataclasses import dataclass

from .base import AgentDecision, DecisionContext, Policy
from .llm import LLMPolicy, act, parse_action, reason
from .scripted import REGISTRY, ScriptedPolicy, UnknownPolicy, scripted_policy

LLM_KINDS = ("llm", "silent_llm")


@dataclass(frozen=True)
class PolicyBinding:
    kind: str  # llm | silent_llm | scripted | oracle
    name: str | None = None  # registry name for scripted/oracle kinds

    def __post_init__(self):
        if self.kind not in LLM_KINDS + ("scripted", "oracle"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind not in LLM_KINDS and self.name is None:
            raise ValueError(f"{self.kind} binding needs a policy name")


def binding_for(agent, family: str) -> PolicyBinding:
    """Binding for ``agent`` under a method family.

    ``family`` is "oracle", "naive", "llm" or "silent_llm". Non-focal agents
    always use their background policy; focal agents fall back to it when the
    scenario lists nothing for the family.
    """
    pol = agent.policies
    if not agent.focal:
        return PolicyBinding("scripted", pol.get("background", "constant_speed"))
    if family in LLM_KINDS:
        return PolicyBinding(family)
    name = pol.get(family) or pol.get("background")
    if name is None:
        raise UnknownPolicy(f"agent {agent.id} has no {family!r} policy")
    return PolicyBinding("oracle" if family == "oracle" else "scripted", name)


def make_policy(binding: PolicyBinding, backend=None, knowledge=None, retriever=None) -> Policy:
    if binding.kind in LLM_KINDS:
        if backend is None:
            raise ValueError("language-model policies need a backend")
        return LLMPolicy(backend, knowledge, silent=binding.kind == "silent_llm", retriever=retriever)
    return ScriptedPolicy(binding.name, kind=binding.kind)


__all__ = [
    "AgentDecision", "DecisionContext", "Policy", "LLMPolicy", "ScriptedPolicy", "PolicyBinding",
    "REGISTRY", "UnknownPolicy", "scripted_policy", "binding_for", "make_policy", "reason", "act", "parse_action",
]
