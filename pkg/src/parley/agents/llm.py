"""The language-model driving agent: reason step by step, then emit a structured action."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

from ..backend import Backend, TransientBackendError, policy_request
from ..percept import caption
from ..world.commands import CommandError, Stop, parse_command
from .base import AgentDecision, DecisionContext, Policy

log = logging.getLogger(__name__)

SYSTEM_PROMPT = (
    "You are the driving agent of one connected vehicle in a traffic simulation. "
    "Every 0.5 seconds you choose one high-level command: "
    "go <speed in m/s>, stop, slow down, speed up, change left, change right. "
    "Connected vehicles within 100 m can exchange short natural-language messages; "
    "unconnected vehicles cannot talk. Your goal is to reach your destination "
    "without colliding and without stalling, and to help the other connected vehicles do the same."
)
SILENT_SYSTEM_PROMPT = (
    "You are the driving agent of one vehicle in a traffic simulation. "
    "Every 0.5 seconds you choose one high-level command: "
    "go <speed in m/s>, stop, slow down, speed up, change left, change right. "
    "Focus solely on controlling the vehicle. Reach your destination without colliding and without stalling."
)
REASON_INSTRUCTION = (
    "Think step by step about the situation: what you can see, what you cannot see, "
    "what the messages tell you and what could go wrong. Do not give the final command yet."
)
ACT_INSTRUCTION = (
    'Respond with a JSON object with keys "command" and "message". '
    '"command" is one of: go <speed>, stop, slow down, speed up, change left, change right. '
    '"message" is a short message to nearby connected vehicles, or null to stay quiet.'
)
ACT_INSTRUCTION_SILENT = (
    'Respond with a JSON object with keys "command" and "message". '
    '"command" is one of: go <speed>, stop, slow down, speed up, change left, change right. '
    'Set "message" to null; you cannot send messages.'
)
RETRY_NOTE = "Your previous reply could not be parsed. Reply with only the JSON object."

TRANSIENT_RETRIES = 2
_JSON_RE = re.compile(r"\{.*\}", re.DOTALL)


def context_sections(knowledge=None, retrieved=(), observation_text="", dialog_text=None):
    """Prompt sections in their fixed order; empty ones are left out."""
    sections = []
    k = getattr(knowledge, "knowledge", "") if knowledge is not None else ""
    s = getattr(knowledge, "strategy", "") if knowledge is not None else ""
    if k:
        sections.append(("Knowledge", k))
    if s:
        sections.append(("Cooperative strategy", s))
    if retrieved:
        sections.append(("Retrieved examples", "\n\n".join(_render_example(e) for e in retrieved)))
    sections.append(("Observation", observation_text))
    if dialog_text is not None:
        sections.append(("Message dialog", dialog_text))
    return sections


def _render_example(entry) -> str:
    msg = entry.message if entry.message else "none"
    return f"Situation:\n{entry.key}\nAction taken: {entry.command}; message: {msg} ({entry.tag})"


def render_sections(sections) -> str:
    return "\n\n".join(f"## {title}\n{body}" for title, body in sections)


def reason_messages(sections, silent=False):
    system = SILENT_SYSTEM_PROMPT if silent else SYSTEM_PROMPT
    return (("system", system), ("user", render_sections(sections) + "\n\n" + REASON_INSTRUCTION))


def act_messages(sections, reasoning: str, silent=False, retry=False):
    system = SILENT_SYSTEM_PROMPT if silent else SYSTEM_PROMPT
    body = render_sections(list(sections) + [("Your reasoning", reasoning or "(none)")])
    body += "\n\n" + (ACT_INSTRUCTION_SILENT if silent else ACT_INSTRUCTION)
    if retry:
        body += "\n\n" + RETRY_NOTE
    return (("system", system), ("user", body))


def parse_action(text: str, speed_limit: float):
    """(command, message) from a reply holding a JSON object; raises ValueError."""
    m = _JSON_RE.search(text)
    if not m:
        raise ValueError("no JSON object in reply")
    try:
        obj = json.loads(m.group(0))
    except json.JSONDecodeError as exc:
        raise ValueError(f"bad JSON: {exc}") from exc
    if not isinstance(obj, dict) or "command" not in obj:
        raise ValueError("reply lacks a command key")
    try:
        cmd = parse_command(str(obj["command"]), speed_limit)
    except CommandError as exc:
        raise ValueError(str(exc)) from exc
    msg = obj.get("message")
    if msg is not None:
        msg = str(msg).strip() or None
    return cmd, msg


def _complete(backend, messages, model, transcript, stage):
    req = policy_request(messages, model)
    last = None
    for _ in range(TRANSIENT_RETRIES):
        try:
            out = backend.complete(req)
        except TransientBackendError as exc:
            last = exc
            continue
        transcript.append({"stage": stage, "key": req.key(), "prompt": [list(m) for m in messages],
                           "response": out.text})
        return out
    raise last


def reason(observation, dialog, knowledge, backend: Backend, *, retrieved=(), silent=False, model=None,
           transcript=None, latency=None) -> str:
    """One backend call producing free-text reasoning.

    ``dialog`` is None in silent mode. Transient failures degrade to empty
    reasoning so the act step can still run.
    """
    transcript = [] if transcript is None else transcript
    latency = {} if latency is None else latency
    sections = context_sections(knowledge, retrieved, observation.text,
                                None if silent or dialog is None else dialog.render())
    try:
        out = _complete(backend, reason_messages(sections, silent), model, transcript, "reason")
    except TransientBackendError as exc:
        log.warning("agent %s: reasoning unavailable (%s)", observation.agent_id, exc)
        return ""
    latency["reasoning"] = latency.get("reasoning", 0.0) + out.latency
    return out.text


def act(observation, dialog, knowledge, reasoning: str, backend: Backend, *, speed_limit: float,
        retrieved=(), silent=False, can_speak=True, model=None, transcript=None, latency=None) -> AgentDecision:
    """Structured action: one retry on an unparsable reply, then Stop with the fallback flag."""
    transcript = [] if transcript is None else transcript
    latency = {} if latency is None else latency
    sections = context_sections(knowledge, retrieved, observation.text,
                                None if silent or dialog is None else dialog.render())
    for attempt in range(2):
        msgs = act_messages(sections, reasoning, silent, retry=attempt > 0)
        try:
            out = _complete(backend, msgs, model, transcript, "act")
        except TransientBackendError:
            break
        latency["decision"] = latency.get("decision", 0.0) + out.latency
        try:
            cmd, msg = parse_action(out.text, speed_limit)
        except ValueError as exc:
            log.info("agent %s: unparsable action (%s)", observation.agent_id, exc)
            continue
        if silent or not can_speak:
            msg = None
        return AgentDecision(cmd, msg, reasoning, False, transcript, latency)
    return AgentDecision(Stop, None, reasoning, True, transcript, latency)


@dataclass
class LLMPolicy(Policy):
    """Reason-then-act agent conditioned on knowledge, strategy, observation and dialog.

    ``silent`` turns off messaging entirely. ``retriever`` (observation text ->
    MemoryEntry list) adds retrieved examples for the memory baseline.
    """

    backend: Backend
    knowledge: object = None  # anything with .knowledge / .strategy text
    silent: bool = False
    retriever: object = None
    model: str | None = None
    kind: str = field(default="llm")
    needs_observation = True

    def decide(self, ctx: DecisionContext) -> AgentDecision:
        obs = ctx.observation if ctx.observation is not None else caption(ctx.world, ctx.agent_id, ctx.spec, ctx.step)
        retrieved = tuple(self.retriever(obs.text)) if self.retriever is not None else ()
        silent = self.silent or not ctx.comm_enabled
        dialog = None if silent else ctx.dialog
        transcript, latency = [], {}
        kw = dict(retrieved=retrieved, silent=silent, model=self.model, transcript=transcript, latency=latency)
        r = reason(obs, dialog, self.knowledge, self.backend, **kw)
        limit = ctx.world.map.lane(ctx.vehicle.lane_id).speed_limit
        return act(obs, dialog, self.knowledge, r, self.backend, speed_limit=limit, can_speak=ctx.can_speak, **kw)
