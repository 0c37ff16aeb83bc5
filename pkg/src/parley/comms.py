"""Vehicle-to-vehicle message layer.

Messages are broadcast to connected vehicles within a radius measured at send
time and show up in the recipients' dialogs one decision step later. Dialogs
keep messages for two seconds.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .world.kinematics import DECISION_INTERVAL
from .world.state import WorldState

log = logging.getLogger(__name__)

COMM_RADIUS = 100.0
DIALOG_WINDOW = 2.0
MAX_MESSAGE_BYTES = 1024


class CapabilityError(RuntimeError):
    """A vehicle without a transceiver tried to send."""


def truncate_utf8(text: str, limit: int = MAX_MESSAGE_BYTES) -> str:
    raw = text.encode("utf-8")
    if len(raw) <= limit:
        return text
    log.warning("message truncated from %d to %d bytes", len(raw), limit)
    return raw[:limit].decode("utf-8", errors="ignore")


@dataclass(frozen=True)
class MessageEnvelope:
    sender: int
    step: int  # decision step the message was sent
    text: str

    @property
    def size(self) -> int:
        return len(self.text.encode("utf-8"))

    @property
    def sent_at(self) -> float:
        return self.step * DECISION_INTERVAL

    def to_dict(self):
        return {"sender": self.sender, "step": self.step, "text": self.text, "bytes": self.size}


@dataclass(frozen=True)
class DialogEntry:
    envelope: MessageEnvelope
    age: float
    self_sent: bool = False


@dataclass(frozen=True)
class Dialog:
    owner: int
    entries: tuple[DialogEntry, ...] = ()

    def render(self) -> str:
        if not self.entries:
            return "No messages received."
        lines = []
        for e in self.entries:
            who = "You" if e.self_sent else f"Vehicle {e.envelope.sender}"
            lines.append(f"[{e.age:.1f} s ago] {who}: {e.envelope.text}")
        return "\n".join(lines)

    def latest_from(self, sender: int) -> MessageEnvelope | None:
        best = None
        for e in self.entries:
            if e.envelope.sender == sender and (best is None or e.envelope.step >= best.step):
                best = e.envelope
        return best

    def received(self):
        return [e.envelope for e in self.entries if not e.self_sent]


def prune_dialog(dialog: Dialog, now: float) -> Dialog:
    """Recompute ages at ``now`` and keep entries no older than the window (inclusive)."""
    kept = []
    for e in dialog.entries:
        age = round(now - e.envelope.sent_at, 9)
        if age <= DIALOG_WINDOW:
            kept.append(DialogEntry(e.envelope, age, e.self_sent))
    return Dialog(dialog.owner, tuple(kept))


def recipients(msg: MessageEnvelope, world: WorldState, radius: float = COMM_RADIUS) -> tuple[int, ...]:
    sender = world.vehicle(msg.sender)
    if not sender.comm_capable:
        raise CapabilityError(f"vehicle {msg.sender} has no transceiver")
    out = []
    for v in world.vehicles:
        if v.id == sender.id or not v.comm_capable or v.status == "arrived":
            continue
        if math.hypot(v.x - sender.x, v.y - sender.y) <= radius:
            out.append(v.id)
    return tuple(sorted(out))


def broadcast(msg: MessageEnvelope, world: WorldState, radius: float = COMM_RADIUS) -> tuple[int, ...]:
    """Delivery set for ``msg``: connected vehicles within ``radius`` at send time."""
    return recipients(msg, world, radius)


@dataclass(frozen=True)
class MediationMode:
    kind: str = "parallel"  # parallel | turn_based
    order: tuple[int, ...] = ()

    @property
    def first_speaker(self) -> int | None:
        return self.order[0] if self.order else None


def mediate_turn(mode: MediationMode, step: int, comm_agents=None) -> frozenset:
    """Agents allowed to send at decision ``step``."""
    if mode.kind == "parallel":
        return frozenset(comm_agents if comm_agents is not None else mode.order)
    if mode.kind == "turn_based":
        if not mode.order:
            return frozenset()
        return frozenset({mode.order[step % len(mode.order)]})
    raise ValueError(f"unknown mediation mode {mode.kind!r}")


@dataclass
class MessageRecord:
    step: int
    sender: int
    recipients: tuple[int, ...]
    bytes: int
    text: str

    def to_dict(self):
        return {"step": self.step, "sender": self.sender, "recipients": list(self.recipients),
                "bytes": self.bytes, "payload": self.text}


@dataclass
class Broker:
    """In-process broadcast broker.

    Publishes collected during decision step t are sorted by sender id and
    delivered when ``advance`` moves the clock to t + 1.
    """

    radius: float = COMM_RADIUS
    pending: list = field(default_factory=list)
    inbox: dict = field(default_factory=dict)  # owner -> list of DialogEntry
    log: list = field(default_factory=list)
    step: int = 0

    def publish(self, envelope: MessageEnvelope, world: WorldState) -> tuple[int, ...]:
        if envelope.step != self.step:
            raise ValueError(f"envelope for step {envelope.step} published at step {self.step}")
        text = truncate_utf8(envelope.text)
        if text != envelope.text:
            envelope = MessageEnvelope(envelope.sender, envelope.step, text)
        to = broadcast(envelope, world, self.radius)
        self.pending.append((envelope, to))
        self.log.append(MessageRecord(envelope.step, envelope.sender, to, envelope.size, envelope.text))
        return to

    def advance(self) -> None:
        """Move to the next decision step and deliver everything sent in the previous one."""
        self.step += 1
        for env, to in sorted(self.pending, key=lambda p: p[0].sender):
            self.inbox.setdefault(env.sender, []).append(DialogEntry(env, 0.0, True))
            for rid in to:
                self.inbox.setdefault(rid, []).append(DialogEntry(env, 0.0, False))
        self.pending = []
        now = self.step * DECISION_INTERVAL
        for owner in list(self.inbox):
            d = prune_dialog(Dialog(owner, tuple(self.inbox[owner])), now)
            self.inbox[owner] = list(d.entries)

    def dialog(self, owner: int) -> Dialog:
        entries = sorted(self.inbox.get(owner, ()), key=lambda e: (e.envelope.step, e.envelope.sender))
        return prune_dialog(Dialog(owner, tuple(entries)), self.step * DECISION_INTERVAL)

    def total_bytes(self) -> int:
        return sum(r.bytes for r in self.log)


def bandwidth_mbps(total_bytes: int, duration_s: float) -> float:
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    return total_bytes * 8 / duration_s / 1e6
