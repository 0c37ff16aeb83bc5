"""High-level driving commands and their text grammar."""
from __future__ import annotations

import re
from dataclasses import dataclass

GO = "go"
STOP = "stop"
SLOW_DOWN = "slow_down"
SPEED_UP = "speed_up"
CHANGE_LEFT = "change_left"
CHANGE_RIGHT = "change_right"
KINDS = (GO, STOP, SLOW_DOWN, SPEED_UP, CHANGE_LEFT, CHANGE_RIGHT)

ACCELERATING = frozenset({GO, SPEED_UP})
DECELERATING = frozenset({STOP, SLOW_DOWN})


class CommandError(ValueError):
    """Command text that does not parse into a known atom."""


class RejectedCommand(ValueError):
    """A well-formed command the vehicle cannot execute (e.g. no left lane)."""


@dataclass(frozen=True, slots=True)
class HighLevelCommand:
    kind: str
    target_speed: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CommandError(f"unknown command kind {self.kind!r}")
        if self.kind == GO:
            if self.target_speed is None or self.target_speed <= 0:
                raise CommandError("go needs a positive target speed")
        elif self.target_speed is not None:
            raise CommandError(f"{self.kind} takes no speed")

    def __str__(self):
        if self.kind == GO:
            return f"go {self.target_speed:g}"
        return self.kind.replace("_", " ")

    def to_dict(self):
        return {"kind": self.kind, "target_speed": self.target_speed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d.get("target_speed"))


def Go(target_speed: float) -> HighLevelCommand:
    return HighLevelCommand(GO, float(target_speed))


Stop = HighLevelCommand(STOP)
SlowDown = HighLevelCommand(SLOW_DOWN)
SpeedUp = HighLevelCommand(SPEED_UP)
ChangeLaneLeft = HighLevelCommand(CHANGE_LEFT)
ChangeLaneRight = HighLevelCommand(CHANGE_RIGHT)

_GO_RE = re.compile(r"^go(?:\s+(?:at\s+)?(-?\d+(?:\.\d+)?)\s*(?:m/s|mps)?)?$")
_ALIASES = {
    "stop": Stop,
    "slow down": SlowDown,
    "slowdown": SlowDown,
    "speed up": SpeedUp,
    "speedup": SpeedUp,
    "change left": ChangeLaneLeft,
    "change lane left": ChangeLaneLeft,
    "change to the left lane": ChangeLaneLeft,
    "change right": ChangeLaneRight,
    "change lane right": ChangeLaneRight,
    "change to the right lane": ChangeLaneRight,
}


def parse_command(text: str, speed_limit: float) -> HighLevelCommand:
    """Parse command text such as ``"go 8"`` or ``"Slow  Down"``.

    A go speed above ``speed_limit`` is clamped to it; ``go 0`` means stop and
    a bare ``go`` means the speed limit.
    """
    norm = " ".join(str(text).strip().lower().replace("_", " ").split())
    if norm in _ALIASES:
        return _ALIASES[norm]
    m = _GO_RE.match(norm)
    if m:
        if m.group(1) is None:
            return Go(speed_limit)
        v = float(m.group(1))
        if v <= 0:
            return Stop
        return Go(min(v, speed_limit))
    raise CommandError(f"unparsable command {text!r}")
