"""A rule-following stand-in model for the merge scenario.

Without the agreed strategy in its prompt it drives naively (the merger cuts
in near the end of the ramp, the highway car holds speed). Once the prompt
carries the strategy, the merger announces itself and waits for room while
the highway car slows down on request.
"""
from __future__ import annotations

import json
import re

from parley.backend import MockBackend

STRATEGY = "Yield on merge request: the highway car slows to 9 m/s when asked and the merging car merges ahead of it."
KNOWLEDGE = "Vehicle 102 was alongside me at the end of the ramp; cutting in without asking caused the crash."


def _num(pattern, text, default=None):
    m = re.search(pattern, text)
    return float(m.group(1)) if m else default


def _policy(req):
    text = req.text
    me = int(_num(r"You are Vehicle (\d+)", text, 0))
    cooperative = STRATEGY in text
    dialog = text.split("## Message dialog", 1)[-1]
    if me == 101:
        lane3 = "You are on lane 3" in text
        remaining = _num(r"([\d.]+) m of it remain", text, 999.0)
        behind = _num(r"Vehicle 102 on lane 1 is ([\d.]+) m behind", text)
        if not lane3:
            return {"command": "go 14", "message": None}
        if not cooperative:
            return {"command": "change left" if remaining <= 40 else "go 14", "message": None}
        if behind is not None and behind >= 12:
            return {"command": "change left", "message": "merging now"}
        return {"command": "go 14", "message": "request: let me merge ahead of you"}
    if me == 102:
        if cooperative and re.search(r"request", dialog):
            return {"command": "go 9", "message": "yield: slowing down, merge ahead of me."}
        return {"command": "go 14", "message": None}
    return {"command": "go 8", "message": None}


def closed_loop_mock() -> MockBackend:
    return MockBackend(rules=[
        (r'keys "knowledge" and "strategy"', json.dumps({"knowledge": KNOWLEDGE, "strategy": STRATEGY})),
        (r'keys "command" and "message"', lambda req: json.dumps(_policy(req))),
        (r"Propose a joint cooperative strategy", "Proposal: " + STRATEGY),
        (r"Respond to the proposal", "Agreed. " + STRATEGY),
        (r"Think step by step", "Checking the gap to the other lane before acting."),
    ])
