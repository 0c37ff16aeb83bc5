"""Collision/success/timeout rates, multi-seed aggregation and communication cost."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..comms import bandwidth_mbps
from ..world.kinematics import DECISION_INTERVAL
from ..world.outcome import COLLISION, SUCCESS


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class Rates:
    cr: float
    sr: float
    tr: float

    def as_percent(self):
        return (100 * self.cr, 100 * self.sr, 100 * self.tr)


def compute_metrics(outcomes, n_eligible: int | None = None, m: int | None = None) -> Rates:
    """Rates normalised by group size N and episode count M.

    Each reward-eligible agent counts once per episode as collided, succeeded
    or timed out; TR is the remainder so the three always sum to one.
    """
    outcomes = list(outcomes)
    m = len(outcomes) if m is None else m
    if n_eligible is None:
        n_eligible = len(outcomes[0].eligible) if outcomes else 0
    if n_eligible <= 0 or m <= 0:
        raise MetricsError("need at least one eligible agent and one episode")
    if len(outcomes) != m:
        raise MetricsError(f"expected {m} outcomes, got {len(outcomes)}")
    coll = succ = 0
    for o in outcomes:
        for aid in o.eligible:
            res = o.results[aid]
            coll += res == COLLISION
            succ += res == SUCCESS
    cr = coll / (n_eligible * m)
    sr = succ / (n_eligible * m)
    return Rates(cr, sr, 1.0 - sr - cr)


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float  # sample standard deviation across seeds
    sem: float

    def fmt(self, scale=100.0) -> str:
        return f"{scale * self.mean:.1f} ± {scale * self.std:.1f}"


def aggregate(values) -> Aggregate:
    """Mean, sample std (n - 1 divisor) and standard error over per-seed values."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise MetricsError("nothing to aggregate")
    if arr.size == 1:
        return Aggregate(float(arr[0]), 0.0, 0.0)
    std = float(arr.std(ddof=1))
    return Aggregate(float(arr.mean()), std, std / math.sqrt(arr.size))


def format_cell(cr: Aggregate, sr: Aggregate) -> str:
    """Table cell in percent, e.g. ``0.0 ± 0.0 / 93.3 ± 5.8``."""
    return f"{cr.fmt()} / {sr.fmt()}"


@dataclass
class SeedResult:
    seed: int
    rates: Rates | None
    episodes: int
    invalid: int
    outcomes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "seed": self.seed,
            "episodes": self.episodes,
            "invalid": self.invalid,
            "cr": self.rates.cr if self.rates else None,
            "sr": self.rates.sr if self.rates else None,
            "tr": self.rates.tr if self.rates else None,
            "outcomes": [o.to_dict() for o in self.outcomes],
        }


@dataclass
class EvalReport:
    scenario: str
    variant: str
    method: str
    comm: str
    seeds: list = field(default_factory=list)  # SeedResult
    latency: dict = field(default_factory=dict)
    messages: dict = field(default_factory=dict)

    @property
    def valid_seeds(self):
        return [s for s in self.seeds if s.rates is not None]

    def cr(self) -> Aggregate:
        return aggregate(s.rates.cr for s in self.valid_seeds)

    def sr(self) -> Aggregate:
        return aggregate(s.rates.sr for s in self.valid_seeds)

    def tr(self) -> Aggregate:
        return aggregate(s.rates.tr for s in self.valid_seeds)

    @property
    def invalid(self) -> int:
        return sum(s.invalid for s in self.seeds)

    def cell(self) -> str:
        return format_cell(self.cr(), self.sr()) if self.valid_seeds else "n/a"

    def to_dict(self):
        d = {
            "scenario": self.scenario,
            "variant": self.variant,
            "method": self.method,
            "comm": self.comm,
            "invalid_episodes": self.invalid,
            "seeds": [s.to_dict() for s in self.seeds],
            "latency": self.latency,
            "messages": self.messages,
        }
        if self.valid_seeds:
            for key, agg in (("cr", self.cr()), ("sr", self.sr()), ("tr", self.tr())):
                d[key] = {"mean": agg.mean, "std": agg.std, "sem": agg.sem}
            d["cell"] = self.cell()
        return d


def seed_result(seed: int, results) -> SeedResult:
    """Score one seed's episodes; invalid episodes are counted and left out."""
    valid = [r.outcome for r in results if not r.invalid and r.outcome is not None]
    invalid = len(results) - len(valid)
    rates = compute_metrics(valid) if valid else None
    return SeedResult(seed, rates, len(valid), invalid, valid)


def latency_report(results) -> tuple[dict, dict]:
    """Mean per-call latencies and message volume for a set of episodes.

    Accepts EpisodeResult objects (with ``timings``, ``messages`` and an
    outcome duration).
    """
    cats = {"captioner": [], "reasoning": [], "decision": []}
    total_bytes, duration, n_msgs, decision_steps = 0, 0.0, 0, 0
    for r in results:
        for row in r.timings:
            for c in cats:
                if row.get(c) is not None:
                    cats[c].append(row[c])
        total_bytes += sum(m["bytes"] for m in r.messages)
        n_msgs += len(r.messages)
        if r.outcome is not None:
            duration += r.outcome.duration
            decision_steps += int(math.ceil(r.outcome.duration / DECISION_INTERVAL - 1e-9))
    latency = {c: (float(np.mean(v)) if v else None) for c, v in cats.items()}
    messages = {
        "total_bytes": total_bytes,
        "messages": n_msgs,
        "mean_bytes_per_message": total_bytes / n_msgs if n_msgs else 0.0,
        "bytes_per_decision_step": total_bytes / decision_steps if decision_steps else 0.0,
        "bandwidth_mbps": bandwidth_mbps(total_bytes, duration) if duration > 0 else 0.0,
    }
    return latency, messages
