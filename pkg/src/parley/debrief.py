"""Learning from failed episodes.

Three methods share one keyframe sampler:

* debrief: the connected focal agents discuss the failure turn by turn, then
  each one writes down knowledge and a cooperative strategy;
* reflection: each agent analyses its own keyframes alone and keeps knowledge only;
* correction memory: each keyframe gets a corrected action that is stored in a
  retrievable memory and shown to the policy as an example later on.

``training_loop`` runs the episode / learn cycle with the solved criterion,
knowledge resets and checkpointing.
"""
from __future__ import annotations

import json
import logging
import math
import os
import re
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .agents import binding_for, make_policy
from .agents.llm import parse_action
from .backend import Backend, BackendError, debrief_request
from .eval.runner import episode_seed, run_episode, write_logs
from .replay import BATCH_SIZE, SampleBatch, sample_batch
from .world.scenario import ScenarioSpec, load_spec

log = logging.getLogger(__name__)

METHODS = ("debrief", "reflection", "correction_rag", "zero_shot", "none")
SOLVED_STREAK = 20
MAX_RESETS = 3
RESET_AFTER_FAILURES = 10
EPISODE_BUDGET = 60
RATE_WINDOW = 10
DEBRIEF_ROUNDS = 1


class DebriefError(BackendError):
    """A session could not finish; no knowledge was changed."""


class TrainingAborted(RuntimeError):
    """The loop stopped early (backend failure); a checkpoint was written."""


# ------------------------------------------------------------- knowledge

@dataclass(frozen=True)
class KnowledgeRecord:
    agent: int
    scenario: str
    knowledge: str = ""
    strategy: str = ""
    version: int = 0
    success_rate: float = 0.0
    method: str = ""
    episode: int = -1

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError(f"success rate out of range: {self.success_rate}")
        if self.version < 0:
            raise ValueError("version must be non-negative")

    @property
    def empty(self) -> bool:
        return not self.knowledge and not self.strategy

    def revise(self, knowledge=None, strategy=None, method="", episode=-1) -> "KnowledgeRecord":
        return replace(self, knowledge=self.knowledge if knowledge is None else knowledge,
                       strategy=self.strategy if strategy is None else strategy,
                       version=self.version + 1, success_rate=0.0, method=method, episode=episode)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class KnowledgeStore:
    """One JSON file per (scenario, agent, version) under ``root``."""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, rec: KnowledgeRecord) -> Path:
        return self.root / rec.scenario / str(rec.agent) / f"v{rec.version:04d}.json"

    def save(self, rec: KnowledgeRecord) -> Path:
        p = self.path(rec)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_suffix(".tmp")
        tmp.write_text(json.dumps(rec.to_dict(), sort_keys=True, indent=1) + "\n")
        os.replace(tmp, p)
        return p

    def versions(self, scenario: str, agent: int) -> list[KnowledgeRecord]:
        d = self.root / scenario / str(agent)
        if not d.exists():
            return []
        return [KnowledgeRecord.from_dict(json.loads(p.read_text())) for p in sorted(d.glob("v*.json"))]

    def latest(self, scenario: str, agent: int) -> KnowledgeRecord | None:
        vs = self.versions(scenario, agent)
        return vs[-1] if vs else None

    def all_records(self) -> list[KnowledgeRecord]:
        out = []
        for p in sorted(self.root.glob("*/*/v*.json")):
            out.append(KnowledgeRecord.from_dict(json.loads(p.read_text())))
        return out


# ----------------------------------------------------------------- memory

_TOKEN = re.compile(r"[a-z0-9]+(?:\.[0-9]+)?")


def tokens(text: str) -> Counter:
    return Counter(_TOKEN.findall(text.lower()))


def lexical_cosine(a: str, b: str) -> float:
    ta, tb = tokens(a), tokens(b)
    if not ta or not tb:
        return 0.0
    dot = sum(c * tb[t] for t, c in ta.items())
    return dot / (math.sqrt(sum(c * c for c in ta.values())) * math.sqrt(sum(c * c for c in tb.values())))


@dataclass(frozen=True)
class MemoryEntry:
    key: str  # situation text
    command: str
    message: str | None
    tag: str  # success-pattern | correction
    scenario: str

    def __post_init__(self):
        if not self.key.strip():
            raise ValueError("memory entries need a non-empty situation key")
        if self.tag not in ("success-pattern", "correction"):
            raise ValueError(f"unknown memory tag {self.tag!r}")


@dataclass
class Memory:
    """Append-only example store. ``embed`` (text -> vector) replaces lexical similarity when given."""

    entries: list = field(default_factory=list)
    embed: object = None

    def append(self, entry: MemoryEntry) -> None:
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def similarity(self, a: str, b: str) -> float:
        if self.embed is None:
            return lexical_cosine(a, b)
        va, vb = np.asarray(self.embed(a), float), np.asarray(self.embed(b), float)
        na, nb = np.linalg.norm(va), np.linalg.norm(vb)
        return float(va @ vb / (na * nb)) if na and nb else 0.0

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e), sort_keys=True) + "\n" for e in self.entries)

    @classmethod
    def from_jsonl(cls, text: str) -> "Memory":
        return cls([MemoryEntry(**json.loads(line)) for line in text.splitlines() if line.strip()])


def retrieve(memory: Memory, observation: str, k: int = 3) -> list[MemoryEntry]:
    """Top-k entries by similarity of their situation key to ``observation`` (ties keep insertion order)."""
    if not memory.entries or k <= 0:
        return []
    scored = [(-memory.similarity(e.key, observation), i) for i, e in enumerate(memory.entries)]
    scored.sort()
    return [memory.entries[i] for _, i in scored[:k]]


# ---------------------------------------------------------------- prompts

ANALYST_SYSTEM = (
    "You are reviewing a driving episode in a traffic simulation together with the other "
    "connected vehicles involved. Each vehicle is controlled by an agent like you that "
    "chooses a high-level command every 0.5 seconds and can exchange short messages."
)
PROPOSAL_INSTRUCTION = (
    "Think step by step about what went wrong. Propose a joint cooperative strategy for all "
    "connected vehicles: who should say what, and who should do what, in this situation."
)
RESPONSE_INSTRUCTION = (
    "Respond to the proposal from your own perspective: endorse it, or revise it using what "
    "you saw and did during the episode."
)
SUMMARY_INSTRUCTION = (
    'Summarize what you learned for your next attempt. Respond with a JSON object with keys '
    '"knowledge" and "strategy": "knowledge" holds facts about this situation and your own '
    'driving; "strategy" holds the cooperative plan you agreed on.'
)
REFLECTION_INSTRUCTION = (
    'Think step by step about what went wrong and what you should do differently. Respond with '
    'a JSON object with the key "knowledge" holding the lessons for your next attempt.'
)
CORRECTION_INSTRUCTION = (
    'The episode failed. Give the command and message this vehicle should have chosen at the '
    'moment above. Respond with a JSON object with keys "command" and "message".'
)


def _agent_header(spec: ScenarioSpec, aid: int, record: KnowledgeRecord | None) -> str:
    a = spec.agent(aid)
    lines = [f"You are Vehicle {aid} ({a.label}).", f"Your task: {a.task or 'none'}"]
    if record is not None and record.knowledge:
        lines.append(f"Your current knowledge: {record.knowledge}")
    if record is not None and record.strategy:
        lines.append(f"Your current cooperative strategy: {record.strategy}")
    return "\n".join(lines)


def _batch_text(batch: SampleBatch) -> str:
    if not len(batch):
        return "No key moments were recorded."
    return "\n\n".join(f"Moment {i + 1}:\n{t.render()}" for i, t in enumerate(batch.transitions))


def _context(spec, aid, record, batch, feedback) -> str:
    return "\n\n".join([
        "## Who you are\n" + _agent_header(spec, aid, record),
        "## Episode feedback\n" + ("\n".join(feedback) or "The episode failed."),
        "## Key moments from your episode\n" + _batch_text(batch),
    ])


def _json_obj(text: str) -> dict:
    m = re.search(r"\{.*\}", text, re.DOTALL)
    if not m:
        raise ValueError("no JSON object")
    obj = json.loads(m.group(0))
    if not isinstance(obj, dict):
        raise ValueError("not an object")
    return obj


def _ask_json(backend: Backend, messages, keys) -> dict:
    """One retry on unparsable output, then DebriefError."""
    for attempt in range(2):
        msgs = messages if attempt == 0 else messages[:-1] + (
            (messages[-1][0], messages[-1][1] + "\n\nReply with only the JSON object."),)
        text = backend.complete(debrief_request(msgs)).text
        try:
            obj = _json_obj(text)
        except ValueError:
            continue
        if all(k in obj for k in keys):
            return {k: "" if obj[k] is None else str(obj[k]).strip() for k in keys}
    raise DebriefError(f"summary lacked keys {keys}")


# --------------------------------------------------------------- sessions

@dataclass
class DebriefSession:
    participants: tuple[int, ...]
    batches: dict  # agent -> SampleBatch
    feedback: tuple[str, ...]
    rounds: int = DEBRIEF_ROUNDS
    turns: list = field(default_factory=list)  # (agent, kind, text)
    summaries: dict = field(default_factory=dict)  # agent -> (knowledge, strategy)

    @property
    def turn_order(self) -> tuple[int, ...]:
        return self.participants

    def discussion_text(self) -> str:
        return "\n\n".join(f"Vehicle {a} ({kind}): {text}" for a, kind, text in self.turns if kind != "reflection")


def run_debrief(session: DebriefSession, backend: Backend, spec: ScenarioSpec, records: dict) -> dict:
    """Proposal, N round-robin rounds of responses, then one summary per participant.

    Returns agent -> (knowledge, strategy). Raises DebriefError (or the
    backend's error) without side effects if any call fails.
    """
    if not session.participants:
        raise DebriefError("no participants")
    turns = []
    summaries = {}
    for r in range(session.rounds):
        for i, aid in enumerate(session.participants):
            ctx = _context(spec, aid, records.get(aid), session.batches.get(aid, SampleBatch((), ())),
                           session.feedback)
            if r == 0 and i == 0:
                kind, instr = "proposal", PROPOSAL_INSTRUCTION
                user = ctx + "\n\n" + instr
            else:
                kind, instr = "response", RESPONSE_INSTRUCTION
                disc = "\n\n".join(f"Vehicle {a} ({k}): {t}" for a, k, t in turns)
                user = ctx + "\n\n## Discussion so far\n" + disc + "\n\n" + instr
            text = backend.complete(debrief_request((("system", ANALYST_SYSTEM), ("user", user)))).text
            turns.append((aid, kind, text.strip()))
    disc = "\n\n".join(f"Vehicle {a} ({k}): {t}" for a, k, t in turns)
    for aid in session.participants:
        ctx = _context(spec, aid, records.get(aid), session.batches.get(aid, SampleBatch((), ())),
                       session.feedback)
        user = ctx + "\n\n## Discussion\n" + disc + "\n\n" + SUMMARY_INSTRUCTION
        obj = _ask_json(backend, (("system", ANALYST_SYSTEM), ("user", user)), ("knowledge", "strategy"))
        summaries[aid] = (obj["knowledge"], obj["strategy"])
        turns.append((aid, "reflection", json.dumps(obj, sort_keys=True)))
    session.turns = turns
    session.summaries = summaries
    return summaries


def run_reflection(spec: ScenarioSpec, agent: int, batch: SampleBatch, feedback, backend: Backend,
                   record: KnowledgeRecord | None = None) -> str:
    """Single-agent analysis; returns knowledge text only."""
    user = _context(spec, agent, record, batch, tuple(feedback)) + "\n\n" + REFLECTION_INSTRUCTION
    system = "You are reviewing a driving episode in a traffic simulation that ended badly."
    return _ask_json(backend, (("system", system), ("user", user)), ("knowledge",))["knowledge"]


def correct_and_store(spec: ScenarioSpec, agent: int, batch: SampleBatch, feedback, backend: Backend | None,
                      memory: Memory, success: bool) -> Memory:
    """Append one entry per keyframe: the action as taken after a success, a corrected one after a failure."""
    if success:
        for t in batch.transitions:
            memory.append(MemoryEntry(t.observation, t.command, t.message, "success-pattern", spec.name))
        return memory
    new = []
    for t in batch.transitions:
        user = "\n\n".join([
            "## Who you are\n" + _agent_header(spec, agent, None),
            "## Episode feedback\n" + ("\n".join(feedback) or "The episode failed."),
            "## Moment\n" + t.render(),
            CORRECTION_INSTRUCTION,
        ])
        msgs = (("system", ANALYST_SYSTEM), ("user", user))
        for attempt in range(2):
            text = backend.complete(debrief_request(msgs)).text
            try:
                cmd, msg = parse_action(text, 40.0)
                break
            except ValueError:
                msgs = msgs[:-1] + (("user", user + "\n\nReply with only the JSON object."),)
        else:
            raise DebriefError("correction reply could not be parsed")
        new.append(MemoryEntry(t.observation, str(cmd), msg, "correction", spec.name))
    for e in new:  # all or nothing
        memory.append(e)
    return memory


# ---------------------------------------------------------- centralized

@dataclass
class UnifiedMemory:
    """Best knowledge record per scenario, retrievable by situation text."""

    records: dict  # scenario -> KnowledgeRecord

    def key(self, rec: KnowledgeRecord) -> str:
        return f"{rec.scenario.replace('_', ' ')} {rec.scenario}\n{rec.knowledge}\n{rec.strategy}"

    def retrieve(self, query: str, k: int = 1) -> list[KnowledgeRecord]:
        ranked = sorted(self.records.values(), key=lambda r: (-lexical_cosine(self.key(r), query), r.scenario))
        return ranked[:k]


def select_centralized(records) -> UnifiedMemory:
    """Per scenario, the record with the highest estimated success rate; ties go to the lowest version."""
    records = list(records)
    if not records:
        raise ValueError("no knowledge records to select from")
    best = {}
    for r in records:
        cur = best.get((r.scenario, r.agent))
        if cur is None or (r.success_rate, -r.version) > (cur.success_rate, -cur.version):
            best[(r.scenario, r.agent)] = r
    by_scenario = {}
    for (scen, _), r in sorted(best.items()):
        cur = by_scenario.get(scen)
        if cur is None or (r.success_rate, -r.version) > (cur.success_rate, -cur.version):
            by_scenario[scen] = r
    return UnifiedMemory(by_scenario)


# ---------------------------------------------------------------- training

@dataclass
class TrainingConfig:
    scenario: str
    method: str = "debrief"  # learning op: debrief | reflection | correction_rag | zero_shot | none
    policy: str = "llm"  # focal policy family: llm | silent_llm | oracle | naive
    episode_budget: int = EPISODE_BUDGET
    seed: int = 0
    out_dir: str = "runs/train"
    solved_streak: int = SOLVED_STREAK
    max_resets: int = MAX_RESETS
    reset_after: int = RESET_AFTER_FAILURES
    batch_size: int = BATCH_SIZE
    keep_episode_logs: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown training method {self.method!r}")
        if self.episode_budget < 1:
            raise ValueError("episode budget must be positive")


@dataclass
class TrainingState:
    next_episode: int = 0
    streak: int = 0
    fail_streak: int = 0  # consecutive failures since the last knowledge reset
    resets: int = 0
    solved: bool = False
    solved_at: int | None = None
    records: dict = field(default_factory=dict)  # agent -> KnowledgeRecord
    window: dict = field(default_factory=dict)  # agent -> recent successes under the current version
    memory_size: int = 0
    log_lines: int = 0

    def to_dict(self):
        return {
            "next_episode": self.next_episode,
            "streak": self.streak,
            "fail_streak": self.fail_streak,
            "resets": self.resets,
            "solved": self.solved,
            "solved_at": self.solved_at,
            "records": {str(a): r.to_dict() for a, r in sorted(self.records.items())},
            "window": {str(a): list(w) for a, w in sorted(self.window.items())},
            "memory_size": self.memory_size,
            "log_lines": self.log_lines,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            next_episode=d["next_episode"], streak=d["streak"], fail_streak=d["fail_streak"], resets=d["resets"],
            solved=d["solved"], solved_at=d["solved_at"],
            records={int(a): KnowledgeRecord.from_dict(r) for a, r in d["records"].items()},
            window={int(a): list(w) for a, w in d["window"].items()},
            memory_size=d["memory_size"], log_lines=d["log_lines"],
        )


@dataclass
class TrainingResult:
    records: dict
    solved: bool
    solved_at: int | None
    resets: int
    episodes: int
    state: TrainingState


def _variant_for(spec_doc_alt: str, seed: int, episode: int) -> str:
    rng = np.random.default_rng([int(seed), int(episode), 7])
    return "accident_prone" if rng.random() < 0.5 else spec_doc_alt


def _participants(spec: ScenarioSpec) -> tuple[int, ...]:
    return spec.speaker_order or spec.focal_ids


def _write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def training_loop(cfg: TrainingConfig, backend: Backend | None = None, resume: bool = True) -> TrainingResult:
    """Episode/learn cycle with solved criterion, resets and checkpointing.

    State is checkpointed after every episode. If the backend fails (for
    instance the call budget runs out) the episode in progress is discarded,
    the last checkpoint stands and TrainingAborted is raised; running again
    with ``resume=True`` continues from there.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = KnowledgeStore(out / "knowledge")
    ckpt_path = out / "checkpoint.json"
    log_path = out / "training_log.jsonl"
    mem_path = out / "memory.jsonl"
    base = load_spec(cfg.scenario)
    participants = _participants(base)

    if resume and ckpt_path.exists():
        state = TrainingState.from_dict(json.loads(ckpt_path.read_text()))
    else:
        state = TrainingState(records={a: KnowledgeRecord(a, base.name, method=cfg.method) for a in participants})
        for r in state.records.values():
            store.save(r)
        for p in (log_path, mem_path):
            if p.exists():
                p.unlink()
    # drop anything written after the checkpoint
    lines = log_path.read_text().splitlines(keepends=True) if log_path.exists() else []
    _write_text_atomic(log_path, "".join(lines[: state.log_lines]))
    memory = Memory.from_jsonl(mem_path.read_text()) if mem_path.exists() else Memory()
    memory.entries = memory.entries[: state.memory_size]

    def checkpoint():
        state.memory_size = len(memory)
        _write_text_atomic(mem_path, memory.to_jsonl())
        _write_text_atomic(ckpt_path, json.dumps(state.to_dict(), sort_keys=True, indent=1) + "\n")

    checkpoint()
    while state.next_episode < cfg.episode_budget and not state.solved:
        e = state.next_episode
        variant = _variant_for(base.safe_alternative, cfg.seed, e)
        spec = load_spec(cfg.scenario, variant)
        retriever = (lambda text: retrieve(memory, text, 3)) if cfg.method == "correction_rag" else None
        policies = {}
        for a in spec.agents:
            b = binding_for(a, cfg.policy)
            policies[a.id] = make_policy(b, backend=backend, knowledge=state.records.get(a.id), retriever=retriever)
        res = run_episode(spec, episode_seed(cfg.seed, e), policies, comm=cfg.policy != "silent_llm",
                          meta={"episode": e, "method": cfg.method})
        if res.invalid:
            checkpoint()
            raise TrainingAborted(f"episode {e}: {res.error}")
        outcome = res.outcome
        success = outcome.succeeded
        learned = None
        try:
            learned = _learn(cfg, spec, res, state, backend, memory, e, success)
        except BackendError as exc:
            checkpoint()
            raise TrainingAborted(f"episode {e} learning step: {exc}") from exc
        if cfg.keep_episode_logs:
            write_logs(res, out / "episodes" / f"{e:03d}")

        # bookkeeping for this episode
        state.streak = state.streak + 1 if success else 0
        state.fail_streak = 0 if success else state.fail_streak + 1
        for aid, rec in list(state.records.items()):
            w = state.window.setdefault(aid, [])
            w.append(1 if success else 0)
            del w[:-RATE_WINDOW]
            state.records[aid] = replace(rec, success_rate=sum(w) / len(w))
            store.save(state.records[aid])
        if learned:
            for aid, rec in learned.items():
                state.records[aid] = rec
                state.window[aid] = []
                store.save(rec)
        reset = False
        if (not success and state.fail_streak >= cfg.reset_after and state.resets < cfg.max_resets
                and any(not r.empty for r in state.records.values())):
            reset = True
            state.resets += 1
            state.fail_streak = 0
            for aid, rec in list(state.records.items()):
                state.records[aid] = rec.revise("", "", method="reset", episode=e)
                state.window[aid] = []
                store.save(state.records[aid])
        if state.streak >= cfg.solved_streak:
            state.solved, state.solved_at = True, e + 1  # 1-based episode count
        row = {
            "episode": e, "variant": variant, "seed": res.seed, "success": success,
            "results": {str(k): v for k, v in sorted(outcome.results.items())},
            "feedback": list(outcome.feedback), "streak": state.streak, "reset": reset,
            "versions": {str(a): r.version for a, r in sorted(state.records.items())},
            "solved": state.solved,
        }
        with open(log_path, "a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
        state.log_lines += 1
        state.next_episode = e + 1
        checkpoint()
    return TrainingResult(dict(state.records), state.solved, state.solved_at, state.resets, state.next_episode, state)


def _learn(cfg, spec, res, state, backend, memory, episode, success):
    """Run the method's learning op; returns new records (agent -> record) or None."""
    if cfg.method in ("zero_shot", "none"):
        return None
    batches = {}
    for aid in _participants(spec):
        rng = np.random.default_rng([int(cfg.seed), int(episode), int(aid)])
        batches[aid] = sample_batch(res.buffer.for_agent(aid), cfg.batch_size, rng)
    feedback = tuple(res.outcome.feedback)
    if cfg.method == "correction_rag":
        staged = Memory(list(memory.entries))
        for aid, batch in batches.items():
            correct_and_store(spec, aid, batch, feedback, backend, staged, success)
        memory.entries = staged.entries
        return None
    if success:
        return None
    if cfg.method == "debrief":
        session = DebriefSession(_participants(spec), batches, feedback)
        summaries = run_debrief(session, backend, spec, state.records)
        return {aid: state.records[aid].revise(k, s, method="debrief", episode=episode)
                for aid, (k, s) in summaries.items()}
    if cfg.method == "reflection":
        new = {}
        for aid, batch in batches.items():
            k = run_reflection(spec, aid, batch, feedback, backend, state.records.get(aid))
            new[aid] = state.records[aid].revise(k, "", method="reflection", episode=episode)
        return new
    raise ValueError(f"unknown method {cfg.method!r}")
