from __future__ import annotations

import json
import math
from collections import Counter

import numpy as np
import pytest

import parley.debrief as debrief
from closed_loop_mock import STRATEGY, closed_loop_mock
from parley.backend import BudgetedBackend, MockBackend, default_mock
from parley.debrief import (DebriefError, DebriefSession, KnowledgeRecord, KnowledgeStore, Memory, MemoryEntry,
                            TrainingAborted, TrainingConfig, correct_and_store, lexical_cosine, retrieve,
                            run_debrief, run_reflection, select_centralized, training_loop)
from parley.eval.runner import EpisodeResult
from parley.replay import ReplayBuffer, SampleBatch, Transition
from parley.world.kinematics import CollisionEvent
from parley.world.outcome import EpisodeOutcome
from parley.world.scenario import load_spec


def _batch(n=4, agent=101):
    ts = tuple(Transition(agent, i, f"situation {i} truck ahead", "", "", "go 8", "go", None) for i in range(n))
    return SampleBatch(ts, (1.0,) * n)


class Recorder(MockBackend):
    def __init__(self, inner):
        super().__init__()
        self.inner, self.requests = inner, []

    def complete(self, req):
        self.requests.append(req)
        return self.inner.complete(req)


# -------------------------------------------------------------- records

def test_record_revision_and_store(tmp_path):
    r = KnowledgeRecord(101, "red_light")
    assert r.empty and r.version == 0
    r2 = r.revise("k", "s", method="debrief", episode=3)
    assert r2.version == 1 and r2.knowledge == "k" and r2.strategy == "s"
    store = KnowledgeStore(tmp_path)
    store.save(r)
    p = store.save(r2)
    assert p.name == "v0001.json" and p.parent.name == "101"
    assert store.latest("red_light", 101) == r2
    with pytest.raises(ValueError):
        KnowledgeRecord(1, "x", success_rate=1.5)


# ------------------------------------------------------------- sessions

def test_two_agent_session_turn_structure():
    spec = load_spec("highway_merge")
    rec = Recorder(closed_loop_mock())
    session = DebriefSession((101, 102), {101: _batch(), 102: _batch(agent=102)}, ("Vehicle 101 collided.",))
    out = run_debrief(session, rec, spec, {})
    kinds = [(a, k) for a, k, _ in session.turns]
    assert kinds == [(101, "proposal"), (102, "response"), (101, "reflection"), (102, "reflection")]
    assert len(rec.requests) == 4
    assert out[101][1] == out[102][1] == STRATEGY


def test_failed_session_changes_nothing():
    spec = load_spec("highway_merge")
    session = DebriefSession((101, 102), {101: _batch()}, ())
    with pytest.raises(Exception):
        run_debrief(session, BudgetedBackend(closed_loop_mock(), 3), spec, {})
    assert session.turns == [] and session.summaries == {}


def test_unparsable_summary_aborts_session():
    spec = load_spec("highway_merge")
    b = MockBackend([("Propose|Respond to", "ok")], default="no json here")
    with pytest.raises(DebriefError):
        run_debrief(DebriefSession((101,), {101: _batch()}, ()), b, spec, {})


def test_reflection_prompt_holds_every_keyframe():
    spec = load_spec("red_light")
    rec = Recorder(default_mock())
    k = run_reflection(spec, 101, _batch(4), ["Vehicle 101 collided with Vehicle 103 after 4 seconds."], rec)
    assert k == "Slow down early when the view ahead is blocked."
    prompt = rec.requests[0].text
    assert sum(prompt.count(f"Moment {i}:") for i in range(1, 10)) == 4


def test_correct_and_store():
    spec = load_spec("red_light")
    mem = Memory()
    b = MockBackend([('keys "command" and "message"', '{"command": "stop", "message": "waiting"}')])
    correct_and_store(spec, 101, _batch(2), ["crash"], b, mem, success=False)
    assert [(e.command, e.message, e.tag) for e in mem.entries] == [("stop", "waiting", "correction")] * 2
    correct_and_store(spec, 101, _batch(3), [], None, mem, success=True)
    assert len(mem) == 5 and mem.entries[-1].tag == "success-pattern"


# --------------------------------------------------------------- memory

def _brute_cosine(a, b):
    ta, tb = Counter(a.lower().split()), Counter(b.lower().split())
    vocab = sorted(set(ta) | set(tb))
    va = np.array([ta[w] for w in vocab], float)
    vb = np.array([tb[w] for w in vocab], float)
    if not va.any() or not vb.any():
        return 0.0
    return float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))


def test_lexical_cosine_matches_brute_force():
    rng = np.random.default_rng(0)
    words = ["truck", "lane", "stop", "go", "merge", "car", "light", "red", "yield", "ahead"]
    for _ in range(100):
        a = " ".join(rng.choice(words, rng.integers(1, 12)))
        b = " ".join(rng.choice(words, rng.integers(1, 12)))
        assert lexical_cosine(a, b) == pytest.approx(_brute_cosine(a, b), abs=1e-12)


def test_retrieve_examples():
    assert retrieve(Memory(), "anything") == []
    one = Memory([MemoryEntry("red light ahead", "stop", None, "correction", "red_light")])
    assert retrieve(one, "completely different", k=1) == one.entries
    mem = Memory([MemoryEntry(k, "go 8", None, "success-pattern", "x")
                  for k in ("merge onto highway", "truck blocks lane", "red light queue")])
    assert retrieve(mem, "truck blocks lane", k=1)[0].key == "truck blocks lane"


def test_pluggable_embedder():
    mem = Memory([MemoryEntry("a", "stop", None, "correction", "x"), MemoryEntry("b", "go 5", None, "correction", "x")],
                 embed=lambda t: [1.0, 0.0] if t in ("a", "q") else [0.0, 1.0])
    assert retrieve(mem, "q", k=1)[0].key == "a"


def test_select_centralized_tie_rule():
    recs = [KnowledgeRecord(1, "s", "k", "", v, r) for v, r in ((3, 0.6), (5, 0.9), (7, 0.9))]
    assert select_centralized(recs).records["s"].version == 5
    single = KnowledgeRecord(1, "t", "only", "", 1, 0.2)
    assert select_centralized([single]).records == {"t": single}
    with pytest.raises(ValueError):
        select_centralized([])


def test_unified_memory_answers_tagged_queries():
    recs = [KnowledgeRecord(1, name, f"{name} lesson", "", 1, 0.5)
            for name in ("red_light", "highway_merge", "left_turn", "perception_overtake")]
    um = select_centralized(recs)
    for name in ("red_light", "highway_merge", "left_turn", "perception_overtake"):
        query = f"scenario {name.replace('_', ' ')}: what should I do?"
        assert um.retrieve(query)[0].scenario == name


# ------------------------------------------------------------- training

def _fake_runner(schedule):
    """Replace run_episode with a scripted success/failure sequence."""
    calls = []

    def fake(spec, seed, policies, comm=True, meta=None, **kw):
        i = len(calls)
        calls.append(i)
        ok = schedule(i)
        res = {a: ("success" if ok else "collision") for a in spec.focal_ids}
        coll = () if ok else (CollisionEvent(spec.focal_ids[0], 999, 3.0, 60),)
        outcome = EpisodeOutcome(res, {a: 1 if ok else -1 for a in res}, coll, () if ok else ("crash",),
                                 tuple(spec.eligible_ids), 5.0)
        return EpisodeResult(spec.name, spec.config_variant, seed, outcome, ReplayBuffer([], labeled=True))

    return fake, calls


def test_resets_and_budget(tmp_path, monkeypatch):
    fake, calls = _fake_runner(lambda i: False)
    monkeypatch.setattr(debrief, "run_episode", fake)
    res = training_loop(TrainingConfig("red_light", method="debrief", policy="naive", out_dir=str(tmp_path)),
                        default_mock())
    assert len(calls) == 60 and res.episodes == 60 and not res.solved
    assert res.resets == 3
    log = [json.loads(x) for x in (tmp_path / "training_log.jsonl").read_text().splitlines()]
    assert [r["episode"] for r in log if r["reset"]] == [9, 19, 29]
    # a reset writes an empty record with a bumped version
    rec = KnowledgeStore(tmp_path / "knowledge").versions("red_light", 101)
    resets = [r for r in rec if r.method == "reset"]
    assert len(resets) == 3 and all(r.empty for r in resets)
    versions = [r.version for r in rec]
    assert versions == sorted(set(versions))


def test_no_knowledge_no_resets(tmp_path, monkeypatch):
    fake, _ = _fake_runner(lambda i: False)
    monkeypatch.setattr(debrief, "run_episode", fake)
    res = training_loop(TrainingConfig("red_light", method="none", policy="naive", out_dir=str(tmp_path)))
    assert res.resets == 0 and res.episodes == 60


def test_solved_needs_twenty_in_a_row(tmp_path, monkeypatch):
    fake, _ = _fake_runner(lambda i: i != 19)
    monkeypatch.setattr(debrief, "run_episode", fake)
    res = training_loop(TrainingConfig("red_light", method="debrief", policy="naive", out_dir=str(tmp_path)),
                        default_mock())
    assert res.solved and res.solved_at == 40 and res.episodes == 40


def test_rates_track_the_current_version(tmp_path, monkeypatch):
    fake, _ = _fake_runner(lambda i: i >= 1)
    monkeypatch.setattr(debrief, "run_episode", fake)
    res = training_loop(TrainingConfig("red_light", method="debrief", policy="naive", out_dir=str(tmp_path),
                                       episode_budget=6), default_mock())
    # failure at 0 creates version 1; episodes 1..5 succeed under it
    assert res.records[101].version == 1 and res.records[101].success_rate == 1.0


def test_abort_and_resume_reaches_identical_state(tmp_path):
    cfg = dict(scenario="highway_merge", method="debrief", policy="llm", episode_budget=25)
    full = training_loop(TrainingConfig(out_dir=str(tmp_path / "a"), **cfg), closed_loop_mock())
    with pytest.raises(TrainingAborted):
        training_loop(TrainingConfig(out_dir=str(tmp_path / "b"), **cfg), BudgetedBackend(closed_loop_mock(), 300))
    ck = json.loads((tmp_path / "b" / "checkpoint.json").read_text())
    assert 0 < ck["next_episode"] < full.episodes
    resumed = training_loop(TrainingConfig(out_dir=str(tmp_path / "b"), **cfg), closed_loop_mock())
    assert resumed.records == full.records and resumed.solved_at == full.solved_at
    for name in ("checkpoint.json", "training_log.jsonl", "memory.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    files = lambda d: sorted(p.relative_to(d).as_posix() for p in d.rglob("v*.json"))  # noqa: E731
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_correction_memory_grows_during_training(tmp_path):
    res = training_loop(TrainingConfig("highway_merge", method="correction_rag", policy="llm",
                                       out_dir=str(tmp_path), episode_budget=3), closed_loop_mock())
    mem = Memory.from_jsonl((tmp_path / "memory.jsonl").read_text())
    assert res.state.memory_size == len(mem) > 0
    assert math.isfinite(res.records[101].success_rate)
