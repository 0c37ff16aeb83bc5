from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parley.eval.metrics import (MetricsError, aggregate, compute_metrics, format_cell, latency_report)
from parley.replay import (LabelingError, ReplayBuffer, Transition, TransitionLabels, label_episode, sample_batch,
                           weight)
from parley.world.kinematics import CollisionEvent
from parley.world.outcome import EpisodeOutcome


def _t(step, kind="go", speed=5.0, others=True, agent=1):
    return Transition(agent, step, f"obs {step}", "", "", kind, kind, None, speed=speed, others_present=others)


def _outcome(results, collisions=(), duration=10.0):
    rewards = {a: {"success": 1, "collision": -1, "timeout": 0}[r] for a, r in results.items()}
    return EpisodeOutcome(results, rewards, tuple(collisions), (), tuple(sorted(results)), duration)


def _labels(others=False, ttc=math.inf, cc=False, stag=False, cs=False):
    return TransitionLabels(others, ttc, cc, stag, cs, (), 0, "timeout")


# ----------------------------------------------------------------- labels

def test_time_to_collision_subtraction():
    buf = ReplayBuffer([_t(17), _t(19)])
    out = label_episode(buf, _outcome({1: "collision"}, [CollisionEvent(1, 2, 10.0, 200)]))
    ttc = {t.step: t.labels.time_to_collision for t in out.transitions}
    assert ttc[17] == pytest.approx(1.5)
    assert ttc[19] == pytest.approx(0.5)
    assert all(t.labels.contributed_to_collision for t in out.transitions)


def test_collision_free_episode_has_infinite_ttc():
    out = label_episode(ReplayBuffer([_t(i) for i in range(5)]), _outcome({1: "success"}))
    assert all(math.isinf(t.labels.time_to_collision) for t in out.transitions)
    assert not any(t.labels.contributed_to_collision for t in out.transitions)


def test_only_accelerating_commands_contribute():
    buf = ReplayBuffer([_t(19, kind="stop"), _t(18, kind="speed_up")])
    out = label_episode(buf, _outcome({1: "collision"}, [CollisionEvent(1, 2, 10.0, 200)]))
    by = {t.step: t.labels for t in out.transitions}
    assert not by[19].contributed_to_collision and by[18].contributed_to_collision


def test_stagnation_labels():
    ts = [_t(i, kind="stop", speed=0.0) for i in range(10)]
    out = label_episode(ReplayBuffer(ts), _outcome({1: "timeout"}))
    stalled = [t.labels.stagnation for t in out.transitions]
    assert stalled == [False] * 6 + [True] * 4  # 3 s of standstill = 7 consecutive samples
    assert all(t.labels.contributed_to_stagnation for t in out.transitions)


def test_labeling_requires_outcome_and_is_frozen():
    with pytest.raises(LabelingError):
        label_episode(ReplayBuffer([_t(0)]), None)
    out = label_episode(ReplayBuffer([_t(0)]), _outcome({1: "success"}))
    with pytest.raises(LabelingError):
        out.add(_t(1))


def test_buffer_jsonl_round_trip():
    out = label_episode(ReplayBuffer([_t(0), _t(1, kind="stop")]), _outcome({1: "success"}))
    again = ReplayBuffer.from_jsonl(out.to_jsonl())
    assert again.transitions == out.transitions and again.labeled


# ---------------------------------------------------------------- weights

def test_weight_examples():
    assert weight(_t(3), _labels(others=True, ttc=0.5, cc=True)) == pytest.approx(20.5)
    assert weight(_t(3, others=False), _labels()) == 1.0
    assert weight(_t(40), _labels(others=True, stag=True, cs=True)) == pytest.approx(9.0)


@given(st.booleans(), st.one_of(st.just(math.inf), st.floats(0, 30)), st.booleans(), st.booleans(), st.booleans(),
       st.integers(0, 59))
def test_weight_at_least_one(o, ttc, cc, stag, cs, step):
    assert weight(_t(step), _labels(o, ttc, cc, stag, cs)) >= 1.0


def test_small_buffer_returns_everything():
    ts = label_episode(ReplayBuffer([_t(i) for i in range(3)]), _outcome({1: "success"})).transitions
    batch = sample_batch(ts, 4, np.random.default_rng(0))
    assert batch.transitions == tuple(ts)


def test_sampling_fixed_seed_repeatable_and_distinct():
    ts = label_episode(ReplayBuffer([_t(i) for i in range(30)]),
                       _outcome({1: "collision"}, [CollisionEvent(1, 2, 14.0, 280)])).transitions
    a = sample_batch(ts, 4, np.random.default_rng(9))
    b = sample_batch(ts, 4, np.random.default_rng(9))
    assert a == b
    assert len({t.step for t in a.transitions}) == 4


def test_sampling_prefers_pre_collision_moments():
    ts = label_episode(ReplayBuffer([_t(i, others=False) for i in range(30)]),
                       _outcome({1: "collision"}, [CollisionEvent(1, 2, 14.5, 290)])).transitions
    rng = np.random.default_rng(1)
    hits = sum(any(t.step >= 25 for t in sample_batch(ts, 4, rng).transitions) for _ in range(300))
    assert hits > 280


def test_empty_buffer_gives_empty_batch():
    assert len(sample_batch([], 4)) == 0


# ---------------------------------------------------------------- metrics

def test_hand_checked_rates():
    outs = [_outcome({1: "success"})] * 28 + [_outcome({1: "collision"}, [CollisionEvent(1, 2, 3.0, 60)]),
                                              _outcome({1: "timeout"})]
    r = compute_metrics(outs, 1, 30)
    assert (round(r.sr, 3), round(r.cr, 3), round(r.tr, 3)) == (0.933, 0.033, 0.033)


def test_non_eligible_agents_do_not_count():
    o = EpisodeOutcome({1: "success", 2: "timeout"}, {1: 1, 2: 0}, (), (), (1,), 5.0)
    assert compute_metrics([o]).sr == 1.0


def test_metrics_errors():
    with pytest.raises(MetricsError):
        compute_metrics([], 1, 0)
    with pytest.raises(MetricsError):
        compute_metrics([_outcome({1: "success"})], 1, 2)


def test_sample_std_reproduces_reported_cell():
    agg = aggregate([0.9, 1.0, 0.9])
    assert agg.fmt() == "93.3 ± 5.8"
    assert agg.sem == pytest.approx(agg.std / math.sqrt(3))
    assert format_cell(aggregate([0, 0, 0]), agg) == "0.0 ± 0.0 / 93.3 ± 5.8"
    assert aggregate([0.5]).std == 0.0


class _Res:
    def __init__(self, msgs, duration, timings=()):
        self.messages = msgs
        self.outcome = _outcome({1: "success"}, duration=duration)
        self.timings = list(timings)


def test_latency_report_bandwidth():
    msgs = [{"bytes": 300} for _ in range(20)]
    latency, m = latency_report([_Res(msgs, 10.0, [{"captioner": 0.01, "reasoning": 1.0, "decision": 0.5}])])
    assert m["bandwidth_mbps"] == pytest.approx(0.0048)
    assert m["bytes_per_decision_step"] == pytest.approx(300.0)
    assert latency == {"captioner": 0.01, "reasoning": 1.0, "decision": 0.5}
