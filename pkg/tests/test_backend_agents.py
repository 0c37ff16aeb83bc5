from __future__ import annotations

import json

import httpx
import pytest

from fake_remote import fake_remote
from parley.agents import DecisionContext, LLMPolicy, PolicyBinding, binding_for, scripted_policy
from parley.agents.llm import act, context_sections, parse_action, reason
from parley.agents.scripted import REGISTRY, UnknownPolicy
from parley.backend import (BackendError, BackendExhausted, BudgetedBackend, CacheMiss, CompletionRequest,
                            MissingCredentials, MockBackend, RemoteBackend, ReplayBackend, TransientBackendError,
                            default_mock, load_mock_rules, make_backend, policy_request)
from parley.comms import Dialog
from parley.debrief import KnowledgeRecord
from parley.percept import caption
from parley.world.commands import Go, Stop
from parley.world.scenario import load_scenario, load_spec


def _obs(name="perception_overtake", aid=101):
    spec = load_spec(name, "accident_prone")
    w = load_scenario(spec, 0)
    return spec, w, caption(w, aid, spec)


# --------------------------------------------------------------- backends

def test_mock_passthrough_and_default():
    b = MockBackend([("hello", "fixture text")], default="fallback")
    assert b.complete(policy_request((("user", "say hello"),))).text == "fixture text"
    assert b.complete(policy_request((("user", "other"),))).text == "fallback"
    with pytest.raises(BackendError):
        MockBackend([]).complete(policy_request((("user", "x"),)))


def test_request_key_is_content_addressed():
    a = policy_request((("user", "x"),), model="m")
    assert a.key() == policy_request((("user", "x"),), model="m").key()
    assert a.key() != policy_request((("user", "y"),), model="m").key()


def test_record_then_strict_replay(tmp_path):
    rec = ReplayBackend(tmp_path, inner=fake_remote(), strict=False)
    req = policy_request((("system", "s"), ("user", "Think step by step about it")))
    first = rec.complete(req).text
    strict = ReplayBackend(tmp_path)
    assert strict.complete(req).text == first
    with pytest.raises(CacheMiss):
        strict.complete(policy_request((("user", "never seen"),)))


def test_remote_error_mapping():
    def handler(status):
        return lambda request: httpx.Response(status, json={"error": "x"})

    for status, exc in ((429, TransientBackendError), (503, TransientBackendError), (400, BackendError)):
        client = httpx.Client(transport=httpx.MockTransport(handler(status)))
        with pytest.raises(exc):
            RemoteBackend("https://x.invalid", api_key="k", client=client).complete(policy_request((("user", "x"),)))


def test_missing_credentials(monkeypatch):
    monkeypatch.delenv("PARLEY_API_KEY", raising=False)
    with pytest.raises(MissingCredentials):
        make_backend("remote")


def test_budget_exhaustion():
    b = BudgetedBackend(default_mock(), 2)
    req = policy_request((("user", "x"),))
    b.complete(req)
    b.complete(req)
    with pytest.raises(BackendExhausted):
        b.complete(req)


def test_mock_rules_file(tmp_path):
    p = tmp_path / "rules.yaml"
    p.write_text("rules:\n  - ['command', {command: stop, message: null}]\ndefault: ok\n")
    b = load_mock_rules(p)
    assert json.loads(b.complete(policy_request((("user", "command please"),))).text)["command"] == "stop"


# ------------------------------------------------------------ llm policy

def test_parse_action_examples():
    assert parse_action('{"command":"stop","message":"Hold, oncoming car."}', 13.9) == (Stop, "Hold, oncoming car.")
    assert parse_action('Sure: {"command":"go 8"}', 13.9) == (Go(8), None)
    for bad in ("I will stop now.", '{"message": "x"}', '{"command": "fly"}'):
        with pytest.raises(ValueError):
            parse_action(bad, 13.9)


def test_empty_knowledge_adds_no_section():
    sections = context_sections(None, (), "obs", "dialog")
    assert [t for t, _ in sections] == ["Observation", "Message dialog"]
    rec = KnowledgeRecord(1, "x", knowledge="K text", strategy="S text", version=1)
    titles = [t for t, _ in context_sections(rec, (), "obs", None)]
    assert titles == ["Knowledge", "Cooperative strategy", "Observation"]


def test_reason_returns_fixture_text():
    _, _, obs = _obs()
    b = MockBackend([("Think step by step", "fixture reasoning")])
    assert reason(obs, Dialog(101), None, b) == "fixture reasoning"


def test_act_falls_back_to_stop_after_two_bad_replies():
    _, _, obs = _obs()
    b = MockBackend([], default="I am not sure.")
    dec = act(obs, Dialog(101), None, "r", b, speed_limit=13.9)
    assert dec.command == Stop and dec.message is None and dec.fallback
    assert len(dec.transcript) == 2


def test_policy_strips_message_when_not_allowed_to_speak():
    spec, w, _ = _obs()
    pol = LLMPolicy(default_mock())
    ctx = DecisionContext(w, spec, 101, 0, Dialog(101), can_speak=False)
    assert pol.decide(ctx).message is None
    ctx = DecisionContext(w, spec, 101, 0, Dialog(101), can_speak=True)
    assert pol.decide(ctx).message == "Proceeding."


def test_silent_prompts_have_no_dialog():
    spec, w, _ = _obs()
    dec = LLMPolicy(default_mock(), silent=True).decide(DecisionContext(w, spec, 101, 0, Dialog(101)))
    assert all("Message dialog" not in json.dumps(t["prompt"]) for t in dec.transcript)
    assert dec.message is None


# -------------------------------------------------------------- scripted

def test_registry_has_required_library():
    for name in ("stationary", "constant_speed", "red_light_runner", "traffic_flow", "conflict_monitor",
                 "gated_overtake", "gated_go", "merge_requester", "gap_yielder"):
        assert name in REGISTRY
    spec, w, _ = _obs()
    with pytest.raises(UnknownPolicy):
        scripted_policy("no_such_policy", DecisionContext(w, spec, 101, 0, Dialog(101)))


def test_stationary_truck_stops():
    spec, w, _ = _obs()
    dec = scripted_policy("stationary", DecisionContext(w, spec, 102, 0, Dialog(102)))
    assert dec.command == Stop


def test_monitor_truck_says_hold_when_oncoming_car_near():
    spec = load_spec("perception_overtake", "accident_prone")
    w = load_scenario(spec, 0)
    dec = scripted_policy("conflict_monitor", DecisionContext(w, spec, 102, 0, Dialog(102)))
    assert dec.command == Stop and dec.message.startswith("hold")
    safe = load_spec("perception_overtake", "safe")
    w = load_scenario(safe, 0)
    dec = scripted_policy("conflict_monitor", DecisionContext(w, safe, 102, 0, Dialog(102)))
    assert dec.message.startswith("go")


def test_red_light_runner_goes():
    spec = load_spec("red_light", "accident_prone")
    w = load_scenario(spec, 0)
    dec = scripted_policy("red_light_runner", DecisionContext(w, spec, 103, 0, Dialog(103)))
    assert dec.command.kind == "go" and dec.command.target_speed == pytest.approx(w.vehicle(103).speed, abs=0.6)


def test_bindings():
    spec = load_spec("red_light")
    ego, runner = spec.agent(101), spec.agent(103)
    assert binding_for(ego, "llm") == PolicyBinding("llm")
    assert binding_for(ego, "oracle").kind == "oracle"
    assert binding_for(runner, "llm").kind == "scripted"
    with pytest.raises(ValueError):
        PolicyBinding("scripted")


def test_completion_request_text_joins_messages():
    r = CompletionRequest((("system", "a"), ("user", "b")))
    assert r.text == "a\n\nb"
