from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from parley.comms import (DIALOG_WINDOW, MAX_MESSAGE_BYTES, Broker, CapabilityError, Dialog, DialogEntry,
                          MediationMode, MessageEnvelope, bandwidth_mbps, broadcast, mediate_turn, prune_dialog,
                          truncate_utf8)
from parley.eval import build_policies, run_episode
from parley.percept import caption, collect_facts, line_of_sight
from parley.world.geometry import point_in_rect
from parley.world.kinematics import control_for, step_simulation
from parley.world.roads import two_lane_road
from parley.world.scenario import load_scenario, load_spec, scenario_names
from parley.world.state import VehicleState, WorldState


def _sampled_los(world, a, b, n=3001):
    """Dense sampling of the centre-to-centre segment against every third vehicle."""
    if math.hypot(b.x - a.x, b.y - a.y) > 150.0:
        return False
    ts = np.linspace(0.0, 1.0, n)
    for v in world.vehicles:
        if v.id in (a.id, b.id) or v.status == "arrived":
            continue
        for t in ts:
            if point_in_rect(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), v.rect):
                return False
    return True


def _car(vid, x, lane=1, speed=0.0, comm=False, size=(2.25, 1.0), role="background"):
    m = two_lane_road()
    _, y, h = m.lane(lane).centerline.point_at(x if lane == 1 else m.lane(lane).length - x)
    return VehicleState(vid, x, y, h, speed, lane, half_extents=size, comm_capable=comm, role=role)


# ---------------------------------------------------------------- percept

def test_line_of_sight_examples():
    m = two_lane_road(length=400)
    a, b = _car(1, 10), _car(2, 50)
    assert line_of_sight(WorldState(m, (a, b)), a, b)
    truck = _car(3, 30, size=(6.0, 1.5))
    assert not line_of_sight(WorldState(m, (a, b, truck)), a, b)
    far = _car(4, 310)
    assert not line_of_sight(WorldState(m, (a, far)), a, far)
    with pytest.raises(ValueError):
        line_of_sight(WorldState(m, (a,)), a, a)


def test_caption_alone_on_lane():
    spec = load_spec("perception_overtake", "safe")
    w = load_scenario(spec, 0)
    ego = w.vehicle(101)
    w = w.with_vehicles([replace(ego, speed=8.0)])
    text = caption(w, 101, spec).text
    assert "lane 1" in text and "8.0 m/s" in text
    assert "You see no other vehicles." in text


def test_red_light_collider_hidden_behind_truck_queue():
    spec = load_spec("red_light", "accident_prone")
    w = load_scenario(spec, 0)
    ego, collider = w.vehicle(101), w.vehicle(103)
    assert not _sampled_los(w, ego, collider)
    facts = collect_facts(w, 101, spec)
    assert all(abs(o.distance - round(ego.distance_to(collider), 1)) > 0.05 for o in facts.others)


def test_caption_is_pure():
    spec = load_spec("left_turn", "accident_prone")
    w = load_scenario(spec, 3)
    assert caption(w, 101, spec).text == caption(w, 101, spec).text
    with pytest.raises(KeyError):
        caption(w, 999, spec)


@pytest.mark.parametrize("name", scenario_names())
def test_occlusion_soundness_against_sampling(name):
    """Visible distances equal the brute-force line-of-sight set as the initial world rolls forward."""
    spec = load_spec(name, "accident_prone")
    w = load_scenario(spec, 1)
    for step in range(0, 200, 10):
        for aid in spec.focal_ids:
            ego = w.vehicle(aid)
            if not ego.active:
                continue
            facts = collect_facts(w, aid, spec)
            expected = sorted(round(ego.distance_to(v), 1) for v in w.vehicles
                              if v.id != aid and v.status != "arrived" and _sampled_los(w, ego, v))
            assert sorted(o.distance for o in facts.others) == pytest.approx(expected, abs=0.051)
        # advance with the spawn-time speed targets for one decision interval
        for _ in range(10):
            w = step_simulation(w, {v.id: control_for(v, w.map) for v in w.vehicles if v.active})


def test_removing_an_occluder_never_hides_anything():
    spec = load_spec("red_light", "accident_prone")
    w = load_scenario(spec, 0)
    before = len(collect_facts(w, 101, spec).others)
    without = w.with_vehicles([v for v in w.vehicles if v.id != 102])
    after = collect_facts(without, 101, spec)
    assert len(after.others) >= before - 1  # only the removed truck itself can disappear


# ------------------------------------------------------------------ comms

def _world(*vehicles):
    return WorldState(two_lane_road(length=400), tuple(vehicles))


def test_delivery_next_step_only():
    a, b = _car(1, 10, comm=True), _car(2, 20, comm=True)
    w = _world(a, b)
    broker = Broker()
    broker.publish(MessageEnvelope(1, 0, "hello"), w)
    assert broker.dialog(2).entries == ()
    broker.advance()
    d = broker.dialog(2)
    assert [e.envelope.text for e in d.entries] == ["hello"]
    assert d.entries[0].age == pytest.approx(0.5)


def test_out_of_radius_not_delivered():
    a, b = _car(1, 10, comm=True), _car(2, 130, comm=True)
    assert broadcast(MessageEnvelope(1, 0, "x"), _world(a, b), 100.0) == ()


def test_three_receivers_same_order():
    vs = [_car(1, 10, comm=True), _car(2, 30, comm=True), _car(3, 50, comm=True), _car(4, 70, comm=True)]
    w = _world(*vs)
    broker = Broker()
    broker.publish(MessageEnvelope(3, 0, "from three"), w)
    broker.publish(MessageEnvelope(1, 0, "from one"), w)
    broker.advance()
    orders = [[e.envelope.text for e in broker.dialog(r).entries if not e.self_sent] for r in (2, 4)]
    assert orders[0] == orders[1] == ["from one", "from three"]


def test_unconnected_sender_rejected():
    a, b = _car(1, 10), _car(2, 20, comm=True)
    with pytest.raises(CapabilityError):
        broadcast(MessageEnvelope(1, 0, "x"), _world(a, b))


def test_prune_dialog_boundaries():
    env = [MessageEnvelope(2, s, f"m{s}") for s in (0, 1, 3)]
    d = Dialog(1, tuple(DialogEntry(e, 0.0) for e in env))
    kept = prune_dialog(d, 2.0)  # ages 2.0, 1.5, 0.5
    assert [e.envelope.text for e in kept.entries] == ["m0", "m1", "m3"]
    kept = prune_dialog(d, 2.5)  # ages 2.5, 2.0, 1.0
    assert [e.envelope.text for e in kept.entries] == ["m1", "m3"]
    assert all(e.age <= DIALOG_WINDOW for e in kept.entries)


def test_mediation_modes():
    assert mediate_turn(MediationMode("parallel", (1, 2)), 5) == {1, 2}
    tb = MediationMode("turn_based", (7, 3))
    assert [mediate_turn(tb, s) for s in range(3)] == [{7}, {3}, {7}]
    assert mediate_turn(MediationMode("turn_based", (9,)), 4) == {9}


def test_truncation_keeps_valid_utf8():
    text = "é" * 600  # 1200 bytes
    out = truncate_utf8(text)
    assert len(out.encode()) <= MAX_MESSAGE_BYTES
    out.encode("utf-8").decode("utf-8")


def test_bandwidth_arithmetic():
    assert bandwidth_mbps(300, 0.5) == pytest.approx(0.0048)
    with pytest.raises(ValueError):
        bandwidth_mbps(10, 0.0)


def test_silent_run_sends_nothing():
    from parley.backend import default_mock

    spec = load_spec("highway_merge", "accident_prone")
    res = run_episode(spec, 0, build_policies(spec, "zero_shot", comm=False, backend=default_mock()), comm=False)
    assert res.messages == []
    assert all(d["message"] is None for d in res.decisions)
