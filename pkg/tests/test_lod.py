import itertools
import math
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import generic_spec, spawn, two_level_model
from lodsim.agents import World
from lodsim.levels import AggregationSignature, MemberSlot
from lodsim.lod import (
    AffinityFunction,
    AggregationFunctionSpec,
    AlreadyAggregatedError,
    ClassMismatchError,
    DisaggregationSpec,
    LineFormation,
    LodError,
    LodPolicy,
    RecordMismatchError,
    StaminaSpeedPriority,
    SubfunctionInput,
    SubfunctionSpec,
    aggregate,
    disaggregate,
    feasible_groups,
    lod_policy_tick,
    precedence_layers,
)


def _pair_world(n=3):
    world = World(two_level_model())
    members = [spawn(world, "Car", (float(10 * k), 0.0), speed=10.0 + k, agent_id=f"c{k}") for k in range(n)]
    return world, generic_spec([("Car", 2, 4)]), members


def test_record_is_taken_at_aggregation_time_and_kept():
    world, spec, members = _pair_world()
    agent, record = aggregate(world, spec, members, now=3)
    assert agent.aggregate.record is record and record.created_at == 3
    assert agent.body_in("l2").external_state == {"position": (10.0, 0.0), "speed": 11.0}
    memo = {r.variable: r.value for r in record.members[0].retained}
    assert memo["position"] == (Fraction(-10), Fraction(0)) and memo["tag"] == "t"


def test_aggregate_then_disaggregate_errors():
    world, spec, members = _pair_world()
    with pytest.raises(ClassMismatchError):
        aggregate(world, spec, members + [spawn(world, "Bus", (0, 0))])
    agent, _ = aggregate(world, spec, members)
    with pytest.raises(AlreadyAggregatedError):
        aggregate(world, spec, members)
    other = generic_spec([("Car", 2, 4)], name="G")
    with pytest.raises(RecordMismatchError):
        disaggregate(world, other, agent)
    with pytest.raises(LodError, match="no default layout"):
        disaggregate(world, spec, agent, record=None)
    disaggregate(world, spec, agent)
    with pytest.raises(AlreadyAggregatedError):
        disaggregate(world, spec, agent)


def test_layout_fallback_keeps_the_mean():
    world = World(two_level_model())
    members = [spawn(world, "Car", (float(k), 0.0), agent_id=f"c{k}") for k in range(4)]
    sig = AggregationSignature("F", (MemberSlot("Car", 2, 4, "l1"),), "Group", "l2")
    spec = AggregationFunctionSpec(
        sig, 0.0,
        subfunctions=(SubfunctionSpec("p", (SubfunctionInput("Car", "position", "l1"),), "position"),),
        disaggregation=DisaggregationSpec(layout=LineFormation("position", 2.0)),
    )
    agent, record = aggregate(world, spec, members)
    assert record is None
    rebuilt = disaggregate(world, spec, agent)
    xs = [m.body_in("l1").external_state["position"][0] for m in rebuilt]
    assert math.fsum(xs) / 4 == 1.5 and xs == [4.5, 2.5, 0.5, -1.5]


def test_spirit_only_aggregation_keeps_bodies_in_place():
    world = World(two_level_model())
    members = [spawn(world, "Car", (k, 0), stamina=k / 4, agent_id=f"c{k}") for k in range(3)]
    sig = AggregationSignature("S", (MemberSlot("Car", 2, 3),), "Crew")
    spec = AggregationFunctionSpec(
        sig, 0.0, subfunctions=(SubfunctionSpec("s", (SubfunctionInput("Car", "stamina"),), "stamina", "internal"),)
    )
    crew, _ = aggregate(world, spec, members)
    assert sorted(crew.bodies) == ["c0@l1", "c1@l1", "c2@l1"]
    assert crew.spirit.internal_state == {"stamina": 0.25}
    assert sorted(world.levels["l1"].bodies) == ["c0@l1", "c1@l1", "c2@l1"]
    assert crew.represented() == Counter({"Car": 3})
    world.check_invariants()
    back = disaggregate(world, spec, crew)
    assert [sorted(m.bodies) for m in back] == [["c0@l1"], ["c1@l1"], ["c2@l1"]]


def test_nested_aggregates_report_their_leaves():
    world, spec, members = _pair_world(4)
    a, _ = aggregate(world, spec, members[:2])
    b, _ = aggregate(world, spec, members[2:])
    assert world.represented() == Counter({"Car": 4})


def test_spec_shape_checks():
    sig = AggregationSignature("F", (MemberSlot("A", 1, 2, "l1"), MemberSlot("A", 1, 2, "l1")), "G", "l2")
    with pytest.raises(ValueError):
        AggregationFunctionSpec(sig, 0)
    sig = AggregationSignature("F", (MemberSlot("A", 1, 2, "l1"),), "G")
    with pytest.raises(ValueError):
        AggregationFunctionSpec(sig, 0)


def test_affinity_scores():
    world, _, members = _pair_world(3)
    aff = AffinityFunction("speed", (("speed", 1.0),), decimals=3)
    assert aff.score(members[:1]) == 1.0
    assert aff.score(members[:2]) == 0.5  # 1 / (1 + 1)
    assert aff.score(members) == round((0.5 + 0.5 + 1 / 3) / 3, 3)


def test_stamina_speed_priority():
    prio = StaminaSpeedPriority(20)
    assert prio([(1.0, 10.0), (0.5, 40.0)]) == 0.5
    with pytest.raises(ValueError):
        StaminaSpeedPriority(0)


def test_precedence_layers():
    assert precedence_layers(["a", "b", "c"], [("a", "b"), ("b", "c")]) == [["a"], ["b"], ["c"]]
    assert precedence_layers(["a", "b", "c"], [("a", "c")]) == [["a", "b"], ["c"]]


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.tuples(st.sampled_from("AB"), st.integers(0, 8)), min_size=0, max_size=7),
    st.integers(1, 2), st.integers(0, 2), st.sampled_from([None, 2, 5]),
)
def test_feasible_groups_match_bruteforce(agents, lo, extra, radius):
    world = World(two_level_model())
    pool = [spawn(world, cls, (x, 0), agent_id=f"a{i}") for i, (cls, x) in enumerate(agents)]
    sig = AggregationSignature("F", (MemberSlot("A", lo, lo + extra, "l1"), MemberSlot("B", 1, 2, "l1")), "G", "l2")
    spec = AggregationFunctionSpec(sig, 0.0, radius=radius)
    got = {frozenset(m.agent_id for m in g) for g in feasible_groups(spec, pool)}
    want = set()
    for k in range(1, len(pool) + 1):
        for combo in itertools.combinations(pool, k):
            na = sum(m.class_name == "A" for m in combo)
            nb = k - na
            close = radius is None or all(
                abs(p.body_in("l1").external_state["position"][0] - q.body_in("l1").external_state["position"][0]) <= radius
                for p, q in itertools.combinations(combo, 2)
            )
            if lo <= na <= lo + extra and 1 <= nb <= 2 and close:
                want.add(frozenset(m.agent_id for m in combo))
    assert got == want


def test_policy_tick_order_and_refractory():
    world, spec, members = _pair_world(2)
    spec = generic_spec([("Car", 2, 4)], refractory=Fraction(2))
    agent, _ = aggregate(world, spec, members)
    split = {"on": True}
    policy = LodPolicy([spec], triggers=(lambda w, a, t: split["on"],))
    events = lod_policy_tick(world, policy, 1)
    assert [e.kind for e in events] == ["disaggregate"]
    assert world.refractory == {"c0": 3, "c1": 3}
    split["on"] = False
    assert lod_policy_tick(world, policy, 2) == []
    events = lod_policy_tick(world, policy, 3)
    assert [e.kind for e in events] == ["aggregate"] and not world.refractory


def test_activation_hook_and_disabled_aggregation():
    world, spec, members = _pair_world(2)
    policy = LodPolicy([spec], activation=lambda w, b, t: b.owner != "c0", aggregation_enabled=False)
    events = lod_policy_tick(world, policy, 0)
    assert [(e.kind, e.detail) for e in events] == [("deactivate", "c0@l1")]
    assert len(world.agents) == 2 and lod_policy_tick(world, None, 0) == []
