import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from lodsim.levels import (
    AggregationSignature,
    HierarchicalModel,
    Level,
    MemberSlot,
    RelationKind,
    check_label_bindings,
    classify_edges,
    close_order,
    edge_kind,
    transitive_closure,
    validate_hierarchical_graph,
)

NODES = "abcde"


def test_edge_kinds():
    edges = {("a", "a"), ("a", "b"), ("b", "c"), ("c", "b")}
    assert edge_kind(edges, ("a", "a")) is RelationKind.SPIRIT_LOOP
    assert edge_kind(edges, ("a", "b")) is RelationKind.INCLUSION
    assert edge_kind(edges, ("b", "c")) is RelationKind.COMPLEMENTARITY


def test_classify_edges_reports_each_symmetric_pair_once():
    model = HierarchicalModel.build(["a", "b"], hierarchy=[("a", "b"), ("b", "a")])
    assert [str(r) for r in classify_edges(model)] == ["a = b"]


def test_inclusion_order_closes_inclusion_edges_only():
    model = HierarchicalModel.build(
        "abcde",
        hierarchy={("a", "b"): ["F"], ("b", "c"): [], ("c", "b"): [], ("c", "d"): ["G"], ("d", "e"): ["H"]},
    )
    closure = transitive_closure(model)
    assert closure.included("c", "e") and not closure.included("a", "d")
    assert closure.complementary("b", "c") and not closure.complementary("a", "b")
    assert validate_hierarchical_graph(model).ok


def test_unknown_level_and_missing_labels_are_reported():
    model = HierarchicalModel.build(["a"], influence=[("a", "zz")], hierarchy=[("a", "a")])
    report = validate_hierarchical_graph(model)
    assert report.rules() == {"unknown-level", "label-placement"}


def test_empty_model_is_invalid():
    assert validate_hierarchical_graph(HierarchicalModel(levels={})).rules() == {"levels"}


def test_undeclared_scales_are_not_compared():
    model = HierarchicalModel.build(
        [Level("a", "x", "s"), Level("b"), Level("c", "x", "s")],
        hierarchy=[("a", "b"), ("b", "a"), ("b", "c"), ("c", "b")],
    )
    assert validate_hierarchical_graph(model).ok


def test_member_slot_cardinalities():
    with pytest.raises(ValueError):
        MemberSlot("X", 0, 2)
    with pytest.raises(ValueError):
        MemberSlot("X", 3, 2)
    assert MemberSlot("X", 2, 4).admits(3) and not MemberSlot("X", 2, 4).admits(5)


def test_duplicate_level_rejected():
    with pytest.raises(ValueError):
        HierarchicalModel.build(["a", "a"])


def _labelled_model():
    return HierarchicalModel.build(
        ["l1", "l2"],
        influence=[("l1", "l2")],
        hierarchy={("l1", "l1"): ["S"], ("l1", "l2"): ["B"]},
    )


def test_label_bindings_accept_matching_signatures():
    sigs = [
        AggregationSignature("S", (MemberSlot("X", 2, 3),), "Crew"),
        AggregationSignature("B", (MemberSlot("X", 1, 4, "l1"),), "Group", "l2"),
    ]
    report = check_label_bindings(_labelled_model(), sigs)
    assert report.ok and not report.warnings


def test_label_bindings_reject_swapped_signatures():
    sigs = [
        AggregationSignature("B", (MemberSlot("X", 2, 3),), "Crew"),
        AggregationSignature("S", (MemberSlot("X", 1, 4, "l1"),), "Group", "l2"),
        AggregationSignature("Z", (MemberSlot("X", 1, 4),), "Extra"),
    ]
    report = check_label_bindings(_labelled_model(), sigs)
    assert report.rules() == {"signature-mismatch", "unplaced-spec"}
    assert check_label_bindings(_labelled_model(), []).rules() == {"unknown-label"}


def test_label_bindings_warn_about_missing_influence():
    model = HierarchicalModel.build(["l1", "l2"], hierarchy={("l1", "l2"): ["B"]})
    sig = AggregationSignature("B", (MemberSlot("X", 1, 4, "l1"),), "Group", "l2")
    report = check_label_bindings(model, [sig])
    assert report.ok and len(report.warnings) == 1


graphs = st.sets(st.tuples(st.sampled_from(NODES), st.sampled_from(NODES)), max_size=14)


@settings(max_examples=300, deadline=None)
@given(graphs)
def test_closure_is_transitive_and_contains_inclusion_edges(edges):
    model = HierarchicalModel.build(NODES, hierarchy=list(edges))
    order = transitive_closure(model).inclusion_order
    for a, b in edges:
        if a != b and (b, a) not in edges:
            assert (a, b) in order
    for (a, b), (c, d) in itertools.product(order, repeat=2):
        if b == c:
            assert (a, d) in order


@settings(max_examples=300, deadline=None)
@given(graphs, st.lists(st.sampled_from([None, ("x", "s"), ("y", "s")]), min_size=5, max_size=5))
def test_graph_rules_match_oracle(edges, scale_list):
    scales = dict(zip(NODES, scale_list))
    levels = [Level(n, *(scales[n] or (None, None))) for n in NODES]
    model = HierarchicalModel.build(levels, hierarchy=list(edges))
    expected, _, _ = oracles.graph_verdict(NODES, edges, scales)
    assert validate_hierarchical_graph(model).rules() & {"rule1", "rule2", "rule3"} == expected


@given(st.sets(st.tuples(st.sampled_from(NODES), st.sampled_from(NODES)), max_size=10))
def test_close_order_is_idempotent(pairs):
    once = close_order(pairs)
    assert close_order(once) == once
