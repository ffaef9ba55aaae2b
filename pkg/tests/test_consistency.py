import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from builders import platoon_model
from lodsim.agents import World
from lodsim.consistency import (
    Element,
    ExperimentError,
    dissimilarity,
    dump_experiment,
    load_experiment,
    parse_experiment,
    project,
    register_metric,
    run_experiment,
)
from lodsim.lod import aggregate
from lodsim.platoon import platoon_spec


def test_dissimilarity_examples():
    assert dissimilarity({"x": 10}, {"x": 12}, {"x": 10}) == pytest.approx(0.2)
    assert dissimilarity({"x": 1, "y": 5}, {"x": 1, "y": 5}, {"x": 0, "y": 0}) == 0
    assert dissimilarity({"x": 0, "y": 0}, {"x": 1, "y": 4}, {"x": 2, "y": 4}, "max-range") == 1
    assert dissimilarity({}, {}, {}) == 0
    with pytest.raises(ExperimentError):
        dissimilarity({"x": 1}, {"y": 1}, {})
    with pytest.raises(ExperimentError):
        dissimilarity({"x": 1}, {"x": 1}, {"x": 1}, "nope")


def test_register_metric():
    register_metric("zero", lambda a, b, r: 0.0)
    assert dissimilarity({"x": 0}, {"x": 9}, {"x": 1}, "zero") == 0


values = st.dictionaries(st.sampled_from("abcd"), st.floats(-1e6, 1e6), min_size=1)


@given(values, st.floats(-1e6, 1e6), st.floats(0, 1e6))
def test_dissimilarity_is_symmetric_and_non_negative(a, shift, spread):
    b = {k: v + shift for k, v in a.items()}
    ranges = {k: spread for k in a}
    d = dissimilarity(a, b, ranges)
    assert d >= 0 and d == dissimilarity(b, a, ranges)
    assert dissimilarity(a, a, ranges) == 0


def _world_with_platoon():
    model = platoon_model()
    world = World(model)
    spec = platoon_spec(model.aggregations["F_Ag3"], 0.0)
    members = []
    for k, cls in enumerate(["Leader", "Follower", "Follower"]):
        members.append(
            world.spawn_conceptual_agent(
                cls, [("l1", {"position": (30.0 - 10 * k, 0.0), "speed": 10.0 + k, "lane": 0})],
                {"stamina": 1.0, "cruise": 10.0, "waypoint": 0, "heading": (1.0, 0.0), "follows": "", "gap": 8},
                agent_id=f"v{k}",
            )
        )
    world.spawn_conceptual_agent("Follower", [("l1", {"position": (100.0, 4.0), "speed": 20.0, "lane": 1})], agent_id="solo")
    return world, spec, members


def test_projection_weights_aggregates_by_members():
    world, spec, members = _world_with_platoon()
    mean_x = Element("mean_x", "position", ("Leader", "Follower"), "l1", ("F_Ag3",), 0)
    lane0 = Element("lane0", "speed", ("Leader", "Follower"), "l1", ("F_Ag3",), where={"lane": 0})
    before = project(world, mean_x, {"F_Ag3": spec}), project(world, lane0, {"F_Ag3": spec})
    aggregate(world, spec, members)
    after = project(world, mean_x, {"F_Ag3": spec}), project(world, lane0, {"F_Ag3": spec})
    assert before == after == (pytest.approx(40.0), pytest.approx(11.0))
    leaders = Element("leaders", "speed", ("Leader",), "l1", ("F_Ag3",))
    assert project(world, leaders, {"F_Ag3": spec}) == pytest.approx(11.0)
    nobody = Element("none", "speed", ("Truck",), "l1")
    assert math.isnan(project(world, nobody, {}))


def test_projection_refuses_unlisted_aggregates():
    world, spec, members = _world_with_platoon()
    aggregate(world, spec, members)
    with pytest.raises(ExperimentError, match="not a projection function"):
        project(world, Element("x", "speed", ("Leader",), "l1"), {"F_Ag3": spec})
    with pytest.raises(ExperimentError, match="no mean subfunction"):
        project(world, Element("x", "cruise", ("Leader",), "l1", ("F_Ag3",)), {"F_Ag3": spec})


def test_experiment_round_trip():
    exp = load_experiment("platoon_experiment")
    again = parse_experiment(dump_experiment(exp), base_dir=exp.base_dir)
    assert again == exp and again.seed_list() == list(range(1, 11))


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("scenario: s\nelements: []\n", "missing 'duration'"),
        ("scenario: s\nduration: 1\nelements: []\n", "no significant elements"),
        ("scenario: s\nduration: 1\nextra: 2\nelements: []\n", "unknown keys extra"),
        ("scenario: s\nduration: 1\nelements: [{name: a, variable: v, colour: red}]\n", "colour"),
        ("scenario: s\nduration: 1\nreplicates: 0\nelements: [{name: a, variable: v}]\n", "at least 1"),
        ("scenario: s\nduration: 1\nreplicates: 2\nseeds: [1]\nelements: [{name: a, variable: v}]\n", "seeds"),
        ("scenario: s\nduration: 1\ncheckpoints: [1]\nelements: [{name: a, variable: v}]\n", "strictly inside"),
        ("scenario: s\nduration: 1\ntolerance: -1\nelements: [{name: a, variable: v}]\n", "non-negative"),
        ("scenario: s\nduration: 1\nmetric: l9\nelements: [{name: a, variable: v}]\n", "unknown metric"),
    ],
)
def test_experiment_errors(text, fragment):
    with pytest.raises(ExperimentError, match=fragment):
        parse_experiment(text)


def test_short_experiment_report(tmp_path):
    exp = load_experiment("platoon_experiment")
    exp.replicates, exp.seeds, exp.duration, exp.checkpoints = 2, [5, 6], Fraction(12), [Fraction(6)]
    report = run_experiment(exp)
    assert report.agent_steps["lod"] < report.agent_steps["full"]
    assert set(report.checkpoint_dissimilarity) == {6}
    assert {s.time for s in report.samples} == {0, 6, 12}
    assert len(report.samples) == 2 * 2 * 3 * 5
    rows, summary = report.write(tmp_path)
    lines = rows.read_text().splitlines()
    assert lines[0] == "replicate,seed,mode,time,element,value" and len(lines) == 61
    assert "consistent: yes" in summary.read_text()


def test_unknown_function_in_element(tmp_path):
    exp = load_experiment("platoon_experiment")
    exp.replicates, exp.seeds, exp.duration, exp.checkpoints = 1, None, Fraction(1), []
    exp.elements = [Element("x", "speed", ("Leader",), "l1", ("F_Zz",))]
    with pytest.raises(ExperimentError, match="F_Zz"):
        run_experiment(exp)
