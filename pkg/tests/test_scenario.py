import pytest

from lodsim.scenario import (
    ScenarioError,
    build_simulation,
    dump_scenario,
    load_scenario,
    parse_scenario,
    run_scenario,
)


@pytest.fixture(scope="module")
def platoon():
    return load_scenario("platoon")


def test_bundled_scenario(platoon):
    assert [c.name for c in platoon.convoys] == ["A", "B"]
    assert platoon.behaviors["Platoon"] == "platoon"
    assert platoon.load_model().strategy == "partial"


def test_dump_round_trip(platoon, tmp_path):
    text = dump_scenario(platoon)
    assert parse_scenario(text, base_dir=platoon.base_dir) == platoon
    path = tmp_path / "copy.yaml"
    path.write_text(text.replace("model: platoon.model", "model: platoon"))
    assert load_scenario(path).convoys == platoon.convoys


def test_population_is_seeded(platoon):
    def state(seed):
        sim = build_simulation(platoon, seed, "full")
        return {a: dict(sim.world.agents[a].body_in("l1").external_state) for a in sorted(sim.world.agents)}

    assert state(3) == state(3) and state(3) != state(4)
    first = state(3)
    assert len(first) == 12 and first["A-L"]["position"] == (60.0, 0.0)
    sim = build_simulation(platoon, 3, "full")
    assert not sim.world.agents["A-F2"].body_in("l3").active
    assert sim.world.agents["A-F2"].spirit.internal_state["follows"] == "A-F1"


def test_full_mode_never_aggregates(platoon):
    sim, log = run_scenario(platoon, 12, seed=1, mode="full")
    assert sim.stats.aggregations == 0 and len(sim.world.agents) == 12
    sim, log = run_scenario(platoon, 12, seed=1, mode="lod")
    assert sim.stats.aggregations >= 2 and log.events("aggregate")[0].time == 5


def test_diagnostics_wake_inside_the_zone(platoon):
    sim, log = run_scenario(platoon, 30, seed=1, mode="lod")
    woken = {r.agent_id for r in log.events("activate") if r.level == "l3"}
    assert {"A-L", "B-L"} <= woken
    assert sim.stats.steps_by_level["l3"] > 0


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("model: platoon\nbogus: 1\n", "unknown key"),
        ("convoys: []\n", "missing 'model'"),
        ("model: platoon\nbehaviors: {Leader: pilot}\n", "unknown behavior"),
        ("model: platoon\nconvoys: [{name: A, lane: 0, head_x: 0, cruise: 1, followers: -1}]\n", "non-negative"),
        ("model: platoon\nconvoys: [{name: A, lane: 0}]\n", "convoy 0"),
        ("- just\n- a list\n", "mapping"),
        ("model: [unclosed\n", "<string>"),
    ],
)
def test_scenario_errors(text, fragment):
    with pytest.raises(ScenarioError, match=fragment):
        parse_scenario(text)


def test_unknown_line_is_located():
    with pytest.raises(ScenarioError, match="line 2, column 1"):
        parse_scenario("model: platoon\nbogus: 1\n")


def test_missing_behaviors_and_files(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("model: platoon\nbehaviors: {Leader: leader}\n")
    with pytest.raises(ScenarioError, match="no behavior bound for Crew, Follower, Platoon"):
        load_scenario(path)
    with pytest.raises(ScenarioError, match="cannot find"):
        load_scenario(tmp_path / "absent.yaml")


def test_bad_mode(platoon):
    with pytest.raises(ScenarioError):
        build_simulation(platoon, 0, "half")
