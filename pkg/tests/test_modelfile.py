from pathlib import Path

import pytest

from lodsim.modelfile import (
    ModelFormatError,
    ModelValidationError,
    dump_model,
    load_model,
    model_report,
    parse_model,
)
from lodsim.scenario import data_path

FIXTURES = ["platoon", "cycle", "rule1", "rule3", "labeled_symmetric"]


@pytest.mark.parametrize("name", FIXTURES)
def test_dump_then_parse_round_trips(name):
    model = load_model(data_path(f"{name}.model"), validate=False)
    assert parse_model(dump_model(model)) == model


def test_platoon_model_contents():
    model = load_model(data_path("platoon.model"))
    assert model.levels["l1"].hz == 60 and model.levels["l3"].scale == ("road", "s")
    assert model.hierarchy[("l1", "l2")] == {"F_Ag2", "F_Ag3"}
    assert model.hierarchy[("l3", "l1")] == frozenset()
    assert model.aggregations["F_Ag1"].spirit_only
    assert model.strategy == "partial" and model.precedence == {("F_Ag2", "F_Ag3")}


def test_invalid_models_raise_on_load():
    with pytest.raises(ModelValidationError) as info:
        load_model(data_path("cycle.model"))
    assert "rule2" in str(info.value)
    report = model_report(load_model(data_path("labeled_symmetric.model"), validate=False))
    assert {"label-placement", "signature-mismatch"} <= report.rules()


@pytest.mark.parametrize(
    "text, line, column, fragment",
    [
        ("level a\nlevel a", 2, 7, "declared twice"),
        ("level a hz=0", 1, 7, "positive"),
        ("level a colour=red", 1, 9, "bad level attribute"),
        ("level a\n  wibble a", 2, 3, "unknown directive"),
        ("level a\ninfluence a => b", 2, 11, "expected"),
        ("level a\ninfluence a -> a : F", 2, 20, "only hierarchy"),
        ("level a\naggregation F ([0;2] X) -> Y", 2, 16, "invalid cardinality"),
        ("level a\naggregation F ([1;2] X) -> Y threshold=high", 2, 40, "bad threshold"),
        ("level a\nstrategy random", 2, 10, "strategy must be"),
        ("# nothing\n", 0, 0, "no levels"),
    ],
)
def test_format_errors_name_line_and_column(text, line, column, fragment):
    with pytest.raises(ModelFormatError) as info:
        parse_model(text, "m.model")
    err = info.value
    assert (err.line, err.column) == (line, column)
    assert str(err).startswith(f"m.model:{line}:{column}: ") and fragment in str(err)


def test_missing_file(tmp_path: Path):
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "absent.model")


def test_comments_repeated_edges_and_merged_labels():
    model = parse_model(
        "level a  # first\nlevel b\nhierarchy a -> b : F\nhierarchy a -> b : G, F\nhierarchy a <-> a\n"
    )
    assert model.hierarchy == {("a", "b"): {"F", "G"}, ("a", "a"): frozenset()}
