import pytest

from lodsim.cli import main
from lodsim.scenario import data_path


@pytest.mark.parametrize(
    "name, code", [("platoon", 0), ("cycle", 1), ("rule1", 1), ("rule3", 1), ("labeled_symmetric", 1), ("empty", 2)]
)
def test_validate_exit_codes(name, code, capsys):
    assert main(["validate", name]) == code
    out, err = capsys.readouterr()
    if code == 0:
        assert "valid (3 levels)" in out
    elif code == 1:
        assert "violation" in out
    else:
        assert "no levels declared" in err


def test_validate_missing_file(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nope.model")]) == 2


def test_inspect(capsys):
    assert main(["inspect", "platoon"]) == 0
    out = capsys.readouterr().out
    for line in ("  l1 < l2", "  {l1, l3}", "  l1 -> l1: F_Ag1 (spirit-only)", "precedence: F_Ag2 < F_Ag3", "valid"):
        assert line in out.splitlines()
    assert main(["inspect", "rule3"]) == 1


def test_run_uses_env_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LODSIM_OUT", str(tmp_path / "env"))
    assert main(["run", "platoon", "--duration", "2", "--no-plots"]) == 0
    assert sorted(p.name for p in (tmp_path / "env").iterdir()) == ["runlog.csv", "summary.txt"]
    out = capsys.readouterr().out
    assert "wall time:" in out and "wall time" not in (tmp_path / "env" / "summary.txt").read_text()


def test_run_default_output_dir(tmp_path, monkeypatch):
    monkeypatch.delenv("LODSIM_OUT", raising=False)
    monkeypatch.chdir(tmp_path)
    assert main(["run", "platoon", "--duration", "1/2", "--mode", "full"]) == 0
    assert (tmp_path / "lodsim-out" / "firings.png").is_file()


def test_consistency_verdicts(tmp_path, capsys):
    exp = tmp_path / "strict.yaml"
    text = data_path("platoon_experiment.yaml").read_text()
    text = text.replace("scenario: platoon.yaml", "scenario: platoon").replace("tolerance: 0.05", "tolerance: 0.000001")
    text = text.replace("duration: 30", "duration: 12").replace("replicates: 10", "replicates: 1")
    exp.write_text(text.replace("checkpoints: [10, 20]", "checkpoints: [6]"))
    assert main(["consistency", str(exp), "--out", str(tmp_path / "o"), "--no-plots"]) == 1
    assert "consistent: no" in capsys.readouterr().out
    assert main(["consistency", str(exp), "--replicates", "0"]) == 2


@pytest.mark.parametrize(
    "argv",
    [["run", "platoon", "--duration", "-1"], ["run", "platoon", "--mode", "half"], ["frobnicate"], []],
)
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_bad_scenario_file_exits_2(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: platoon\nwheels: 4\n")
    assert main(["run", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["consistency", str(tmp_path / "absent.yaml")]) == 2
