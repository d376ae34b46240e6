import csv
import json

import pytest

from birkhoff_girsanov.cli import main
from birkhoff_girsanov.scenarios import ConfigError, ScenarioConfig


def _run(tmp_path, *args, name="out"):
    out = tmp_path / name
    return main(["run", *args, "--out", str(out)]), out


def test_drift_change_passes_and_writes_files(tmp_path, capsys):
    code, out = _run(tmp_path, "drift-change", "--paths", "5000", "--grid", "16", "--q", "1")
    assert code == 0
    assert "PASS  eq_pettis" in capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["header"]) == {"timestamp", "version"}
    assert summary["pass"] is True and summary["failed_stages"] == []
    assert (summary["M"], summary["K"], summary["T"], summary["seed"]) == (5000, 16, 1.0, 7)
    with open(out / "martingale_C_under_Q.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["s", "t", "cell", "residual", "tolerance", "pass"]
    assert len(rows) > 1


def test_density_file_layout(tmp_path):
    code, out = _run(tmp_path, "scalar-girsanov", "--paths", "4000", "--grid", "8", "--q", "1")
    assert code == 0
    names = sorted(p.name for p in out.glob("density_*.csv"))
    assert names == ["density_0.25.csv", "density_0.5.csv", "density_1.csv"]
    with open(out / "density_1.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["bin_left", "bin_right"]
    assert rows[0][2:] == [f"component_{i}" for i in range(len(rows[0]) - 2)]


def test_stage_failure_exits_one(tmp_path, capsys):
    code, out = _run(tmp_path, "prop41", "--paths", "20000", "--grid", "16")
    assert code == 1
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pass"] is False and summary["failed_stages"]


@pytest.mark.parametrize("args", [
    ["drift-change", "--paths", "100"],
    ["drift-change", "--r-spec", "cubic"],
    ["scalar-girsanov", "--grid", "10"],
    ["bi1star-convergence", "--grid", "100"],
    ["scalar-girsanov", "--confidence", "1.5"],
    ["scalar-girsanov", "--paths", "0"],
    ["unit-oracles", "--config", "/nonexistent/config.json"],
])
def test_invalid_configuration_exits_two(tmp_path, args):
    code, out = _run(tmp_path, *args)
    assert code == 2
    assert not out.exists()


def test_argument_errors_exit_two(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "drift-change", "--q", "1", "--r-spec", "one"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["run", "no-such-scenario"])
    assert exc.value.code == 2


def test_config_file_precedence(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"paths": 3000, "grid": 8, "seed": 3, "r-spec": "one"}))
    code, out = _run(tmp_path, "drift-change", "--config", str(cfg_file), "--seed", "5")
    assert code == 0
    rec = json.loads((out / "summary.json").read_text())["config"]
    assert (rec["paths"], rec["grid"], rec["seed"], rec["r_spec"]) == (3000, 8, 5, "one")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"pathz": 1}))
    assert _run(tmp_path, "drift-change", "--config", str(bad), name="o2")[0] == 2
    bad.write_text("[1, 2]")
    assert _run(tmp_path, "drift-change", "--config", str(bad), name="o3")[0] == 2
    bad.write_text("{not json")
    assert _run(tmp_path, "drift-change", "--config", str(bad), name="o4")[0] == 2


def test_cli_q_replaces_file_r_spec():
    cfg = ScenarioConfig.build("drift-change", {"r_spec": "one"}, {"q": 0.5})
    assert cfg.q == 0.5 and cfg.r_spec is None
    with pytest.raises(ConfigError):
        ScenarioConfig.build("drift-change", {"r_spec": "one", "q": 1.0}, {})


def test_reruns_are_byte_identical(tmp_path):
    args = ["drift-change", "--paths", "3000", "--grid", "8", "--r-spec", "one"]
    _, a = _run(tmp_path, *args, "--threads", "1", name="a")
    _, b = _run(tmp_path, *args, "--threads", "2", name="b")
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        if name == "summary.json":
            sa = json.loads((a / name).read_text())
            sb = json.loads((b / name).read_text())
            sa.pop("header"), sb.pop("header")
            assert sa == sb
        else:
            assert (a / name).read_bytes() == (b / name).read_bytes()


def test_unit_oracles_scenario(tmp_path):
    code, out = _run(tmp_path, "unit-oracles")
    assert code == 0
    stages = {s["name"]: s for s in json.loads((out / "summary.json").read_text())["stages"]}
    assert {"bi_oracle", "duality", "substitution", "certificates"} <= set(stages)
