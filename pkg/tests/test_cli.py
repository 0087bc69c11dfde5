import json

import jsonschema
import numpy as np
import pytest

from distobs.cli import ConfigError, bundled_example, main, parse_config
from distobs.sim import read_trace_csv


@pytest.fixture
def doc():
    with open(bundled_example()) as fh:
        return json.load(fh)


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_analyze_example(tmp_path, capsys):
    assert main(["analyze", "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "analysis.json").read_text())
    assert out["strategy"] == 1 and out["feasible"]
    blocks = out["solvability"]["blocks"]
    assert [b["V3"] for b in blocks] == [[1, 6], [2, 5], [3, 6]]
    assert abs(blocks[0]["interval_strategy1"]["hi"] - 0.8232) < 5e-5


def test_analyze_to_stdout(capsys):
    assert main(["analyze"]) == 0
    assert json.loads(capsys.readouterr().out)["strategy"] == 1


def test_unreachable_agents_exit_2(tmp_path, doc, capsys):
    W = np.array(doc["network"]["adjacency"], dtype=float)
    W[2, :] = 0.0
    doc["network"]["adjacency"] = W.tolist()
    assert main(["analyze", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "spanning forest" in err and "not reachable" in err


@pytest.mark.parametrize("mutate, needle", [
    (lambda d: d["system"].pop("eigens"), "/system: missing key 'eigens'"),
    (lambda d: d["agents"][0].__setitem__("C", [[1.0, 2.0]]), "/agents/0/C"),
    (lambda d: d["gains"].__setitem__("x", 0.3), "gain key 'x'"),
    (lambda d: d["gains"].__setitem__("1,1", "big"), "/gains/1,1"),
    (lambda d: d["simulation"].__setitem__("T", -3), "/simulation/T"),
    (lambda d: d["simulation"].__setitem__("T", 2.5), "/simulation/T"),
    (lambda d: d["simulation"].__setitem__("xhat0", "warm"), "/simulation/xhat0"),
    (lambda d: d["simulation"].__setitem__("x0", [1.0, 2.0]), "/simulation/x0"),
])
def test_malformed_config_exit_1(tmp_path, doc, capsys, mutate, needle):
    mutate(doc)
    assert main(["analyze", "--config", write(tmp_path, doc)]) == 1
    assert needle in capsys.readouterr().err


def test_invalid_json_exit_1(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["analyze", "--config", str(path)]) == 1
    assert "config error" in capsys.readouterr().err


def test_parse_config_pointer(doc):
    doc["network"]["directed"] = "yes"
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    assert err.value.pointer == "/network/directed"


def test_gain_override_outside_interval_exit_1(tmp_path, doc, capsys):
    doc["gains"]["1,1"] = 0.9
    assert main(["design", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == 1
    assert "outside" in capsys.readouterr().err


@pytest.mark.parametrize("strategy", ["1", "2"])
def test_simulate_outputs(tmp_path, strategy):
    assert main(["simulate", "--strategy", strategy, "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    schema = json.loads((bundled_example().parent / "report.schema.json").read_text())
    jsonschema.validate(report, schema)
    assert report["strategy"] == int(strategy) and report["closed_loop_radius"] < 1
    assert all(m["terminal_ratio"] < 1e-4 for m in report["metrics"].values())
    if strategy == "2":
        assert report["orders"] == {"1": 10, "2": 14, "3": 10, "4": 12, "5": 9, "6": 10}
    cols = read_trace_csv(tmp_path / "trace.csv")
    assert cols["t"][-1] == report["T"] == 500


def test_simulate_zero_horizon(tmp_path, doc):
    doc["simulation"]["T"] = 0
    assert main(["simulate", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == 0
    assert read_trace_csv(tmp_path / "trace.csv")["t"].tolist() == [0]


def test_outputs_are_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["simulate", "--out", str(d), "--wide"]) == 0
    for name in ("trace.csv", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = tmp_path / "c"
    main(["simulate", "--out", str(c), "--seed", "8"])
    assert (a / "report.json").read_bytes() != (c / "report.json").read_bytes()


def test_design_lists_orders(tmp_path):
    assert main(["design", "--strategy", "2", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "design.json").read_text())
    assert doc["bank"]["orders"]["2"] == 14
    assert doc["agents"]["5"]["x_u"] == 7
    assert all(a["form_check"] == "ok" for a in doc["agents"].values())


def test_huge_initial_state_exit_3(tmp_path, doc, capsys):
    doc["simulation"]["x0"] = [1e13] * 9
    assert main(["simulate", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == 3
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["diverged"]["t"] >= 1


def test_verify_example(tmp_path):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert doc["passed"] == doc["total"] > 0 and not doc["problems"]


def test_verify_fuzz(tmp_path):
    assert main(["verify", "--fuzz", "20", "--seed", "3", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert doc["fuzz"]["failures"] == []
    a, t = map(int, doc["fuzz"]["agreements"]["split"].split("/"))
    assert a == t == 20


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "distobs", "analyze"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["feasible"]
