import json

import pytest

from swq import cli, field3 as f3, qrep
from swq.errors import FormatError


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(task, cfg, out, seed=0, extra=()):
    return cli.main([task, "--config", cfg, "--out", str(out),
                     "--seed", str(seed), *extra])


def test_verify_algebra_pass(tmp_path):
    cfg = write_config(tmp_path, {
        "name": "classical", "representation": {"builtin": "classical_sw"},
        "sphere_samples": 500})
    code = run("verify-algebra", cfg, tmp_path / "out")
    assert code == 0
    payload = json.loads((tmp_path / "out" / "report.json").read_text())
    rep = payload["report"]
    assert rep["task"] == "verify-algebra" and rep["pass"]
    rows = rep["scenarios"][0]["checks"]
    assert all("." in r["id"] for r in rows)       # stable identifiers
    assert (tmp_path / "out" / "summary.csv").exists()
    assert any((tmp_path / "out" / "figures").glob("*.png"))
    assert "timestamp" in payload["metadata"]


def test_corrupted_representation_fails(tmp_path):
    rep = qrep.builtin("classical_sw")
    J = rep.space.J.copy()
    J[2] = -J[2]
    doc = {
        "dim_S": 4,
        "J": J.reshape(3, -1).tolist(),
        "group_G": {"name": "u(1)", "dim_g": 1, "structure": [0.0], "killing": [1.0]},
        "rho_G": rep.rho_G.reshape(1, -1).tolist(),
        "tags": [],
    }
    rep_path = tmp_path / "bad_rep.json"
    rep_path.write_text(json.dumps(doc))
    cfg = write_config(tmp_path, {
        "name": "bad", "representation": {"file": str(rep_path)},
        "geometry": {"N": 4}})
    code = run("dgla", cfg, tmp_path / "out")
    assert code == 1
    payload = json.loads((tmp_path / "out" / "report.json").read_text())
    sc = payload["report"]["scenarios"][0]
    assert not sc["pass"] and "AxiomViolation" in sc["error"]


def test_config_errors(tmp_path):
    missing = tmp_path / "nope.json"
    assert run("dgla", str(missing), tmp_path / "out") == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{\"scenarios\": []}")
    assert run("dgla", str(bad), tmp_path / "out") == 2


def test_determinism(tmp_path):
    cfg = write_config(tmp_path, {
        "name": "toy", "systems": 5, "block_systems": 10})
    run("kuranishi", cfg, tmp_path / "o1", seed=3, extra=("--no-figures",))
    run("kuranishi", cfg, tmp_path / "o2", seed=3, extra=("--no-figures",))
    a = json.loads((tmp_path / "o1" / "report.json").read_text())["report"]
    b = json.loads((tmp_path / "o2" / "report.json").read_text())["report"]
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_scenario_grid_and_jobs(tmp_path):
    cfg = write_config(tmp_path, {"scenarios": [
        {"name": "b", "systems": 3, "block_systems": 5},
        {"name": "a", "systems": 3, "block_systems": 5},
    ]})
    code = run("kuranishi", cfg, tmp_path / "out", extra=("--jobs", "2",
                                                          "--no-figures"))
    assert code == 0
    payload = json.loads((tmp_path / "out" / "report.json").read_text())
    names = [sc["scenario"] for sc in payload["report"]["scenarios"]]
    assert names == sorted(names)


def test_snapshot_task_and_errors(tmp_path):
    cfg = write_config(tmp_path, {
        "name": "snap", "representation": {"builtin": "classical_sw"},
        "geometry": {"N": 4}, "backend": "trig"})
    code = run("snapshot", cfg, tmp_path / "out")
    assert code == 0
    snap = tmp_path / "out" / "snap.swqf"
    assert snap.exists()
    blob = snap.read_bytes()
    trunc = tmp_path / "trunc.swqf"
    trunc.write_bytes(blob[:-9])
    with pytest.raises(FormatError):
        f3.load_field(trunc)


def test_expand_task_report_content(tmp_path):
    cfg = write_config(tmp_path, {"name": "exp", "orders": [1],
                                  "eps_grid": [0.2, 0.1, 0.05]})
    code = run("expand", cfg, tmp_path / "out")
    assert code == 0
    payload = json.loads((tmp_path / "out" / "report.json").read_text())
    entry = payload["report"]["scenarios"][0]["data"]["surrogate"][0]
    assert entry["slope"] >= 3.5
    assert any((tmp_path / "out" / "figures").glob("*remainders.png"))
