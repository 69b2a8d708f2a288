import csv
import json
import subprocess
import sys

import pytest

from riskshare.cli import (
    ScenarioError,
    emit_report,
    fixture_names,
    load_fixture,
    main,
    parse_document,
    parse_scenario,
    run_scenario,
)

MINIMAL = {
    "schema": "riskshare/1",
    "space": {"atoms": [{"p": 1.0, "x": 1.0}]},
    "agents": [{"utility": {"family": "power", "params": {"alpha": 2}}}],
    "task": {"type": "upf", "lambda_grid": 2},
}


def write(tmp_path, doc, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_minimal_parses_with_defaults():
    # [TRIVIAL]
    cfg = parse_document(MINIMAL)
    assert cfg.seed == 0
    assert cfg.agents[0].weighting.is_identity
    assert cfg.endowments is None


def test_theta_not_summing_to_one(tmp_path):
    # [TRIVIAL] the error names the field
    doc = dict(MINIMAL, agents=MINIMAL["agents"] * 2, endowments={"type": "proportional", "theta": [0.5, 0.4]})
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(write(tmp_path, doc))
    assert any("endowments.theta" in e and "0.9" in e for e in exc.value.errors)


def test_all_errors_reported():
    doc = dict(MINIMAL, agents=[{"utility": {"family": "sigmoid"}}, {"utility": "missing"}], task={"type": "dance"})
    with pytest.raises(ScenarioError) as exc:
        parse_document(doc)
    text = " | ".join(exc.value.errors)
    assert "agents[0].utility" in text and "agents[1].utility" in text and "task.type" in text


def test_malformed_json_has_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"schema": "riskshare/1",\n  "space": }')
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(path)
    assert ":2:" in exc.value.errors[0]


def test_example3_fixture_weights():
    # [PAPER] lambda_S = 5/4 and lambda_T = 1
    cfg = load_fixture("ex_rars_a")
    assert cfg.params["lambda"] == [1.25, 1.25, 1, 1]
    assert [g for g in cfg.groups] == ["S", "S", "T", "T"]


def test_reproduce_threshold():
    # [PAPER] c = 5/9
    doc = run_scenario(parse_document({"schema": "riskshare/1", "task": {"type": "reproduce", "target": "ex_rars_a"}}))
    assert doc["status"] == "ok"
    assert abs(doc["quantities"]["ex_rars_a.threshold"] - 5 / 9) <= 1e-6


def test_every_fixture_reproduces():
    # [PAPER] each shipped fixture meets its own expectations
    for name in fixture_names():
        doc = run_scenario(load_fixture(name), reproducing=True)
        assert doc["status"] == "ok", (name, [c for c in doc["checks"] if not c["pass"]], doc["errors"])


def test_upf_csv(tmp_path):
    # [PAPER] the trace passes through (0.422, 0.684) at equal weights
    doc = run_scenario(load_fixture("ex_upf_not_simplex"))
    emit_report(doc, tmp_path, "csv")
    with open(tmp_path / "upf.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["utility_1", "utility_2"]
    pts = [(float(a), float(b)) for a, b in rows[1:]]
    assert len(pts) == 21
    assert min(abs(a - 27 / 64) + abs(b - 175 / 256) for a, b in pts) < 2e-3
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert {f["file"] for f in manifest["files"]} >= {"upf.csv", "quantities.csv"}


def test_improve_example1_win_probabilities():
    # [PAPER] each of n agents wins with probability 1/n
    doc = run_scenario(load_fixture("ex_simple"))
    rows = doc["tables"]["improvement"]["rows"]
    assert [r[1] for r in rows] == pytest.approx([0.25] * 4)


def test_equilibrium_certificate_table(tmp_path):
    # [DERIVED] one row per agent in the certificate csv
    doc = run_scenario(load_fixture("thm5"))
    emit_report(doc, tmp_path, "csv")
    with open(tmp_path / "certificate_homogeneous.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 3
    assert rows[0][:3] == ["agent", "budget", "budget_residual"]


def test_json_is_byte_identical(tmp_path):
    # [TRIVIAL] determinism contract
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        emit_report(run_scenario(load_fixture("prop_s5")), out, "json")
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_heuristic_results_warn():
    doc = run_scenario(load_fixture("prop_rdu_constant"))
    assert any("heuristic" in w for w in doc["warnings"])


def test_exit_codes(tmp_path, capsys):
    good = write(tmp_path, MINIMAL, "good.json")
    assert main(["upf", "--scenario", str(good)]) == 0
    bad = write(tmp_path, dict(MINIMAL, space={"probs": [0.5, 0.6], "values": [1, 2]}), "bad.json")
    assert main(["upf", "--scenario", str(bad)]) == 2
    assert main(["upf", "--scenario", str(good), "--format", "csv"]) == 2
    assert main(["improve", "--scenario", str(good)]) == 2  # task mismatch
    fx = str(load_fixture("ex_rars3").origin)
    rars3 = tmp_path / "rars3.json"
    from importlib import resources

    rars3.write_text((resources.files("riskshare") / "fixtures" / "ex_rars3.json").read_text())
    assert main(["equilibrium", "--scenario", str(rars3)]) == 3  # two certificates are invalid by design
    assert main(["reproduce", "--scenario", str(rars3)]) == 0
    assert fx.endswith("ex_rars3.json")
    failing = json.loads(rars3.read_text())
    failing["expect"] = [{"quantity": "L", "value": 0.5, "tol": 1e-12}]
    rars3.write_text(json.dumps(failing))
    assert main(["reproduce", "--scenario", str(rars3)]) == 3
    capsys.readouterr()


def test_engine_error_exit(tmp_path, capsys):
    # the rdu sum bound refuses X beyond the linear range
    doc = {
        "schema": "riskshare/1",
        "space": {"atoms": [{"p": 1.0, "x": 5.0}]},
        "agents": [{"utility": {"family": "linear_log"}, "weighting": {"family": "tk"}, "count": 8}],
        "task": {"type": "rdu", "analyses": ["sum_optimal"]},
    }
    assert main(["rdu", "--scenario", str(write(tmp_path, doc))]) == 1
    capsys.readouterr()


def test_batch_directory(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("RISKSHARE_THREADS", "2")
    batch = tmp_path / "batch"
    batch.mkdir()
    write(batch, MINIMAL, "one.json")
    write(batch, dict(MINIMAL, seed=3), "two.json")
    out = tmp_path / "out"
    assert main(["upf", "--scenario", str(batch), "--out", str(out), "--format", "text"]) == 0
    assert (out / "one" / "report.txt").exists() and (out / "two" / "report.txt").exists()
    assert "one: ok" in capsys.readouterr().out


def test_console_script_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "riskshare", "reproduce", "--scenario", "ex_simple", "--format", "text"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "PASS" in proc.stdout
