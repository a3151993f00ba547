import json

import pytest

from provpoint.cli import main
from provpoint.model import Mechanism
from provpoint.scenario import ScenarioTemplate, generate_scenario, save_scenario


@pytest.fixture
def pprn_scenario(tmp_path):
    scenario = generate_scenario(
        ScenarioTemplate(mechanism=Mechanism.PPRN, agent_count=5), seed=3)
    path = tmp_path / "scenario.json"
    save_scenario(scenario, path)
    return path


def test_check_verb(pprn_scenario, capsys, tmp_path):
    code = main(["check", "--scenario", str(pprn_scenario),
                 "--out", str(tmp_path / "chk")])
    assert code == 0
    out = capsys.readouterr().out
    assert "provision_valuation_exceeds_target" in out
    conditions = json.loads((tmp_path / "chk" / "conditions.json").read_text())
    assert all(c["satisfied"] for c in conditions)


def test_check_verb_negative_verdict(tmp_path, capsys):
    scenario = generate_scenario(
        ScenarioTemplate(mechanism=Mechanism.PPRN, agent_count=5), seed=3)
    data_path = tmp_path / "bad.json"
    save_scenario(scenario, data_path)
    raw = json.loads(data_path.read_text())
    raw["config"]["refund_budget"] = 1e9  # beyond both caps
    data_path.write_text(json.dumps(raw))
    assert main(["check", "--scenario", str(data_path)]) == 3


def test_run_verb_writes_reports(pprn_scenario, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--scenario", str(pprn_scenario), "--out", str(out)])
    assert code == 0
    assert (out / "settlement.csv").exists()
    assert (out / "ledger.csv").exists()
    assert (out / "summary.txt").exists()
    header = (out / "settlement.csv").read_text().splitlines()[0]
    assert header == "id,side,x,securities,refund,belief_reward,realized_utility"
    ledger_header = (out / "ledger.csv").read_text().splitlines()[0]
    assert ledger_header == "tick,agent,market,amount,securities,Q_at_allocation"


def test_run_verb_json_format(pprn_scenario, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(pprn_scenario), "--out", str(out),
                 "--format", "json"]) == 0
    rows = json.loads((out / "settlement.json").read_text())
    assert len(rows) == 5


def test_certify_verb(pprn_scenario, tmp_path, capsys):
    out = tmp_path / "cert"
    code = main(["certify", "--scenario", str(pprn_scenario), "--out", str(out)])
    assert code == 0
    report = json.loads((out / "certification.json").read_text())
    assert report["certified"] is True
    assert report["deviations"] == []
    assert "certified" in capsys.readouterr().out


def test_certify_verb_negative_verdict(tmp_path):
    scenario = generate_scenario(
        ScenarioTemplate(mechanism=Mechanism.PPRN, agent_count=5), seed=3)
    path = tmp_path / "bad.json"
    save_scenario(scenario, path)
    raw = json.loads(path.read_text())
    raw["config"]["refund_budget"] = 1e9
    path.write_text(json.dumps(raw))
    assert main(["certify", "--scenario", str(path)]) == 3


def test_gen_verb_roundtrip(tmp_path, capsys):
    template = tmp_path / "template.json"
    template.write_text(json.dumps({"mechanism": "PPSN", "agent_count": 4}))
    out = tmp_path / "generated.json"
    assert main(["gen", "--template", str(template), "--seed", "9",
                 "--out", str(out)]) == 0
    assert main(["certify", "--scenario", str(out)]) == 0


def test_gen_verb_stdout(tmp_path, capsys):
    template = tmp_path / "template.json"
    template.write_text(json.dumps({"mechanism": "PPR", "agent_count": 3}))
    assert main(["gen", "--template", str(template), "--seed", "1"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["config"]["mechanism"] == "PPR"


def test_demo_verb(tmp_path, capsys):
    assert main(["demo", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "truthful_minus_lying" in out
    lines = (tmp_path / "demo.csv").read_text().splitlines()
    assert lines[0] == "epsilon,securities,truthful_minus_lying"
    assert len(lines) == 1 + 11 * 3


def test_error_exit_code(capsys):
    assert main(["run", "--scenario", "/nonexistent.json"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ")
    assert "\n" not in err.strip()


def test_run_deterministic_bytes(pprn_scenario, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--scenario", str(pprn_scenario), "--out", str(out1)]) == 0
    assert main(["run", "--scenario", str(pprn_scenario), "--out", str(out2)]) == 0
    for name in ("settlement.csv", "ledger.csv", "summary.txt"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_explicit_actions_scenario(tmp_path):
    data = {
        "version": 1,
        "config": {"mechanism": "PPR", "provision_point": 10.0,
                   "refund_budget": 2.0, "deadline_contribution": 4},
        "agents": [{"id": 0, "valuation": 8.0}, {"id": 1, "valuation": 7.0}],
        "explicit_actions": [
            {"agent_id": 0, "amount": 6.0, "tick": 1},
            {"agent_id": 1, "amount": 7.0, "tick": 2},
        ],
        "analysis": {"run_campaign": True},
    }
    path = tmp_path / "explicit.json"
    path.write_text(json.dumps(data))
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(path), "--out", str(out)]) == 0
    rows = (out / "ledger.csv").read_text().splitlines()[1:]
    # second contribution truncated to meet the target exactly
    assert rows[1].split(",")[3] == "4.0"
