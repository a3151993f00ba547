import json

import pytest

from provpoint.equilibrium import check_conditions, construct_profile
from provpoint.model import Mechanism
from provpoint.scenario import (
    ScenarioError,
    ScenarioTemplate,
    generate_scenario,
    parse_scenario,
    parse_scenario_dict,
    save_scenario,
    scenario_to_dict,
    template_from_dict,
)

MINIMAL_PPR = {
    "version": 1,
    "config": {"mechanism": "PPR", "provision_point": 10.0,
               "refund_budget": 2.0, "deadline_contribution": 4},
    "agents": [
        {"id": 0, "valuation": 8.0},
        {"id": 1, "valuation": 7.0, "arrival_contribution": 2},
    ],
}


def test_parse_minimal_scenario():
    scenario = parse_scenario_dict(MINIMAL_PPR)
    assert scenario.config.mechanism is Mechanism.PPR
    assert len(scenario.agents) == 2
    assert scenario.analysis.run_campaign


def test_round_trip_identity(tmp_path):
    scenario = parse_scenario_dict(MINIMAL_PPR)
    path = tmp_path / "scenario.json"
    save_scenario(scenario, path)
    again = parse_scenario(path)
    assert again == scenario
    assert scenario_to_dict(again) == scenario_to_dict(scenario)


def test_version_required():
    data = dict(MINIMAL_PPR)
    del data["version"]
    with pytest.raises(ScenarioError, match="version"):
        parse_scenario_dict(data)
    data["version"] = 7
    with pytest.raises(ScenarioError, match="version"):
        parse_scenario_dict(data)


def test_two_phase_needs_three_agents():
    data = {
        "version": 1,
        "config": {"mechanism": "PPRx", "provision_point": 10.0,
                   "belief_budget": 2.0, "contribution_budget": 1.0,
                   "deadline_contribution": 4, "deadline_belief": 2},
        "agents": [{"id": 0, "valuation": 8.0}, {"id": 1, "valuation": 7.0}],
    }
    with pytest.raises(ScenarioError, match="at least 3"):
        parse_scenario_dict(data)


def test_negative_budget_rejected():
    data = json.loads(json.dumps(MINIMAL_PPR))
    data["config"]["refund_budget"] = -2.0
    with pytest.raises(ScenarioError, match="refund_budget"):
        parse_scenario_dict(data)


def test_field_errors_name_the_field():
    data = json.loads(json.dumps(MINIMAL_PPR))
    data["agents"][1]["belief_epsilon"] = 0.9
    with pytest.raises(ScenarioError, match=r"agents\[1\].*belief_epsilon"):
        parse_scenario_dict(data)


def test_duplicate_agent_ids_rejected():
    data = json.loads(json.dumps(MINIMAL_PPR))
    data["agents"][1]["id"] = 0
    with pytest.raises(ScenarioError, match="unique"):
        parse_scenario_dict(data)


def test_dual_market_requires_symmetric_beliefs():
    data = {
        "version": 1,
        "config": {"mechanism": "PPRN", "provision_point_pair": [10.0, 5.0],
                   "refund_budget": 2.0, "deadline_contribution": 4},
        "agents": [{"id": 0, "valuation": 8.0, "belief_epsilon": 0.2},
                   {"id": 1, "valuation": -7.0}],
    }
    with pytest.raises(ScenarioError, match="symmetric"):
        parse_scenario_dict(data)


def test_single_market_rejects_negative_valuation():
    data = json.loads(json.dumps(MINIMAL_PPR))
    data["agents"][0]["valuation"] = -1.0
    with pytest.raises(ScenarioError, match="nonnegative"):
        parse_scenario_dict(data)


def test_actions_validated():
    data = json.loads(json.dumps(MINIMAL_PPR))
    data["explicit_actions"] = [{"agent_id": 9, "amount": 1.0, "tick": 1}]
    with pytest.raises(ScenarioError, match="unknown agent"):
        parse_scenario_dict(data)
    data["explicit_actions"] = [{"agent_id": 0, "amount": 1.0, "tick": 9}]
    with pytest.raises(ScenarioError, match="deadline"):
        parse_scenario_dict(data)
    data["explicit_actions"] = [
        {"agent_id": 0, "amount": 1.0, "market": "against", "tick": 1}]
    with pytest.raises(ScenarioError, match="rejection market"):
        parse_scenario_dict(data)


def test_reports_only_for_two_phase():
    data = json.loads(json.dumps(MINIMAL_PPR))
    data["explicit_reports"] = [
        {"agent_id": 0, "information": 0, "prediction": 0.5, "tick": 0}]
    with pytest.raises(ScenarioError, match="belief phase"):
        parse_scenario_dict(data)


def test_arrival_past_deadline_rejected():
    data = json.loads(json.dumps(MINIMAL_PPR))
    data["agents"][1]["arrival_contribution"] = 9
    with pytest.raises(ScenarioError, match="arrival_contribution"):
        parse_scenario_dict(data)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def test_generation_deterministic():
    template = ScenarioTemplate(mechanism=Mechanism.PPRN, agent_count=5)
    first = generate_scenario(template, seed=42)
    second = generate_scenario(template, seed=42)
    assert scenario_to_dict(first) == scenario_to_dict(second)
    other = generate_scenario(template, seed=43)
    assert scenario_to_dict(other) != scenario_to_dict(first)


def test_generation_infeasible_template():
    template = ScenarioTemplate(mechanism=Mechanism.PPRN, agent_count=3,
                                valuation_range=(1.0, 2.0),
                                provision_point_pair=(100.0, 100.0))
    with pytest.raises(ScenarioError, match="infeasible"):
        generate_scenario(template, seed=1)


@pytest.mark.parametrize("mechanism", list(Mechanism))
def test_generated_scenarios_satisfy_conditions(mechanism):
    template = ScenarioTemplate(mechanism=mechanism, agent_count=4)
    for seed in range(8):
        scenario = generate_scenario(template, seed=seed)
        checks = check_conditions(scenario.config, scenario.agents)
        assert all(c.satisfied for c in checks), (mechanism, seed)
        profile = construct_profile(scenario.config, scenario.agents)
        assert profile.feasible


def test_generation_constraint_holds_at_scale():
    # conditions hold by construction across a large seeded batch
    for seed in range(100):
        template = ScenarioTemplate(mechanism=Mechanism.PPSN,
                                    agent_count=3 + seed % 6)
        scenario = generate_scenario(template, seed=seed)
        checks = check_conditions(scenario.config, scenario.agents)
        assert all(c.satisfied for c in checks), seed


def test_template_from_dict():
    template = template_from_dict({
        "mechanism": "PPSN", "agent_count": 4,
        "valuation_range": [3, 9], "fill_fraction": 0.3})
    assert template.mechanism is Mechanism.PPSN
    assert template.valuation_range == (3, 9)
    with pytest.raises(ScenarioError, match="mechanism"):
        template_from_dict({"agent_count": 3})
    with pytest.raises(ScenarioError, match="fill_fraction"):
        template_from_dict({"mechanism": "PPR", "agent_count": 3,
                            "fill_fraction": 0.95})
