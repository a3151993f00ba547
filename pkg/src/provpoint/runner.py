"""Scenario orchestration: conditions, profile, campaign, certification,
and report files, in that order, per the scenario's analysis flags."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import reports
from .beliefs import (
    bbr_rewards,
    default_report,
    score_reports,
    side_rewards,
    winning_side_for,
)
from .equilibrium import (
    EquilibriumProfile,
    EquilibriumReport,
    ProfileEntry,
    check_conditions,
    construct_profile,
    certify_ne,
    certify_spe,
)
from .costfn import CostFunction
from .mechanisms import Action, run_campaign, settle
from .model import (
    BeliefSide,
    Market,
    Outcome,
    derive_preference,
)
from .scenario import Scenario, ScenarioError


@dataclass
class RunResult:
    conditions: list
    outcome: Outcome | None = None
    certifications: list[EquilibriumReport] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def all_conditions_hold(self) -> bool:
        return all(c.satisfied for c in self.conditions)

    @property
    def all_certified(self) -> bool:
        return all(r.certified for r in self.certifications)


def profile_from_actions(scenario: Scenario) -> EquilibriumProfile:
    """Interpret explicit plays as a candidate profile for certification.

    Requires at most one action per agent; agents without an action play
    zero at the deadline on their preferred market.
    """
    config = scenario.config
    actions = scenario.explicit_actions or []
    seen: set[int] = set()
    for action in actions:
        if action.agent_id in seen:
            raise ScenarioError(
                "certification of explicit plays requires at most one action "
                f"per agent; agent {action.agent_id} has several")
        seen.add(action.agent_id)
    profile = EquilibriumProfile()
    if config.mechanism.two_phase:
        profile.belief_rewards = conditional_rewards(scenario)
    by_agent = {a.agent_id: a for a in actions}
    cf = (CostFunction.from_params(config.cost_params)
          if config.cost_params is not None else None)
    issued = {Market.FOR: 0.0, Market.AGAINST: 0.0}
    ordered = sorted(scenario.agents,
                     key=lambda a: (by_agent[a.id].tick if a.id in by_agent
                                    else config.deadline_contribution, a.id))
    for agent in ordered:
        action = by_agent.get(agent.id)
        market = (action.market if action is not None
                  else (derive_preference(agent) if config.mechanism.dual_market
                        else Market.FOR))
        amount = action.amount if action is not None else 0.0
        tick = action.tick if action is not None else config.deadline_contribution
        q_price = 0.0
        if cf is not None:
            q_price = (min(issued.values()) if config.mechanism.dual_market
                       else issued[Market.FOR])
        profile.entries[agent.id] = ProfileEntry(
            amount=amount, tick=tick, market=market, issued_at_entry=q_price,
            securities=cf.securities_for(amount, q_price) if cf else 0.0)
        if cf is not None:
            issued[market] += cf.securities_for(amount, issued[market])
    return profile


def conditional_rewards(scenario: Scenario) -> dict[int, float]:
    """Per-agent belief reward conditional on its side winning, from the
    scenario's reports (or truthful defaults)."""
    config = scenario.config
    scenario_reports = scenario.explicit_reports
    if scenario_reports is None:
        scenario_reports = [default_report(a) for a in scenario.agents]
    ledger = score_reports(scenario_reports)
    rewards: dict[int, float] = {}
    for side in BeliefSide:
        rewards.update(side_rewards(ledger, side, config.belief_budget))  # type: ignore[arg-type]
    return rewards


def actions_from_profile(profile: EquilibriumProfile) -> list[Action]:
    actions = [
        Action(agent_id=agent_id, amount=entry.amount, market=entry.market,
               tick=entry.tick)
        for agent_id, entry in profile.entries.items() if entry.amount > 0.0
    ]
    actions.sort(key=lambda a: (a.tick, a.agent_id))
    return actions


def run_scenario(scenario: Scenario, out_dir: str | Path | None = None,
                 grid_step: float | None = None, epsilon: float | None = None,
                 fmt: str = "csv") -> RunResult:
    """Execute the scenario's requested analyses and write report files.

    Outputs are deterministic: rerunning the same scenario produces
    byte-identical files.
    """
    config = scenario.config
    result = RunResult(conditions=check_conditions(config, scenario.agents))

    profile: EquilibriumProfile | None = None
    want_profile = not scenario.analysis.conditions_only
    if want_profile:
        if scenario.explicit_actions is not None:
            profile = profile_from_actions(scenario)
        else:
            rewards = (conditional_rewards(scenario) if config.mechanism.two_phase
                       else None)
            profile = construct_profile(config, scenario.agents, rewards)
        if not profile.feasible:
            result.notes.append(f"profile infeasible: {profile.reason}")

    dual = None
    if want_profile and scenario.analysis.run_campaign and profile.feasible:
        actions = (sorted(scenario.explicit_actions, key=lambda a: (a.tick, a.agent_id))
                   if scenario.explicit_actions is not None
                   else actions_from_profile(profile))
        verdict, dual = run_campaign(config, actions)
        if config.mechanism.two_phase:
            scenario_reports = (scenario.explicit_reports
                                or [default_report(a) for a in scenario.agents])
            ledger = score_reports(scenario_reports)
            rewards = bbr_rewards(ledger, winning_side_for(verdict),
                                  config.belief_budget)  # type: ignore[arg-type]
            result.outcome = settle(config, scenario.agents, verdict, dual,
                                    belief_rewards=rewards)
        else:
            result.outcome = settle(config, scenario.agents, verdict, dual)

    if want_profile:
        if scenario.analysis.certify_ne:
            result.certifications.append(
                certify_ne(config, scenario.agents, profile, grid_step, epsilon))
        if scenario.analysis.certify_spe:
            result.certifications.append(
                certify_spe(config, scenario.agents, profile, grid_step, epsilon))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if result.outcome is not None and dual is not None:
            sides, securities = _settlement_metadata(scenario, dual)
            rows = reports.settlement_rows(scenario.agents, result.outcome,
                                           sides, securities)
            if fmt == "json":
                path = out / "settlement.json"
                path.write_text(reports.settlement_json(rows))
            else:
                path = out / "settlement.csv"
                path.write_text(reports.settlement_csv(rows))
            result.files.append(path)
            path = out / "ledger.csv"
            path.write_text(reports.ledger_csv(dual))
            result.files.append(path)
        for i, report in enumerate(result.certifications):
            suffix = "" if len(result.certifications) == 1 else f"_{i}"
            path = out / f"certification{suffix}.json"
            path.write_text(reports.certification_json(report))
            result.files.append(path)
        path = out / "summary.txt"
        path.write_text(reports.summary_text(
            config, scenario.agents, result.conditions, result.outcome,
            result.certifications, result.notes))
        result.files.append(path)
    return result


def _settlement_metadata(scenario: Scenario, dual) -> tuple[dict[int, str],
                                                            dict[int, float]]:
    """Resolve the settlement 'side' column and per-agent security totals."""
    config = scenario.config
    sides: dict[int, str] = {}
    securities: dict[int, float] = {}
    contributed: dict[int, Market] = {}
    for state in (dual.market_for, dual.market_against):
        for rec in state.ledger:
            contributed.setdefault(rec.agent_id, rec.market)
            securities[rec.agent_id] = securities.get(rec.agent_id, 0.0) + rec.securities
    report_sides: dict[int, BeliefSide] = {}
    if config.mechanism.two_phase:
        for rep in (scenario.explicit_reports
                    or [default_report(a) for a in scenario.agents]):
            report_sides[rep.agent_id] = rep.side
    for agent in scenario.agents:
        if config.mechanism.two_phase:
            side = report_sides.get(agent.id, agent.belief_side)
            sides[agent.id] = side.value
        elif config.mechanism.dual_market:
            market = contributed.get(agent.id, derive_preference(agent))
            sides[agent.id] = market.value
        else:
            sides[agent.id] = Market.FOR.value
    return sides, securities
