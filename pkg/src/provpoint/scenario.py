"""Scenario files: parsing, validation, serialization, seeded generation.

A scenario is a JSON document with a mandatory ``version`` field, the
campaign config, the agent list, optional explicit plays and belief reports,
analysis flags, and a seed. Validation happens entirely at parse time and
error messages name the offending field and the violated invariant.

Generated scenarios come from a template (mechanism, agent count, valuation
and belief-offset ranges) with targets and budgets chosen so the existence
conditions hold by construction; generation is reproducible per seed using
the stdlib Mersenne Twister (``random.Random``).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .beliefs import BeliefReport
from .mechanisms import Action
from .model import (
    AgentProfile,
    BeliefSide,
    CampaignConfig,
    CostParams,
    Market,
    Mechanism,
    aggregate_valuations,
    derive_preference,
)

SCENARIO_VERSION = 1


class ScenarioError(ValueError):
    """Malformed scenario file or violated invariant."""


@dataclass(frozen=True)
class AnalysisFlags:
    run_campaign: bool = True
    certify_ne: bool = False
    certify_spe: bool = False
    conditions_only: bool = False


@dataclass
class Scenario:
    config: CampaignConfig
    agents: list[AgentProfile]
    explicit_actions: list[Action] | None = None
    explicit_reports: list[BeliefReport] | None = None
    analysis: AnalysisFlags = field(default_factory=AnalysisFlags)
    seed: int = 0


def _require(data: dict, key: str, context: str):
    if key not in data:
        raise ScenarioError(f"{context}: missing required field '{key}'")
    return data[key]


def _enum_value(enum_cls, raw, context: str):
    try:
        return enum_cls(raw)
    except ValueError:
        valid = ", ".join(e.value for e in enum_cls)
        raise ScenarioError(f"{context}: '{raw}' is not one of: {valid}") from None


def parse_scenario_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario: top level must be an object")
    version = _require(data, "version", "scenario")
    if version != SCENARIO_VERSION:
        raise ScenarioError(
            f"scenario.version: expected {SCENARIO_VERSION}, got {version!r}")

    raw_cfg = _require(data, "config", "scenario")
    mech = _enum_value(Mechanism, _require(raw_cfg, "mechanism", "scenario.config"),
                       "scenario.config.mechanism")
    pair = raw_cfg.get("provision_point_pair")
    if pair is not None:
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise ScenarioError(
                "scenario.config.provision_point_pair: expected [for, against]")
        pair = (float(pair[0]), float(pair[1]))
    cost_raw = raw_cfg.get("cost_params")
    try:
        cost = None if cost_raw is None else CostParams(
            liquidity=float(cost_raw.get("liquidity", 1.0)),
            fixed_leg=float(cost_raw.get("fixed_leg", 0.0)))
        config = CampaignConfig(
            mechanism=mech,
            provision_point=(None if raw_cfg.get("provision_point") is None
                             else float(raw_cfg["provision_point"])),
            provision_point_pair=pair,
            refund_budget=(None if raw_cfg.get("refund_budget") is None
                           else float(raw_cfg["refund_budget"])),
            belief_budget=(None if raw_cfg.get("belief_budget") is None
                           else float(raw_cfg["belief_budget"])),
            contribution_budget=(None if raw_cfg.get("contribution_budget") is None
                                 else float(raw_cfg["contribution_budget"])),
            deadline_contribution=int(raw_cfg.get("deadline_contribution", 0)),
            deadline_belief=(None if raw_cfg.get("deadline_belief") is None
                             else int(raw_cfg["deadline_belief"])),
            cost_params=cost,
        )
    except ValueError as exc:
        raise ScenarioError(f"scenario.config: {exc}") from None

    raw_agents = _require(data, "agents", "scenario")
    if not isinstance(raw_agents, list) or not raw_agents:
        raise ScenarioError("scenario.agents: expected a nonempty list")
    agents: list[AgentProfile] = []
    for i, raw in enumerate(raw_agents):
        context = f"scenario.agents[{i}]"
        side = _enum_value(BeliefSide, raw.get("belief_side", "provision_likely"),
                           f"{context}.belief_side")
        try:
            agents.append(AgentProfile(
                id=int(_require(raw, "id", context)),
                valuation=float(_require(raw, "valuation", context)),
                belief_epsilon=float(raw.get("belief_epsilon", 0.0)),
                belief_side=side,
                arrival_belief=int(raw.get("arrival_belief", 0)),
                arrival_contribution=int(raw.get("arrival_contribution", 0)),
            ))
        except ValueError as exc:
            raise ScenarioError(f"{context}: {exc}") from None
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise ScenarioError("scenario.agents: agent ids must be unique")

    actions = None
    if data.get("explicit_actions") is not None:
        actions = []
        for i, raw in enumerate(data["explicit_actions"]):
            context = f"scenario.explicit_actions[{i}]"
            market = _enum_value(Market, raw.get("market", "for"),
                                 f"{context}.market")
            actions.append(Action(
                agent_id=int(_require(raw, "agent_id", context)),
                amount=float(_require(raw, "amount", context)),
                market=market,
                tick=int(raw.get("tick", 0)),
            ))

    reports = None
    if data.get("explicit_reports") is not None:
        reports = []
        for i, raw in enumerate(data["explicit_reports"]):
            context = f"scenario.explicit_reports[{i}]"
            try:
                reports.append(BeliefReport(
                    agent_id=int(_require(raw, "agent_id", context)),
                    information=int(_require(raw, "information", context)),
                    prediction=float(_require(raw, "prediction", context)),
                    tick=int(raw.get("tick", 0)),
                ))
            except ValueError as exc:
                raise ScenarioError(f"{context}: {exc}") from None

    raw_flags = data.get("analysis", {})
    flags = AnalysisFlags(
        run_campaign=bool(raw_flags.get("run_campaign", True)),
        certify_ne=bool(raw_flags.get("certify_ne", False)),
        certify_spe=bool(raw_flags.get("certify_spe", False)),
        conditions_only=bool(raw_flags.get("conditions_only", False)),
    )
    scenario = Scenario(config=config, agents=agents, explicit_actions=actions,
                        explicit_reports=reports, analysis=flags,
                        seed=int(data.get("seed", 0)))
    validate_scenario(scenario)
    return scenario


def validate_scenario(scenario: Scenario) -> None:
    """Cross-field invariants the dataclass validators cannot see alone."""
    config, agents = scenario.config, scenario.agents
    mech = config.mechanism
    if mech.two_phase and len(agents) < 3:
        raise ScenarioError(
            f"scenario.agents: {mech.value} belief scoring requires at least "
            f"3 agents, got {len(agents)}")
    known = {a.id for a in agents}
    for a in agents:
        context = f"scenario.agents[id={a.id}]"
        if a.arrival_contribution > config.deadline_contribution:
            raise ScenarioError(
                f"{context}.arrival_contribution: {a.arrival_contribution} is past "
                f"the contribution deadline {config.deadline_contribution}")
        if mech.two_phase and a.arrival_belief > config.deadline_belief:  # type: ignore[operator]
            raise ScenarioError(
                f"{context}.arrival_belief: {a.arrival_belief} is past the "
                f"belief deadline {config.deadline_belief}")
        if mech.dual_market and a.belief_epsilon != 0.0:
            raise ScenarioError(
                f"{context}.belief_epsilon: {mech.value} models symmetric "
                "beliefs; the offset must be 0")
        if not mech.dual_market and a.valuation < 0:
            raise ScenarioError(
                f"{context}.valuation: {mech.value} admits nonnegative "
                "valuations only")
    for i, action in enumerate(scenario.explicit_actions or []):
        context = f"scenario.explicit_actions[{i}]"
        if action.agent_id not in known:
            raise ScenarioError(f"{context}.agent_id: unknown agent {action.agent_id}")
        if action.amount < 0:
            raise ScenarioError(f"{context}.amount: must be nonnegative")
        if action.tick > config.deadline_contribution:
            raise ScenarioError(
                f"{context}.tick: {action.tick} is past the contribution "
                f"deadline {config.deadline_contribution}")
        if not mech.dual_market and action.market is Market.AGAINST:
            raise ScenarioError(
                f"{context}.market: {mech.value} has no rejection market")
    if scenario.explicit_reports is not None:
        if not mech.two_phase:
            raise ScenarioError(
                f"scenario.explicit_reports: {mech.value} has no belief phase")
        for i, rep in enumerate(scenario.explicit_reports):
            context = f"scenario.explicit_reports[{i}]"
            if rep.agent_id not in known:
                raise ScenarioError(f"{context}.agent_id: unknown agent {rep.agent_id}")
            if rep.tick > config.deadline_belief:  # type: ignore[operator]
                raise ScenarioError(
                    f"{context}.tick: {rep.tick} is past the belief deadline "
                    f"{config.deadline_belief}")


def parse_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from None
    return parse_scenario_dict(data)


def scenario_to_dict(scenario: Scenario) -> dict:
    config = scenario.config
    cfg: dict = {"mechanism": config.mechanism.value,
                 "deadline_contribution": config.deadline_contribution}
    if config.provision_point is not None:
        cfg["provision_point"] = config.provision_point
    if config.provision_point_pair is not None:
        cfg["provision_point_pair"] = list(config.provision_point_pair)
    for name in ("refund_budget", "belief_budget", "contribution_budget",
                 "deadline_belief"):
        value = getattr(config, name)
        if value is not None:
            cfg[name] = value
    if config.cost_params is not None:
        cfg["cost_params"] = {"liquidity": config.cost_params.liquidity,
                              "fixed_leg": config.cost_params.fixed_leg}
    data: dict = {
        "version": SCENARIO_VERSION,
        "config": cfg,
        "agents": [
            {"id": a.id, "valuation": a.valuation,
             "belief_epsilon": a.belief_epsilon,
             "belief_side": a.belief_side.value,
             "arrival_belief": a.arrival_belief,
             "arrival_contribution": a.arrival_contribution}
            for a in scenario.agents
        ],
        "analysis": {"run_campaign": scenario.analysis.run_campaign,
                     "certify_ne": scenario.analysis.certify_ne,
                     "certify_spe": scenario.analysis.certify_spe,
                     "conditions_only": scenario.analysis.conditions_only},
        "seed": scenario.seed,
    }
    if scenario.explicit_actions is not None:
        data["explicit_actions"] = [
            {"agent_id": a.agent_id, "amount": a.amount,
             "market": a.market.value, "tick": a.tick}
            for a in scenario.explicit_actions
        ]
    if scenario.explicit_reports is not None:
        data["explicit_reports"] = [
            {"agent_id": r.agent_id, "information": r.information,
             "prediction": r.prediction, "tick": r.tick}
            for r in scenario.explicit_reports
        ]
    return data


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Seeded generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioTemplate:
    """Declarative recipe for random scenarios with valid-by-construction
    targets; explicit target overrides bypass the auto-sizing and fail fast
    when they cannot satisfy the existence conditions."""

    mechanism: Mechanism
    agent_count: int
    valuation_range: tuple[float, float] = (5.0, 20.0)
    epsilon_range: tuple[float, float] = (0.0, 0.25)
    negative_share: float = 0.4
    rejection_share: float = 0.4
    fill_fraction: float = 0.45
    provision_point: float | None = None
    provision_point_pair: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.agent_count < 1:
            raise ScenarioError("template.agent_count: must be at least 1")
        low, high = self.valuation_range
        if not 0 < low <= high:
            raise ScenarioError("template.valuation_range: need 0 < low <= high")
        if not 0.0 < self.fill_fraction <= 0.9:
            raise ScenarioError("template.fill_fraction: must lie in (0, 0.9]")


def template_from_dict(data: dict) -> ScenarioTemplate:
    mech = _enum_value(Mechanism, _require(data, "mechanism", "template"),
                       "template.mechanism")
    pair = data.get("provision_point_pair")
    return ScenarioTemplate(
        mechanism=mech,
        agent_count=int(_require(data, "agent_count", "template")),
        valuation_range=tuple(data.get("valuation_range", (5.0, 20.0))),  # type: ignore[arg-type]
        epsilon_range=tuple(data.get("epsilon_range", (0.0, 0.25))),  # type: ignore[arg-type]
        negative_share=float(data.get("negative_share", 0.4)),
        rejection_share=float(data.get("rejection_share", 0.4)),
        fill_fraction=float(data.get("fill_fraction", 0.45)),
        provision_point=(None if data.get("provision_point") is None
                         else float(data["provision_point"])),
        provision_point_pair=None if pair is None else (float(pair[0]), float(pair[1])),
    )


def _draw_agents(template: ScenarioTemplate, rng: random.Random) -> list[AgentProfile]:
    mech = template.mechanism
    n = template.agent_count
    low, high = template.valuation_range
    agents = []
    for i in range(n):
        magnitude = rng.uniform(low, high)
        negative = mech.dual_market and rng.random() < template.negative_share
        if mech.dual_market and i == 0:
            negative = False  # guarantee each side is inhabited
        if mech.dual_market and i == 1 and n > 1:
            negative = True
        eps_low, eps_high = template.epsilon_range
        epsilon = rng.uniform(eps_low, eps_high) if mech.two_phase else 0.0
        side = BeliefSide.PROVISION_LIKELY
        if mech.two_phase and rng.random() < template.rejection_share:
            side = BeliefSide.REJECTION_LIKELY
        agents.append(AgentProfile(
            id=i,
            valuation=-magnitude if negative else magnitude,
            belief_epsilon=epsilon,
            belief_side=side,
            arrival_belief=rng.randrange(n),
            arrival_contribution=rng.randrange(n),
        ))
    return agents


def generate_scenario(template: ScenarioTemplate, seed: int) -> Scenario:
    """Draw a scenario from the template, shrinking targets until the
    existence conditions hold and the equilibrium profile is feasible."""
    from .equilibrium import check_conditions, construct_profile

    rng = random.Random(seed)
    agents = _draw_agents(template, rng)
    mech = template.mechanism
    explicit_targets = (template.provision_point is not None
                        or template.provision_point_pair is not None)
    fill = template.fill_fraction
    budget_scale = 1.0
    last_error = "no attempt made"
    for _ in range(10):
        config = _size_config(template, agents, fill, budget_scale)
        scenario = Scenario(
            config=config, agents=agents, seed=seed,
            analysis=AnalysisFlags(run_campaign=True,
                                   certify_ne=not mech.sequential,
                                   certify_spe=mech.sequential),
        )
        validate_scenario(scenario)
        failed = [c.name for c in check_conditions(config, agents) if not c.satisfied]
        headroom_short = False
        if failed:
            last_error = f"conditions violated: {', '.join(failed)}"
        else:
            profile = construct_profile(config, agents)
            if profile.feasible and _headroom_ok(config, agents, profile):
                return scenario
            headroom_short = profile.feasible
            last_error = (f"profile infeasible: {profile.reason}"
                          if not profile.feasible
                          else "insufficient bound headroom over the target")
        if explicit_targets:
            break
        if headroom_short:
            budget_scale *= 0.5  # a smaller side budget restores headroom
        else:
            fill *= 0.7
    raise ScenarioError(f"template infeasible: {last_error}")


def _headroom_ok(config: CampaignConfig, agents: list[AgentProfile],
                 profile) -> bool:
    """Scaled refund-bonus contributions must sit clear of the point where
    walking away beats the filled pot, which needs the bounds to cover the
    target plus the contribution budget."""
    if config.mechanism is not Mechanism.PPRX:
        return True
    from .equilibrium import contribution_bound

    total = sum(
        contribution_bound(config, a,
                           belief_reward=profile.belief_rewards.get(a.id, 0.0))
        for a in agents)
    return total >= config.provision_point + config.contribution_budget  # type: ignore[operator]


def _size_config(template: ScenarioTemplate, agents: list[AgentProfile],
                 fill: float, budget_scale: float = 1.0) -> CampaignConfig:
    mech = template.mechanism
    n = len(agents)
    net, total_for, total_against = aggregate_valuations(agents)
    deadline = n
    if mech is Mechanism.PPR:
        h0 = template.provision_point or fill * total_for
        return CampaignConfig(mechanism=mech, provision_point=h0,
                              refund_budget=0.5 * max(total_for - h0, 1e-6),
                              deadline_contribution=deadline)
    if mech is Mechanism.PPRN:
        pair = template.provision_point_pair or (fill * total_for,
                                                 fill * total_against)
        h_for, h_against = pair
        span = h_for + h_against
        cap = span * min((total_for - h_for) / h_for,
                         (total_against - h_against) / h_against)
        return CampaignConfig(mechanism=mech, provision_point_pair=pair,
                              refund_budget=max(0.4 * cap, 1e-9),
                              deadline_contribution=deadline)
    # Securities family: liquidity scaled to total valuations keeps issuance
    # slopes moderate so arrival-order bounds retain headroom.
    from .costfn import CostFunction

    liquidity = max(1.0, total_for + total_against)
    cost = CostParams(liquidity=liquidity)
    cf = CostFunction.from_params(cost)
    if mech is Mechanism.PPS:
        capacity = sum(cf.contribution_for(a.valuation, 0.0) for a in agents)
        h0 = template.provision_point or fill * capacity
        return CampaignConfig(mechanism=mech, provision_point=h0,
                              cost_params=cost, deadline_contribution=deadline)
    if mech is Mechanism.PPSN:
        cap_for = sum(cf.contribution_for(a.valuation, 0.0)
                      for a in agents if derive_preference(a) is Market.FOR)
        cap_against = sum(cf.contribution_for(-a.valuation, 0.0)
                          for a in agents if derive_preference(a) is Market.AGAINST)
        pair = template.provision_point_pair or (fill * cap_for, fill * cap_against)
        return CampaignConfig(mechanism=mech, provision_point_pair=pair,
                              cost_params=cost, deadline_contribution=deadline)
    # Two-phase mechanisms: size budgets off the aggregate valuation, then
    # the target off the reward-adjusted bounds.
    from .beliefs import default_report, score_reports, side_rewards
    from .equilibrium import contribution_bound

    belief_budget = 0.3 * net
    ledger = score_reports([default_report(a) for a in agents])
    rewards: dict[int, float] = {}
    for side in BeliefSide:
        rewards.update(side_rewards(ledger, side, belief_budget))
    deadline_belief = max(n - 1, max(a.arrival_belief for a in agents))
    deadline = max(deadline, deadline_belief + 1)
    if mech is Mechanism.PPRX:
        contribution_budget = 0.15 * net * budget_scale
        probe = CampaignConfig(
            mechanism=mech, provision_point=max(net, 1.0),
            belief_budget=belief_budget, contribution_budget=contribution_budget,
            deadline_contribution=deadline, deadline_belief=deadline_belief)
        bounds = sum(contribution_bound(probe, a, belief_reward=rewards.get(a.id, 0.0))
                     for a in agents)
        h0 = template.provision_point or min(fill * bounds,
                                             bounds - 1.2 * contribution_budget)
        if h0 <= 0:
            h0 = fill * bounds
        if h0 <= 0:
            raise ScenarioError(
                "template infeasible: reward-adjusted bounds sum to zero")
        return CampaignConfig(
            mechanism=mech, provision_point=h0, belief_budget=belief_budget,
            contribution_budget=contribution_budget,
            deadline_contribution=deadline, deadline_belief=deadline_belief)
    bounds = sum(
        cf.contribution_for(
            max(a.valuation + (rewards.get(a.id, 0.0)
                               if a.belief_side is BeliefSide.PROVISION_LIKELY
                               else -rewards.get(a.id, 0.0)), 0.0), 0.0)
        for a in agents)
    h0 = template.provision_point or fill * bounds
    if h0 <= 0:
        raise ScenarioError(
            "template infeasible: reward-adjusted bounds sum to zero")
    return CampaignConfig(
        mechanism=mech, provision_point=h0, belief_budget=belief_budget,
        cost_params=cost, deadline_contribution=deadline,
        deadline_belief=deadline_belief)
