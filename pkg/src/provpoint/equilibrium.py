"""Equilibrium bounds, constructed profiles, existence checks, certification.

Each mechanism's theory gives a closed-form cap on what an agent is willing
to contribute. ``construct_profile`` turns those caps into a concrete play
(scaled so the winning side's total meets its target exactly), and the
certifiers search for profitable unilateral deviations on a contribution
grid, holding everyone else's contributed amounts fixed.

Deviation semantics
-------------------
A deviation is scored by expected utility under the deviating agent's own
outcome beliefs, with the outcome distribution tied to the post-deviation
totals:

* while the agent's own market reaches its target, the race (or, in a
  single market, the residual doubt about provision) is priced by the
  agent's beliefs: an even split for the symmetric mechanisms, the agent's
  own win probability for the belief-phase mechanisms;
* when the agent's contribution leaves its own market short, its side
  cannot win: the alternative outcome is certain (the rival market's
  verdict when that market fills, expiry otherwise), which is what blocks
  free riding at pivotal slots;
* contributions beyond a market's remaining capacity are truncated, exactly
  as the engine truncates them, so over-contributing cannot buy extra refund
  share; once a target is met the book is closed and the only legal play is
  zero.

At a slot whose own side does not fill even at the prescribed play (a
losing-side arrival mid-race, or a probed off-path state), the theory's
optimality claim is only within its strategy set, so the sweep there stays
inside [0, bound]; refund allocations keep growing past the bound at such
slots and chasing them is outside the certified claim. Slots whose side
fills are swept over the full [0, |valuation| + reward] range.

Market/side flips are scored as the symmetric-belief comparison between the
two markets' utility structures at the same contribution (the refund and the
security allocation are side-blind by design, so the flip delta is zero at
equilibrium). Refund-bonus timing never enters utilities, so timing
deviations are vacuous for that family; for the securities family the delay
sweep reprices the allocation at the later slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .costfn import CostFunction
from .mechanisms import (
    ppr_utility,
    pprn_utility,
    pps_utility,
    ppsn_utility,
)
from .beliefs import pprx_utility, ppsx_utility
from .model import (
    AgentProfile,
    BeliefSide,
    CampaignConfig,
    ContributionRecord,
    Market,
    Mechanism,
    Verdict,
    aggregate_valuations,
    derive_preference,
)

MET_REL_TOL = 1e-9
STRICT_MARGIN = 1e-9  # keeps strict-inequality bounds strictly interior


# ---------------------------------------------------------------------------
# Closed-form contribution bounds
# ---------------------------------------------------------------------------


def bound_ppr(agent: AgentProfile, provision_point: float, refund_budget: float) -> float:
    """Single-market refund-bonus cap: indifference at a just-filled pot."""
    return provision_point / (refund_budget + provision_point) * max(agent.valuation, 0.0)


def bound_pprn(agent: AgentProfile, target_for: float, target_against: float,
               refund_budget: float) -> float:
    """Dual-market refund-bonus cap, identical in form for both preferences."""
    total = target_for + target_against
    return total / (refund_budget + total) * abs(agent.valuation)


def bound_pps(agent: AgentProfile, cf: CostFunction, issued: float) -> float:
    """Single-market securities cap: the payment whose allocation equals the
    agent's valuation at the current issuance."""
    return cf.contribution_for(max(agent.valuation, 0.0), issued)


def bound_ppsn(agent: AgentProfile, cf: CostFunction, issued_min: float) -> float:
    """Dual-market securities cap at the min-leg issuance."""
    return cf.contribution_for(abs(agent.valuation), issued_min)


def bound_pprx(agent: AgentProfile, provision_point: float, contribution_budget: float,
               belief_reward: float) -> float:
    """Belief-weighted refund-bonus cap; the rejection-minded variant nets the
    belief reward out and clamps at zero since contributions cannot be negative."""
    p = agent.provision_belief
    q = 1.0 - p
    if agent.belief_side is BeliefSide.PROVISION_LIKELY:
        numerator = p * (agent.valuation + belief_reward)
    else:
        numerator = p * agent.valuation - q * belief_reward
    denominator = q * contribution_budget + p * provision_point
    return max(0.0, numerator / denominator * provision_point)


def bound_ppsx(agent: AgentProfile, cf: CostFunction, issued: float,
               belief_reward: float) -> float:
    """Securities cap with the belief reward folded into the security target;
    clamped at zero for rejection-minded agents with rewards above valuation."""
    if agent.belief_side is BeliefSide.PROVISION_LIKELY:
        quantity = agent.valuation + belief_reward
    else:
        quantity = agent.valuation - belief_reward
    return cf.contribution_for(max(quantity, 0.0), issued)


def contribution_bound(config: CampaignConfig, agent: AgentProfile, *,
                       issued: float = 0.0, belief_reward: float = 0.0) -> float:
    """Dispatch to the mechanism's bound at the given issuance context."""
    mech = config.mechanism
    if mech is Mechanism.PPR:
        return bound_ppr(agent, config.provision_point, config.refund_budget)  # type: ignore[arg-type]
    if mech is Mechanism.PPRN:
        h_for, h_against = config.provision_point_pair  # type: ignore[misc]
        return bound_pprn(agent, h_for, h_against, config.refund_budget)  # type: ignore[arg-type]
    cf = CostFunction.from_params(config.cost_params) if config.cost_params else None
    if mech is Mechanism.PPS:
        return bound_pps(agent, cf, issued)  # type: ignore[arg-type]
    if mech is Mechanism.PPSN:
        return bound_ppsn(agent, cf, issued)  # type: ignore[arg-type]
    if mech is Mechanism.PPRX:
        return bound_pprx(agent, config.provision_point,  # type: ignore[arg-type]
                          config.contribution_budget, belief_reward)  # type: ignore[arg-type]
    return bound_ppsx(agent, cf, issued, belief_reward)  # type: ignore[arg-type]


# ---------------------------------------------------------------------------
# Existence conditions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionCheck:
    """One existence inequality with both sides evaluated numerically."""

    name: str
    satisfied: bool
    lhs: float
    rhs: float


def check_conditions(config: CampaignConfig,
                     agents: list[AgentProfile]) -> list[ConditionCheck]:
    """Evaluate every equilibrium-existence inequality for the mechanism."""
    mech = config.mechanism
    net, total_for, total_against = aggregate_valuations(agents)
    checks: list[ConditionCheck] = []

    def add(name: str, lhs: float, rhs: float, strict: bool = True) -> None:
        ok = lhs < rhs if strict else lhs <= rhs
        checks.append(ConditionCheck(name=name, satisfied=ok, lhs=lhs, rhs=rhs))

    if mech is Mechanism.PPR:
        h0 = config.provision_point
        add("provision_valuation_exceeds_target", h0, total_for)
        add("refund_budget_positive", 0.0, config.refund_budget)
        add("refund_budget_below_cap", config.refund_budget, total_for - h0)
    elif mech is Mechanism.PPRN:
        h_for, h_against = config.provision_point_pair
        budget = config.refund_budget
        span = h_for + h_against
        add("provision_valuation_exceeds_target", h_for, total_for)
        add("rejection_valuation_exceeds_target", h_against, total_against)
        add("refund_budget_positive", 0.0, budget)
        add("refund_budget_below_provision_cap", budget,
            span * (total_for - h_for) / h_for)
        add("refund_budget_below_rejection_cap", budget,
            span * (total_against - h_against) / h_against)
    elif mech in (Mechanism.PPS, Mechanism.PPSN):
        cf = CostFunction.from_params(config.cost_params)
        base = cf.cost(0.0)
        if mech is Mechanism.PPS:
            h0 = config.provision_point
            add("provision_valuation_exceeds_target", h0, total_for)
            add("provision_securities_affordable",
                cf.inverse_cost(h0 + base), total_for)
        else:
            h_for, h_against = config.provision_point_pair
            add("provision_valuation_exceeds_target", h_for, total_for)
            add("rejection_valuation_exceeds_target", h_against, total_against)
            add("provision_securities_affordable",
                cf.inverse_cost(h_for + base), total_for)
            add("rejection_securities_affordable",
                cf.inverse_cost(h_against + base), total_against)
    else:  # PPRx / PPSx
        add("target_within_valuation_plus_belief_budget",
            config.provision_point, net + config.belief_budget, strict=False)
        add("belief_budget_positive", 0.0, config.belief_budget)
        if mech is Mechanism.PPRX:
            add("contribution_budget_positive", 0.0, config.contribution_budget)
    return checks


# ---------------------------------------------------------------------------
# Profile construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProfileEntry:
    amount: float
    tick: int
    market: Market
    issued_at_entry: float = 0.0
    securities: float = 0.0


@dataclass
class EquilibriumProfile:
    """A concrete candidate play: per-agent amounts, ticks, and markets."""

    entries: dict[int, ProfileEntry] = field(default_factory=dict)
    feasible: bool = True
    reason: str | None = None
    expected_verdict: Verdict | None = None
    belief_rewards: dict[int, float] = field(default_factory=dict)

    def total(self, market: Market) -> float:
        return sum(e.amount for e in self.entries.values() if e.market is market)


def _conditional_belief_rewards(config: CampaignConfig,
                                agents: list[AgentProfile]) -> dict[int, float]:
    """Would-be belief rewards under truthful reports at arrival, computed
    separately within each side (only the verdict-matching side is paid)."""
    from .beliefs import default_report, score_reports, side_rewards

    ledger = score_reports([default_report(a) for a in agents])
    rewards: dict[int, float] = {}
    for side in BeliefSide:
        rewards.update(side_rewards(ledger, side, config.belief_budget))  # type: ignore[arg-type]
    return rewards


def _fill_side(agents: list[AgentProfile], bounds: dict[int, float], target: float,
               strict: bool) -> dict[int, float] | None:
    """Scale bounds proportionally so the side sums to ``target`` exactly.

    Returns None when the bounds cannot cover the target (or cannot while
    staying strictly interior, for the strict-inequality mechanisms). The
    last agent in id order absorbs the float residue so the sum is exact.
    """
    total = sum(bounds[a.id] for a in agents)
    limit = total * (1.0 - STRICT_MARGIN) if strict else total
    if limit < target:
        return None
    scale = target / total
    amounts = {a.id: scale * bounds[a.id] for a in agents}
    ordered = sorted(a.id for a in agents)
    residue = target - sum(amounts[i] for i in ordered[:-1])
    # the residue can dip a few ulps negative when the partial sums overshoot
    amounts[ordered[-1]] = max(0.0, residue)
    return amounts


def construct_profile(config: CampaignConfig, agents: list[AgentProfile],
                      belief_rewards: dict[int, float] | None = None) -> EquilibriumProfile:
    """Build the canonical equilibrium play from the closed-form bounds.

    Deadline mechanisms scale every agent's bound proportionally so the
    filled side meets its target exactly; arrival mechanisms replay arrivals,
    each agent contributing its bound clipped to the remaining target, until
    a target fills. Infeasibility (bounds cannot reach the target) is
    reported, never silently scaled up.
    """
    mech = config.mechanism
    profile = EquilibriumProfile()
    if mech.two_phase:
        if len(agents) < 3:
            raise ValueError("belief-phase mechanisms require at least 3 agents")
        if belief_rewards is None:
            belief_rewards = _conditional_belief_rewards(config, agents)
        profile.belief_rewards = dict(belief_rewards)
    rewards = profile.belief_rewards

    if not mech.sequential:
        deadline = config.deadline_contribution
        if mech is Mechanism.PPRN:
            positives = [a for a in agents if derive_preference(a) is Market.FOR]
            negatives = [a for a in agents if derive_preference(a) is Market.AGAINST]
            bounds = {a.id: contribution_bound(config, a) for a in agents}
            h_for, h_against = config.provision_point_pair  # type: ignore[misc]
            fill_for = _fill_side(positives, bounds, h_for, strict=True) if positives else None
            fill_against = (_fill_side(negatives, bounds, h_against, strict=True)
                            if negatives else None)
            if fill_for is None or fill_against is None:
                profile.feasible = False
                profile.reason = ("bounds cannot fill both targets: "
                                  f"provision side {'ok' if fill_for else 'short'}, "
                                  f"rejection side {'ok' if fill_against else 'short'}")
                return profile
            for a in positives:
                profile.entries[a.id] = ProfileEntry(fill_for[a.id], deadline, Market.FOR)
            for a in negatives:
                profile.entries[a.id] = ProfileEntry(fill_against[a.id], deadline,
                                                     Market.AGAINST)
            _, total_for, total_against = aggregate_valuations(agents)
            profile.expected_verdict = (Verdict.PROVISIONED if total_for >= total_against
                                        else Verdict.REJECTED)
        else:  # PPR / PPRx: one market, everyone delays to the deadline
            bounds = {a.id: contribution_bound(config, a,
                                               belief_reward=rewards.get(a.id, 0.0))
                      for a in agents}
            fill = _fill_side(agents, bounds, config.provision_point,  # type: ignore[arg-type]
                              strict=False)
            if fill is None:
                profile.feasible = False
                profile.reason = (f"bounds sum to {sum(bounds.values()):.6g}, below the "
                                  f"provision point {config.provision_point:.6g}")
                return profile
            for a in agents:
                profile.entries[a.id] = ProfileEntry(fill[a.id], deadline, Market.FOR)
            profile.expected_verdict = Verdict.PROVISIONED
        return profile

    # Securities family: replay arrivals, halt at the first filled target.
    cf = CostFunction.from_params(config.cost_params)  # type: ignore[arg-type]
    order = sorted(agents, key=lambda a: (a.arrival_contribution, a.id))
    raised = {Market.FOR: 0.0, Market.AGAINST: 0.0}
    issued = {Market.FOR: 0.0, Market.AGAINST: 0.0}
    verdict: Verdict | None = None
    for agent in order:
        market = derive_preference(agent) if mech.dual_market else Market.FOR
        if verdict is not None:
            profile.entries[agent.id] = ProfileEntry(
                0.0, agent.arrival_contribution, market,
                issued_at_entry=_pricing_issuance(mech, issued, market))
            continue
        q_price = _pricing_issuance(mech, issued, market)
        bound = contribution_bound(config, agent, issued=q_price,
                                   belief_reward=rewards.get(agent.id, 0.0))
        remaining = config.target(market) - raised[market]
        amount = min(bound, remaining)
        securities = cf.securities_for(amount, q_price)
        profile.entries[agent.id] = ProfileEntry(
            amount, agent.arrival_contribution, market,
            issued_at_entry=q_price, securities=securities)
        issued[market] += cf.securities_for(amount, issued[market])
        raised[market] = (config.target(market) if amount >= remaining
                          else raised[market] + amount)
        if raised[market] >= config.target(market):
            verdict = (Verdict.PROVISIONED if market is Market.FOR
                       else Verdict.REJECTED)
    if verdict is None:
        profile.feasible = False
        profile.reason = ("arrival-order bounds exhaust all agents with no target "
                          f"reached (raised {raised[Market.FOR]:.6g} / "
                          f"{raised[Market.AGAINST]:.6g})")
        return profile
    profile.expected_verdict = verdict
    return profile


def _pricing_issuance(mech: Mechanism, issued: dict[Market, float],
                      market: Market) -> float:
    """Issuance the allocation prices against: the min leg when dual."""
    if mech.dual_market:
        return min(issued[Market.FOR], issued[Market.AGAINST])
    return issued[market]


# ---------------------------------------------------------------------------
# Deviation search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Deviation:
    agent_id: int
    kind: str
    detail: str
    utility_gain: float


@dataclass(frozen=True)
class IndifferenceCheck:
    """Both sides of the bound's defining equation, at the bound."""

    agent_id: int
    bound: float
    lhs: float
    rhs: float
    clamped: bool = False


@dataclass
class EquilibriumReport:
    mechanism: str
    bounds: dict[int, float] = field(default_factory=dict)
    profile: EquilibriumProfile | None = None
    conditions: list[ConditionCheck] = field(default_factory=list)
    deviations: list[Deviation] = field(default_factory=list)
    indifference: list[IndifferenceCheck] = field(default_factory=list)
    epsilon: float = 0.0
    grid_step: float = 0.0
    feasible: bool = True
    certified: bool = False
    partial: bool = False
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism,
            "feasible": self.feasible,
            "certified": self.certified,
            "partial": self.partial,
            "grid_step": self.grid_step,
            "epsilon": self.epsilon,
            "bounds": {str(k): v for k, v in sorted(self.bounds.items())},
            "profile": None if self.profile is None else {
                "feasible": self.profile.feasible,
                "reason": self.profile.reason,
                "expected_verdict": (self.profile.expected_verdict.value
                                     if self.profile.expected_verdict else None),
                "entries": {
                    str(i): {"amount": e.amount, "tick": e.tick,
                             "market": e.market.value}
                    for i, e in sorted(self.profile.entries.items())
                },
            },
            "conditions": [
                {"name": c.name, "satisfied": c.satisfied, "lhs": c.lhs, "rhs": c.rhs}
                for c in self.conditions
            ],
            "deviations": [
                {"agent": d.agent_id, "kind": d.kind, "detail": d.detail,
                 "utility_gain": d.utility_gain}
                for d in self.deviations
            ],
            "indifference": [
                {"agent": c.agent_id, "bound": c.bound, "lhs": c.lhs,
                 "rhs": c.rhs, "clamped": c.clamped}
                for c in self.indifference
            ],
            "notes": list(self.notes),
        }


def certification_scale(config: CampaignConfig) -> float:
    """Reference currency scale for default grid step and tolerance."""
    if config.provision_point_pair is not None:
        return max(config.provision_point_pair)
    assert config.provision_point is not None
    return config.provision_point


def _own_win_weight(config: CampaignConfig, agent: AgentProfile) -> float:
    """Belief weight on the agent's own market winning while it stays in the
    race: even odds for the symmetric mechanisms, the agent's own provision
    probability for the belief-phase ones (whose one market is provision)."""
    if config.mechanism.two_phase:
        return agent.provision_belief
    return 0.5


def _met(total: float, target: float) -> bool:
    return total >= target - MET_REL_TOL * max(1.0, target)


def _verdict_distribution(config: CampaignConfig, agent: AgentProfile,
                          market: Market, own_total: float,
                          rival_viable: bool) -> list[tuple[Verdict, float]]:
    """Outcome distribution for an agent playing on ``market``.

    While the agent's own market reaches its target the race is priced by
    its beliefs; otherwise the alternative is certain. The alternative is
    the rival market's verdict when that side can still fill (its own
    coalition's play is not stopped by this agent), expiry otherwise.
    """
    own_verdict = (Verdict.PROVISIONED if market is Market.FOR
                   else Verdict.REJECTED)
    if config.mechanism.dual_market and rival_viable:
        alt_verdict = (Verdict.PROVISIONED if market is Market.AGAINST
                       else Verdict.REJECTED)
    else:
        alt_verdict = Verdict.EXPIRED
    if _met(own_total, config.target(market)):
        p = _own_win_weight(config, agent)
        if market is Market.AGAINST:
            p = 1.0 - p
        return [(own_verdict, p), (alt_verdict, 1.0 - p)]
    return [(alt_verdict, 1.0)]


def _branch_utility(config: CampaignConfig, agent: AgentProfile, market: Market,
                    amount: float, securities: float, total_for: float,
                    total_against: float, belief_reward: float,
                    verdict: Verdict) -> float:
    mech = config.mechanism
    provisioned = verdict is Verdict.PROVISIONED
    if mech is Mechanism.PPR:
        return ppr_utility(agent, amount, total_for, config.refund_budget, provisioned)  # type: ignore[arg-type]
    if mech is Mechanism.PPRN:
        return pprn_utility(agent, market, amount, total_for, total_against,
                            config.refund_budget, verdict)  # type: ignore[arg-type]
    rec = ContributionRecord(agent_id=agent.id, amount=amount, tick=0,
                             market=market, securities=securities)
    if mech is Mechanism.PPS:
        return pps_utility(agent, rec, provisioned)
    if mech is Mechanism.PPSN:
        return ppsn_utility(agent, rec, verdict)
    if mech is Mechanism.PPRX:
        return pprx_utility(agent, agent.belief_side, amount, total_for,
                            config.contribution_budget, belief_reward, provisioned)  # type: ignore[arg-type]
    return ppsx_utility(agent, agent.belief_side, rec, belief_reward, provisioned)


@dataclass(frozen=True)
class _Slot:
    """One agent's decision context against a fixed everyone-else play."""

    agent: AgentProfile
    market: Market
    amount: float
    others_for: float
    others_against: float
    issued_for: float = 0.0
    issued_against: float = 0.0
    belief_reward: float = 0.0
    bound: float = 0.0  # strategy-set cap at this slot's issuance
    closed: bool = False  # a target was already met when this agent moved
    rival_viable: bool = False  # the other market fills without this agent

    def pricing_issuance(self, config: CampaignConfig) -> float:
        if config.mechanism.dual_market:
            return min(self.issued_for, self.issued_against)
        return self.issued_for

    def others_on(self, market: Market) -> float:
        return self.others_for if market is Market.FOR else self.others_against

    def side_fills(self, config: CampaignConfig) -> bool:
        """Whether this agent's own market reaches its target at the
        prescribed play; decides the certified sweep range."""
        return _met(self.others_on(self.market) + self.amount,
                    config.target(self.market))

    def sweep_top(self, config: CampaignConfig) -> float:
        if self.side_fills(config):
            return max(abs(self.agent.valuation) + self.belief_reward, self.amount)
        return max(self.bound, self.amount)


def _expected_utility(config: CampaignConfig, slot: _Slot, market: Market,
                      amount: float, cf: CostFunction | None) -> float:
    """EU of contributing ``amount`` to ``market`` at this slot, everyone
    else fixed; the amount is truncated to the market's remaining capacity."""
    others = slot.others_on(market)
    capacity = max(0.0, config.target(market) - others)
    effective = max(0.0, min(amount, capacity))
    securities = 0.0
    if config.mechanism.uses_securities and cf is not None:
        securities = cf.securities_for(effective, slot.pricing_issuance(config))
    total_for = slot.others_for + (effective if market is Market.FOR else 0.0)
    total_against = slot.others_against + (effective if market is Market.AGAINST else 0.0)
    rival_viable = slot.rival_viable if market is slot.market else slot.side_fills(config)
    distribution = _verdict_distribution(
        config, slot.agent, market, others + effective, rival_viable)
    return sum(
        weight * _branch_utility(config, slot.agent, market, effective, securities,
                                 total_for, total_against, slot.belief_reward, verdict)
        for verdict, weight in distribution
    )


def _flip_delta(config: CampaignConfig, slot: _Slot, cf: CostFunction | None) -> float:
    """Market-flip gain at the prescribed amount under symmetric even-odds
    branch weights, totals held fixed (the dual refund schemes pay the same
    on either side by construction, so this is zero at equilibrium)."""
    securities = 0.0
    if config.mechanism.uses_securities and cf is not None:
        securities = cf.securities_for(slot.amount, slot.pricing_issuance(config))
    total_for = slot.others_for + (slot.amount if slot.market is Market.FOR else 0.0)
    total_against = slot.others_against + (
        slot.amount if slot.market is Market.AGAINST else 0.0)

    def half_sum(market: Market) -> float:
        return 0.5 * sum(
            _branch_utility(config, slot.agent, market, slot.amount, securities,
                            total_for, total_against, slot.belief_reward, verdict)
            for verdict in (Verdict.PROVISIONED, Verdict.REJECTED)
        )

    return half_sum(slot.market.other) - half_sum(slot.market)


EXPIRY_CORNER_NOTE = ("rejection-side sweep skipped at states where the "
                      "provision side cannot fill (expiry corner)")


def _expiry_corner(config: CampaignConfig, slot: _Slot) -> bool:
    """With the provision side dead, a rejection-side agent is choosing
    between forfeiting its stake and an expiry refund; the equilibrium
    claims do not reach this corner, so it is reported, not swept."""
    return (config.mechanism.dual_market and slot.market is Market.AGAINST
            and not slot.closed and not slot.rival_viable)


def _sweep_slot(config: CampaignConfig, slot: _Slot, cf: CostFunction | None,
                grid_step: float, epsilon: float,
                detail_prefix: str = "") -> list[Deviation]:
    """Grid-search one agent's unilateral deviations at its slot."""
    agent = slot.agent
    found: list[Deviation] = []
    if slot.closed:
        # Book already closed when this agent moved: zero is the only legal
        # play, so a nonzero prescription is itself the defect to report.
        if slot.amount > epsilon:
            found.append(Deviation(agent.id, "contribution",
                                   detail_prefix + "market closed but profile "
                                   f"prescribes x={slot.amount:.6g}", slot.amount))
        return found
    base = _expected_utility(config, slot, slot.market, slot.amount, cf)
    sweep_max = slot.sweep_top(config)
    steps = max(1, math.ceil(sweep_max / grid_step))
    candidates = [min(k * grid_step, sweep_max) for k in range(steps + 1)]
    best_gain, best_x = 0.0, None
    for x in candidates:
        gain = _expected_utility(config, slot, slot.market, x, cf) - base
        if gain > best_gain:
            best_gain, best_x = gain, x
    if best_gain > epsilon and best_x is not None:
        found.append(Deviation(agent.id, "contribution",
                               detail_prefix + f"x={best_x:.6g} on "
                               f"{slot.market.value} (was {slot.amount:.6g})",
                               best_gain))
    if config.mechanism.dual_market:
        delta = _flip_delta(config, slot, cf)
        if delta > epsilon:
            found.append(Deviation(agent.id, "side_flip",
                                   detail_prefix + f"flip to {slot.market.other.value} "
                                   f"at x={slot.amount:.6g}", delta))
    return found


def _simultaneous_slots(config: CampaignConfig, agents: list[AgentProfile],
                        profile: EquilibriumProfile) -> list[_Slot]:
    total_for = profile.total(Market.FOR)
    total_against = profile.total(Market.AGAINST)
    slots = []
    for agent in agents:
        entry = profile.entries[agent.id]
        reward = profile.belief_rewards.get(agent.id, 0.0)
        others_for = total_for - (entry.amount if entry.market is Market.FOR else 0.0)
        others_against = total_against - (
            entry.amount if entry.market is Market.AGAINST else 0.0)
        rival_viable = False
        if config.mechanism.dual_market:
            rival = entry.market.other
            rival_total = others_against if rival is Market.AGAINST else others_for
            rival_viable = _met(rival_total, config.target(rival))
        slots.append(_Slot(
            agent=agent,
            market=entry.market,
            amount=entry.amount,
            others_for=others_for,
            others_against=others_against,
            belief_reward=reward,
            bound=contribution_bound(config, agent, belief_reward=reward),
            rival_viable=rival_viable,
        ))
    return slots


def _sequential_slots(config: CampaignConfig, agents: list[AgentProfile],
                      profile: EquilibriumProfile,
                      cf: CostFunction) -> list[_Slot]:
    """Replay the profile in play order (entry tick, then agent id); each
    agent's slot sees the issuance at its turn and everyone else's amounts
    at settlement."""
    order = sorted(agents, key=lambda a: (profile.entries[a.id].tick, a.id))
    final_for = profile.total(Market.FOR)
    final_against = profile.total(Market.AGAINST)
    issued = {Market.FOR: 0.0, Market.AGAINST: 0.0}
    raised = {Market.FOR: 0.0, Market.AGAINST: 0.0}
    slots = []
    for idx, agent in enumerate(order):
        entry = profile.entries[agent.id]
        closed = any(
            _met(raised[m], config.target(m))
            for m in ((Market.FOR, Market.AGAINST) if config.mechanism.dual_market
                      else (Market.FOR,))
        )
        reward = profile.belief_rewards.get(agent.id, 0.0)
        q_price = (min(issued.values()) if config.mechanism.dual_market
                   else issued[Market.FOR])
        others_for = final_for - (entry.amount if entry.market is Market.FOR else 0.0)
        others_against = final_against - (
            entry.amount if entry.market is Market.AGAINST else 0.0)
        rival_viable = False
        if config.mechanism.dual_market:
            rival = entry.market.other
            rival_total = others_against if rival is Market.AGAINST else others_for
            rival_viable = (_met(rival_total, config.target(rival))
                            or _rival_fills(config, cf, dict(raised), entry.market,
                                            order[idx + 1:],
                                            profile.belief_rewards))
        slots.append(_Slot(
            agent=agent,
            market=entry.market,
            amount=entry.amount,
            others_for=others_for,
            others_against=others_against,
            issued_for=issued[Market.FOR],
            issued_against=issued[Market.AGAINST],
            belief_reward=reward,
            bound=contribution_bound(config, agent, issued=q_price,
                                     belief_reward=reward),
            closed=closed,
            rival_viable=rival_viable,
        ))
        issued[entry.market] += cf.securities_for(entry.amount, issued[entry.market])
        raised[entry.market] += entry.amount
    return slots


def _indifference_checks(config: CampaignConfig, agents: list[AgentProfile],
                         profile: EquilibriumProfile) -> list[IndifferenceCheck]:
    """Evaluate each bound's defining equation (branch utilities, or their
    belief-weighted versions where the theory weights them) at the bound,
    with denominators at the filled targets."""
    mech = config.mechanism
    cf = (CostFunction.from_params(config.cost_params)
          if config.cost_params is not None else None)
    checks: list[IndifferenceCheck] = []
    for agent in agents:
        reward = profile.belief_rewards.get(agent.id, 0.0)
        entry = profile.entries.get(agent.id)
        issued = entry.issued_at_entry if entry is not None else 0.0
        bound = contribution_bound(config, agent, issued=issued, belief_reward=reward)
        theta = agent.valuation
        clamped = False
        if mech is Mechanism.PPR:
            lhs = theta - bound
            rhs = bound / config.provision_point * config.refund_budget  # type: ignore[operator]
        elif mech is Mechanism.PPRN:
            span = config.target_sum
            share = bound / span * config.refund_budget  # type: ignore[operator]
            if derive_preference(agent) is Market.FOR:
                lhs, rhs = theta - bound, share
            else:
                lhs, rhs = -bound, theta + share
        elif mech in (Mechanism.PPS, Mechanism.PPSN):
            assert cf is not None
            allocated = cf.securities_for(bound, issued)
            if derive_preference(agent) is Market.FOR or mech is Mechanism.PPS:
                lhs, rhs = theta - bound, allocated - bound
            else:
                lhs, rhs = -bound, theta + allocated - bound
        elif mech is Mechanism.PPRX:
            p = agent.provision_belief
            q = 1.0 - p
            share = bound / config.provision_point * config.contribution_budget  # type: ignore[operator]
            if agent.belief_side is BeliefSide.PROVISION_LIKELY:
                lhs, rhs = p * (theta - bound + reward), q * share
            else:
                clamped = bound == 0.0 and p * theta - q * reward < 0
                lhs, rhs = p * (theta - bound), q * (share + reward)
        else:  # PPSx
            assert cf is not None
            allocated = cf.securities_for(bound, issued)
            if agent.belief_side is BeliefSide.PROVISION_LIKELY:
                lhs, rhs = theta + reward - bound, allocated - bound
            else:
                clamped = bound == 0.0 and theta - reward < 0
                lhs, rhs = theta - bound, allocated - bound + reward
        checks.append(IndifferenceCheck(agent.id, bound, lhs, rhs, clamped))
    return checks


def _base_report(config: CampaignConfig, agents: list[AgentProfile],
                 profile: EquilibriumProfile, grid_step: float | None,
                 epsilon: float | None) -> tuple[EquilibriumReport, float, float]:
    scale = certification_scale(config)
    step = grid_step if grid_step is not None else scale / 1000.0
    eps = epsilon if epsilon is not None else scale * 1e-6
    report = EquilibriumReport(
        mechanism=config.mechanism.value,
        profile=profile,
        conditions=check_conditions(config, agents),
        epsilon=eps,
        grid_step=step,
        feasible=profile.feasible,
    )
    if profile.feasible:
        for agent in agents:
            entry = profile.entries[agent.id]
            report.bounds[agent.id] = contribution_bound(
                config, agent, issued=entry.issued_at_entry,
                belief_reward=profile.belief_rewards.get(agent.id, 0.0))
        report.indifference = _indifference_checks(config, agents, profile)
    else:
        report.notes.append(profile.reason or "profile infeasible")
    return report, step, eps


def certify_ne(config: CampaignConfig, agents: list[AgentProfile],
               profile: EquilibriumProfile, grid_step: float | None = None,
               epsilon: float | None = None) -> EquilibriumReport:
    """Search every agent's unilateral deviations against the fixed profile.

    Certifies when no contribution-grid point, market flip, or (vacuously,
    for the refund-bonus family) retiming gains more than epsilon.
    """
    report, step, eps = _base_report(config, agents, profile, grid_step, epsilon)
    if not profile.feasible:
        return report
    cf = (CostFunction.from_params(config.cost_params)
          if config.cost_params is not None else None)
    if config.mechanism.sequential:
        slots = _sequential_slots(config, agents, profile, cf)  # type: ignore[arg-type]
    else:
        slots = _simultaneous_slots(config, agents, profile)
        report.notes.append(
            "timing deviations vacuous: refund schedule is time-invariant")
    for slot in slots:
        if _expiry_corner(config, slot):
            if EXPIRY_CORNER_NOTE not in report.notes:
                report.notes.append(EXPIRY_CORNER_NOTE)
            continue
        report.deviations.extend(_sweep_slot(config, slot, cf, step, eps))
    report.certified = not report.deviations
    return report


# ---------------------------------------------------------------------------
# Subgame-perfect certification (securities family)
# ---------------------------------------------------------------------------


def _issuance_at(cf: CostFunction, raised: float) -> float:
    """Issuance implied by money raised; allocations compose so the state of
    a market is fully determined by its raised total."""
    if raised <= 0.0:
        return 0.0
    return cf.inverse_cost(raised + cf.cost(0.0))


def _rollout(config: CampaignConfig, cf: CostFunction,
             followers: list[AgentProfile], rewards: dict[int, float],
             raised: dict[Market, float]) -> list[tuple[Market, float]]:
    """Forward-simulate the prescribed play of the remaining arrivals from a
    given raised state; returns their (market, amount) plays."""
    mech = config.mechanism
    state = dict(raised)
    plays: list[tuple[Market, float]] = []
    markets = (Market.FOR, Market.AGAINST) if mech.dual_market else (Market.FOR,)
    done = any(_met(state[m], config.target(m)) for m in markets)
    for agent in followers:
        market = derive_preference(agent) if mech.dual_market else Market.FOR
        if done:
            plays.append((market, 0.0))
            continue
        issued = {m: _issuance_at(cf, state[m]) for m in state}
        q_price = (min(issued.values()) if mech.dual_market
                   else issued[Market.FOR])
        bound = contribution_bound(config, agent, issued=q_price,
                                   belief_reward=rewards.get(agent.id, 0.0))
        remaining = config.target(market) - state[market]
        amount = max(0.0, min(bound, remaining))
        plays.append((market, amount))
        state[market] += amount
        if _met(state[market], config.target(market)):
            done = True
    return plays


def _rival_fills(config: CampaignConfig, cf: CostFunction,
                 state: dict[Market, float], own_market: Market,
                 followers: list[AgentProfile],
                 rewards: dict[int, float]) -> bool:
    """Whether the rival market's coalition, playing its prescribed
    strategy from this state, still reaches its target (the agent's own
    side frozen; issuance coupling priced conservatively at the state)."""
    rival = own_market.other
    target = config.target(rival)
    raised = state[rival]
    if _met(raised, target):
        return True
    issued_own = _issuance_at(cf, state[own_market])
    for agent in followers:
        if derive_preference(agent) is not rival:
            continue
        q_price = min(issued_own, _issuance_at(cf, raised))
        bound = contribution_bound(config, agent, issued=q_price,
                                   belief_reward=rewards.get(agent.id, 0.0))
        raised += max(0.0, min(bound, target - raised))
        if _met(raised, target):
            return True
    return False


def _probe_states(config: CampaignConfig, cf: CostFunction,
                  on_path: dict[Market, float], agent: AgentProfile,
                  own_market: Market, rewards: dict[int, float],
                  max_states: int) -> tuple[list[dict[Market, float]], bool]:
    """On-path raised state plus synthetic remaining-target states, including
    one engineered to trigger the late-arrival clipping branch."""
    target = config.target(own_market)
    states: list[dict[Market, float]] = [dict(on_path)]
    q_on = _issuance_at(cf, on_path[own_market])
    bound = contribution_bound(config, agent, issued=q_on,
                               belief_reward=rewards.get(agent.id, 0.0))
    for fraction in (1.0, 0.8, 0.6, 0.4, 0.2):
        state = dict(on_path)
        state[own_market] = (1.0 - fraction) * target
        states.append(state)
    if bound > 0.0:
        clip = dict(on_path)
        clip[own_market] = max(0.0, target - 0.5 * bound)
        states.append(clip)
    if config.mechanism.dual_market:
        other = own_market.other
        state = dict(on_path)
        state[other] = 0.5 * config.target(other)
        states.append(state)
    unique: list[dict[Market, float]] = []
    for state in states:
        if state not in unique:
            unique.append(state)
    return unique[:max_states], len(unique) > max_states


def certify_spe(config: CampaignConfig, agents: list[AgentProfile],
                profile: EquilibriumProfile, grid_step: float | None = None,
                epsilon: float | None = None,
                max_states_per_agent: int = 12) -> EquilibriumReport:
    """Verify the prescribed play is a grid-best response at every probed
    subgame state, walking arrivals with followers' plays rolled out and
    then held fixed (one-shot deviations over a finite horizon).

    Covers contribution deviations, market flips, and delay: repricing the
    agent's allocation after any number of later arrivals have played.
    """
    if not config.mechanism.sequential:
        raise ValueError(f"{config.mechanism.value} has no sequential subgame "
                         "structure; use certify_ne")
    report, step, eps = _base_report(config, agents, profile, grid_step, epsilon)
    if not profile.feasible:
        return report
    cf = CostFunction.from_params(config.cost_params)  # type: ignore[arg-type]
    mech = config.mechanism
    rewards = profile.belief_rewards
    order = sorted(agents, key=lambda a: (profile.entries[a.id].tick, a.id))

    on_path = {Market.FOR: 0.0, Market.AGAINST: 0.0}
    for idx, agent in enumerate(order):
        own_market = derive_preference(agent) if mech.dual_market else Market.FOR
        probes, truncated = _probe_states(config, cf, on_path, agent, own_market,
                                          rewards, max_states_per_agent)
        report.partial = report.partial or truncated
        for state in probes:
            markets = ((Market.FOR, Market.AGAINST) if mech.dual_market
                       else (Market.FOR,))
            closed = any(_met(state[m], config.target(m)) for m in markets)
            issued = {m: _issuance_at(cf, state[m]) for m in state}
            q_price = (min(issued.values()) if mech.dual_market
                       else issued[Market.FOR])
            bound = 0.0
            if not closed:
                bound = contribution_bound(config, agent, issued=q_price,
                                           belief_reward=rewards.get(agent.id, 0.0))
            if state == on_path:
                # on the path itself, the checked action and the fixed
                # follower plays come from the profile being certified
                prescribed = profile.entries[agent.id].amount
                follower_plays = [
                    (profile.entries[a.id].market, profile.entries[a.id].amount)
                    for a in order[idx + 1:]
                ]
            else:
                prescribed = 0.0
                if not closed:
                    prescribed = max(0.0, min(bound, config.target(own_market)
                                              - state[own_market]))
                follower_plays = _rollout(
                    config, cf, order[idx + 1:], rewards,
                    {own_market: state[own_market] + prescribed,
                     own_market.other: state[own_market.other]})
            others_for = state[Market.FOR] + sum(
                x for m, x in follower_plays if m is Market.FOR)
            others_against = state[Market.AGAINST] + sum(
                x for m, x in follower_plays if m is Market.AGAINST)
            rival_viable = mech.dual_market and _rival_fills(
                config, cf, state, own_market, order[idx + 1:], rewards)
            slot = _Slot(
                agent=agent, market=own_market, amount=prescribed,
                others_for=others_for, others_against=others_against,
                issued_for=issued[Market.FOR], issued_against=issued[Market.AGAINST],
                belief_reward=rewards.get(agent.id, 0.0), bound=bound,
                closed=closed, rival_viable=rival_viable,
            )
            prefix = (f"[state raised_for={state[Market.FOR]:.6g} "
                      f"raised_against={state[Market.AGAINST]:.6g}] ")
            if _expiry_corner(config, slot):
                if EXPIRY_CORNER_NOTE not in report.notes:
                    report.notes.append(EXPIRY_CORNER_NOTE)
                continue
            report.deviations.extend(
                _sweep_slot(config, slot, cf, step, eps, detail_prefix=prefix))
            if not closed:
                post_state = dict(state)
                post_state[own_market] += prescribed
                report.deviations.extend(_delay_deviations(
                    config, cf, slot, post_state, follower_plays, eps, prefix))
        entry = profile.entries[agent.id]
        on_path[entry.market] += entry.amount
    report.certified = not report.deviations
    return report


def _delay_deviations(config: CampaignConfig, cf: CostFunction, slot: _Slot,
                      state: dict[Market, float],
                      follower_plays: list[tuple[Market, float]], epsilon: float,
                      prefix: str) -> list[Deviation]:
    """Reprice the prescribed contribution after each number of later
    arrivals (stopping once a target would close the book); allocations
    never improve with waiting, so any gain is a defect worth reporting."""
    base = _expected_utility(config, slot, slot.market, slot.amount, cf)
    found: list[Deviation] = []
    issued = {Market.FOR: slot.issued_for, Market.AGAINST: slot.issued_against}
    raised = dict(state)
    markets = ((Market.FOR, Market.AGAINST) if config.mechanism.dual_market
               else (Market.FOR,))
    for waited, (market, amount) in enumerate(follower_plays, start=1):
        issued[market] += cf.securities_for(amount, issued[market])
        raised[market] += amount
        if any(_met(raised[m], config.target(m)) for m in markets):
            break  # book closes; no later slot exists for the contribution
        delayed = _Slot(
            agent=slot.agent, market=slot.market, amount=slot.amount,
            others_for=slot.others_for, others_against=slot.others_against,
            issued_for=issued[Market.FOR], issued_against=issued[Market.AGAINST],
            belief_reward=slot.belief_reward, bound=slot.bound,
            rival_viable=slot.rival_viable,
        )
        gain = _expected_utility(config, delayed, slot.market, slot.amount, cf) - base
        if gain > epsilon:
            found.append(Deviation(slot.agent.id, "timing",
                                   prefix + f"delay past {waited} later arrivals",
                                   gain))
    return found


# ---------------------------------------------------------------------------
# Analysis helpers
# ---------------------------------------------------------------------------


def contribution_ordering_gap(config: CampaignConfig, optimist: AgentProfile,
                              pessimist: AgentProfile, *, issued: float = 0.0,
                              belief_reward: float = 0.0) -> tuple[float, float, float]:
    """Bound gap between a matched provision-minded / rejection-minded pair.

    The pair must agree on valuation, belief offset, and arrival, and sit on
    opposite sides; the gap is positive whenever the belief reward is
    positive (or, for the refund-bonus variant, the beliefs are strictly
    asymmetric), showing optimists are asked to contribute more.
    """
    if not config.mechanism.two_phase:
        raise ValueError("ordering gap applies to the belief-phase mechanisms only")
    if optimist.belief_side is not BeliefSide.PROVISION_LIKELY:
        raise ValueError("first agent must be provision-minded")
    if pessimist.belief_side is not BeliefSide.REJECTION_LIKELY:
        raise ValueError("second agent must be rejection-minded")
    if optimist.valuation != pessimist.valuation:
        raise ValueError("pair must share the same valuation")
    if optimist.belief_epsilon != pessimist.belief_epsilon:
        raise ValueError("pair must share the same belief offset")
    if optimist.arrival_contribution != pessimist.arrival_contribution:
        raise ValueError("pair must share the same arrival")
    upper = contribution_bound(config, optimist, issued=issued,
                               belief_reward=belief_reward)
    lower = contribution_bound(config, pessimist, issued=issued,
                               belief_reward=belief_reward)
    return upper, lower, upper - lower


def combined_mechanism_gap(agent: AgentProfile, reward_securities: float) -> float:
    """Expected-utility edge of contributing with (vs against) one's true
    preference when a dual-market securities run naively adds belief rewards.

    Equals (rejection belief - provision belief) * securities for a
    provision-minded agent: nonpositive, so such an agent prefers the lying
    side whenever it holds securities and any belief asymmetry; mirrored for
    rejection-minded agents.
    """
    if reward_securities < 0:
        raise ValueError("securities must be nonnegative")
    return (1.0 - 2.0 * agent.provision_belief) * reward_securities + 0.0
