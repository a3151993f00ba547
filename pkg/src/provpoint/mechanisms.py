"""Market engines and settlement for the refund-bonus and securities families.

The engine processes a time-ordered action list, halts the moment any
market's target is reached (truncating the crossing contribution so the
total equals the target exactly), and hands the frozen ledgers to ``settle``
which applies each mechanism's utility structure.

Verdict conventions:
  * a FOR-market fill provisions the project, an AGAINST-market fill rejects
    it, and hitting the deadline with neither filled expires the campaign;
  * on expiry both sides settle through their refund branch and nobody
    receives a valuation term (the project neither happened nor was its
    rejection certified).

Refund-bonus timing never matters (the bonus split only reads amounts), so
ticks are recorded in the ledger but do not enter those utilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .costfn import CostFunction
from .model import (
    AgentProfile,
    CampaignConfig,
    ContributionRecord,
    Market,
    Mechanism,
    Outcome,
    Payout,
    Verdict,
    derive_preference,
)


@dataclass
class MarketState:
    """Running state of one market: target, money raised, securities issued."""

    target: float
    raised: float = 0.0
    issued: float = 0.0
    ledger: list[ContributionRecord] = field(default_factory=list)

    @property
    def remaining(self) -> float:
        return self.target - self.raised

    @property
    def met(self) -> bool:
        return self.raised >= self.target

    def record(self, rec: ContributionRecord) -> None:
        if rec.amount > self.remaining + 1e-9 * max(1.0, self.target):
            raise ValueError("contribution overshoots the market target")
        self.ledger.append(rec)
        # assign rather than accumulate at the boundary so met-checks are exact
        if rec.amount >= self.remaining:
            self.raised = self.target
        else:
            self.raised += rec.amount
        self.issued += rec.issued_delta


@dataclass
class DualMarketState:
    """Paired provision/rejection markets coupled only through min-leg refunds."""

    market_for: MarketState
    market_against: MarketState

    def market(self, side: Market) -> MarketState:
        return self.market_for if side is Market.FOR else self.market_against

    @property
    def min_issued(self) -> float:
        return min(self.market_for.issued, self.market_against.issued)

    @property
    def any_met(self) -> bool:
        return self.market_for.met or self.market_against.met


def new_states(config: CampaignConfig) -> DualMarketState:
    """Fresh market state for a config; single-market configs get an inert
    AGAINST leg with an unreachable target so the engine logic stays uniform."""
    if config.mechanism.dual_market:
        h_for, h_against = config.provision_point_pair  # type: ignore[misc]
        return DualMarketState(MarketState(h_for), MarketState(h_against))
    assert config.provision_point is not None
    return DualMarketState(
        MarketState(config.provision_point), MarketState(float("inf"))
    )


# ---------------------------------------------------------------------------
# Utility structures
# ---------------------------------------------------------------------------


def refund_share(amount: float, pool: float, budget: float) -> float:
    """Proportional bonus ``amount / pool * budget``; zero on an empty pool."""
    if pool <= 0.0:
        return 0.0
    return amount / pool * budget


def ppr_utility(agent: AgentProfile, amount: float, total: float, budget: float,
                provisioned: bool) -> float:
    """Single-market refund-bonus utility: valuation minus contribution on
    provision, else the proportional bonus (contribution itself returned)."""
    if provisioned:
        return agent.valuation - amount
    return refund_share(amount, total, budget)


def pps_utility(agent: AgentProfile, rec: ContributionRecord, provisioned: bool) -> float:
    """Single-market securities utility: valuation minus contribution on
    provision, else securities minus contribution (nonnegative by slope > 1)."""
    if provisioned:
        return agent.valuation - rec.amount
    return rec.securities - rec.amount


def pprn_utility(agent: AgentProfile, reported: Market, amount: float,
                 total_for: float, total_against: float, budget: float,
                 verdict: Verdict) -> float:
    """Dual-market refund-bonus utility under the reported side.

    The bonus pool for both sides is the combined total, so losing-side
    contributors are compensated from the same budget. A rejected FOR
    contribution and an expired one settle identically (refund branch); an
    AGAINST contribution forfeits its amount on rejection, collects valuation
    plus bonus when the project goes through anyway, and on expiry collects
    the bonus without any valuation term.
    """
    pool = total_for + total_against
    if reported is Market.FOR:
        if verdict is Verdict.PROVISIONED:
            return agent.valuation - amount
        return refund_share(amount, pool, budget)
    if verdict is Verdict.REJECTED:
        return -amount
    if verdict is Verdict.PROVISIONED:
        return agent.valuation + refund_share(amount, pool, budget)
    return refund_share(amount, pool, budget)


def ppsn_allocate(dual: DualMarketState, cf: CostFunction, agent_id: int,
                  amount: float, market: Market, tick: int) -> ContributionRecord:
    """Apply one dual-market securities contribution under min-leg refunds.

    The reward allocation prices against the smaller of the two markets'
    issued quantities, so a contribution earns the same refund on either
    side; only the chosen market's own issuance advances.
    """
    if amount < 0:
        raise ValueError("contribution amount must be nonnegative")
    if dual.any_met:
        raise ValueError("market closed: a target has already been reached")
    state = dual.market(market)
    q_min = dual.min_issued
    rec = ContributionRecord(
        agent_id=agent_id,
        amount=amount,
        tick=tick,
        market=market,
        securities=cf.securities_for(amount, q_min),
        q_at_allocation=q_min,
        issued_delta=cf.securities_for(amount, state.issued),
    )
    state.record(rec)
    return rec


def ppsn_utility(agent: AgentProfile, rec: ContributionRecord, verdict: Verdict) -> float:
    """Dual-market securities utility for one allocated contribution."""
    if rec.market is Market.FOR:
        if verdict is Verdict.PROVISIONED:
            return agent.valuation - rec.amount
        return rec.securities - rec.amount
    if verdict is Verdict.REJECTED:
        return -rec.amount
    if verdict is Verdict.PROVISIONED:
        return agent.valuation + rec.securities - rec.amount
    return rec.securities - rec.amount


# ---------------------------------------------------------------------------
# Campaign engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    """One intended play: agent contributes ``amount`` to ``market`` at ``tick``."""

    agent_id: int
    amount: float
    market: Market
    tick: int


def run_campaign(config: CampaignConfig,
                 actions: list[Action]) -> tuple[Verdict, DualMarketState]:
    """Process actions in time order and race the markets to their targets.

    Requires the list pre-sorted by (tick, agent id); simultaneous actions
    resolve in agent-id order so replays are deterministic. Processing stops
    the moment a target is reached: the crossing contribution is truncated so
    the winning total equals its target exactly and all later actions are
    discarded. The FOR market is checked first in the (unreachable) case of a
    single action satisfying both races.
    """
    mech = config.mechanism
    cf = (CostFunction.from_params(config.cost_params)
          if config.cost_params is not None else None)
    keys = [(a.tick, a.agent_id) for a in actions]
    if keys != sorted(keys):
        raise ValueError("actions must be sorted by (tick, agent id)")
    dual = new_states(config)
    verdict = Verdict.EXPIRED
    for action in actions:
        if action.amount < 0:
            raise ValueError(f"agent {action.agent_id}: negative contribution")
        if action.tick > config.deadline_contribution:
            raise ValueError(
                f"agent {action.agent_id}: tick {action.tick} is past the "
                f"deadline {config.deadline_contribution}"
            )
        if not mech.dual_market and action.market is Market.AGAINST:
            raise ValueError(
                f"agent {action.agent_id}: {mech.value} has no rejection market"
            )
        state = dual.market(action.market)
        amount = min(action.amount, state.remaining)
        if mech is Mechanism.PPSN:
            ppsn_allocate(dual, cf, action.agent_id, amount, action.market, action.tick)  # type: ignore[arg-type]
        elif mech.uses_securities:
            assert cf is not None
            rec = ContributionRecord(
                agent_id=action.agent_id,
                amount=amount,
                tick=action.tick,
                market=action.market,
                securities=cf.securities_for(amount, state.issued),
                q_at_allocation=state.issued,
                issued_delta=cf.securities_for(amount, state.issued),
            )
            state.record(rec)
        else:
            state.record(ContributionRecord(
                agent_id=action.agent_id,
                amount=amount,
                tick=action.tick,
                market=action.market,
            ))
        if dual.market_for.met:
            verdict = Verdict.PROVISIONED
            break
        if dual.market_against.met:
            verdict = Verdict.REJECTED
            break
    return verdict, dual


def settle(config: CampaignConfig, agents: list[AgentProfile], verdict: Verdict,
           dual: DualMarketState,
           belief_rewards: dict[int, float] | None = None) -> Outcome:
    """Assemble per-agent realized utilities from the frozen ledgers.

    Agents without a ledger entry settle at zero contribution on their true
    preference (free riders still collect the valuation term the verdict
    implies). Two-phase mechanisms must supply the belief-phase rewards of
    the winning side; single-phase mechanisms must not.
    """
    mech = config.mechanism
    if mech.two_phase and belief_rewards is None:
        raise ValueError(f"{mech.value} settlement requires belief_rewards")
    if not mech.two_phase and belief_rewards is not None:
        raise ValueError(f"{mech.value} settlement does not take belief_rewards")
    rewards = belief_rewards or {}
    provisioned = verdict is Verdict.PROVISIONED
    total_for = dual.market_for.raised
    total_against = dual.market_against.raised
    pool = total_for + total_against

    by_agent: dict[int, list[ContributionRecord]] = {a.id: [] for a in agents}
    for state in (dual.market_for, dual.market_against):
        for rec in state.ledger:
            if rec.agent_id not in by_agent:
                raise ValueError(f"ledger references unknown agent {rec.agent_id}")
            by_agent[rec.agent_id].append(rec)

    payouts: dict[int, Payout] = {}
    for agent in agents:
        recs = by_agent[agent.id] or [ContributionRecord(
            agent_id=agent.id, amount=0.0, tick=config.deadline_contribution,
            market=derive_preference(agent) if mech.dual_market else Market.FOR,
        )]
        valuation = 0.0
        contribution = 0.0
        refund = 0.0
        for rec in recs:
            contribution += rec.amount
            if mech in (Mechanism.PPR, Mechanism.PPRX):
                budget = (config.refund_budget if mech is Mechanism.PPR
                          else config.contribution_budget)
                if provisioned:
                    valuation = agent.valuation
                else:
                    refund += rec.amount + refund_share(rec.amount, pool, budget)  # type: ignore[arg-type]
            elif mech in (Mechanism.PPS, Mechanism.PPSX):
                if provisioned:
                    valuation = agent.valuation
                else:
                    refund += rec.securities
            elif mech is Mechanism.PPRN:
                if rec.market is Market.FOR:
                    if provisioned:
                        valuation = agent.valuation
                    else:
                        refund += rec.amount + refund_share(
                            rec.amount, pool, config.refund_budget)  # type: ignore[arg-type]
                else:
                    if verdict is Verdict.PROVISIONED:
                        valuation = agent.valuation
                        refund += rec.amount + refund_share(
                            rec.amount, pool, config.refund_budget)  # type: ignore[arg-type]
                    elif verdict is Verdict.EXPIRED:
                        refund += rec.amount + refund_share(
                            rec.amount, pool, config.refund_budget)  # type: ignore[arg-type]
            else:  # PPSN
                if rec.market is Market.FOR:
                    if provisioned:
                        valuation = agent.valuation
                    else:
                        refund += rec.securities
                else:
                    if verdict is Verdict.PROVISIONED:
                        valuation = agent.valuation
                        refund += rec.securities
                    elif verdict is Verdict.EXPIRED:
                        refund += rec.securities
        payouts[agent.id] = Payout(
            valuation_term=valuation,
            contribution=contribution,
            refund=refund,
            belief_reward=rewards.get(agent.id, 0.0),
        )
    return Outcome(verdict=verdict, total_for=total_for,
                   total_against=total_against, payouts=payouts)
