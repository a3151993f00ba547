"""Belief phase: peer-prediction scoring of reports and budget-balanced rewards.

Each agent files a binary information report (0 = expects provision, 1 =
expects no provision) plus a prediction of how frequent 1-reports will be.
Scores combine an information score and a prediction score through a
normalized binary quadratic rule, using the next agent in report order as
reference and the one after as peer (wrapping around). Rewards split a fixed
budget across the side that matched the realized verdict, weighted by score
over the prefix of earlier reporters, which makes equal-scoring early
reporters strictly better off than late ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import (
    AgentProfile,
    BeliefSide,
    CampaignConfig,
    ContributionRecord,
    Outcome,
    Verdict,
)


@dataclass(frozen=True)
class BeliefReport:
    agent_id: int
    information: int
    prediction: float
    tick: int = 0

    def __post_init__(self) -> None:
        if self.information not in (0, 1):
            raise ValueError(
                f"agent {self.agent_id}: information report must be 0 or 1"
            )
        if not 0.0 <= self.prediction <= 1.0:
            raise ValueError(
                f"agent {self.agent_id}: prediction must be within [0, 1]"
            )
        if self.tick < 0:
            raise ValueError(f"agent {self.agent_id}: report tick must be nonnegative")

    @property
    def side(self) -> BeliefSide:
        """Side membership as the mechanism learns it, from the report alone."""
        return (BeliefSide.PROVISION_LIKELY if self.information == 0
                else BeliefSide.REJECTION_LIKELY)


@dataclass
class BeliefLedger:
    """Frozen belief phase: ordered reports plus scores, weights, rewards."""

    reports: list[BeliefReport]
    scores: dict[int, float] = field(default_factory=dict)
    weights: dict[int, float] = field(default_factory=dict)
    rewards: dict[int, float] = field(default_factory=dict)
    winning_side: BeliefSide | None = None
    empty_winning_side: bool = False
    zero_score_split: bool = False


def quadratic_score(p: float, outcome: int) -> float:
    """Normalized binary quadratic score in [0, 1]; strictly proper."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must be within [0, 1], got {p}")
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome}")
    if outcome == 1:
        return 1.0 - (1.0 - p) * (1.0 - p)
    return 1.0 - p * p


def sort_reports(reports: list[BeliefReport]) -> list[BeliefReport]:
    """Canonical report order: tick, ties broken by agent id."""
    return sorted(reports, key=lambda r: (r.tick, r.agent_id))


def rbts_scores(reports: list[BeliefReport]) -> dict[int, float]:
    """Score every report against its reference (next) and peer (next-next).

    The shadow prediction moves the reference agent's prediction toward the
    reporter's own information by the largest shift that stays inside [0, 1].
    Scores land in [0, 2] since each is a sum of two unit-range scores.
    Requires at least three reports.
    """
    n = len(reports)
    if n < 3:
        raise ValueError(f"belief scoring requires at least 3 reports, got {n}")
    scores: dict[int, float] = {}
    for i, rep in enumerate(reports):
        ref = reports[(i + 1) % n]
        peer = reports[(i + 2) % n]
        delta = min(ref.prediction, 1.0 - ref.prediction)
        shadow = ref.prediction + delta if rep.information == 1 else ref.prediction - delta
        scores[rep.agent_id] = (quadratic_score(shadow, peer.information)
                                + quadratic_score(rep.prediction, peer.information))
    return scores


def score_reports(reports: list[BeliefReport]) -> BeliefLedger:
    """Build a ledger with canonical ordering, scores, and prefix weights."""
    ordered = sort_reports(reports)
    ids = [r.agent_id for r in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate belief reports for one agent")
    ledger = BeliefLedger(reports=ordered)
    ledger.scores = rbts_scores(ordered)
    prefix = 0.0
    for rep in ordered:
        prefix += ledger.scores[rep.agent_id]
        ledger.weights[rep.agent_id] = (
            ledger.scores[rep.agent_id] / prefix if prefix > 0.0 else 0.0
        )
    return ledger


def side_rewards(ledger: BeliefLedger, side: BeliefSide, budget: float) -> dict[int, float]:
    """Budget split among one side's reporters by prefix-normalized weight.

    This is the reward each member would collect were its side to win; all
    of the budget is always handed out. Degenerate all-zero weights fall
    back to an equal split.
    """
    members = [r.agent_id for r in ledger.reports if r.side is side]
    if not members:
        return {}
    total = sum(ledger.weights[a] for a in members)
    if total <= 0.0:
        return {a: budget / len(members) for a in members}
    return {a: ledger.weights[a] / total * budget for a in members}


def bbr_rewards(ledger: BeliefLedger, winning_side: BeliefSide,
                budget: float) -> dict[int, float]:
    """Realized rewards: winning side splits the budget, losers get zero.

    An empty winning side leaves the reward undefined; everyone gets zero
    and the ledger is flagged so callers can surface it.
    """
    if budget <= 0:
        raise ValueError(f"belief budget must be positive, got {budget}")
    ledger.winning_side = winning_side
    winners = side_rewards(ledger, winning_side, budget)
    if not winners:
        ledger.empty_winning_side = True
        ledger.rewards = {r.agent_id: 0.0 for r in ledger.reports}
        return ledger.rewards
    members = [r.agent_id for r in ledger.reports if r.side is winning_side]
    if sum(ledger.weights[a] for a in members) <= 0.0:
        ledger.zero_score_split = True
    ledger.rewards = {r.agent_id: winners.get(r.agent_id, 0.0) for r in ledger.reports}
    return ledger.rewards


def winning_side_for(verdict: Verdict) -> BeliefSide:
    """Map the campaign verdict to the rewarded side; expiry counts as the
    project not happening, so the rejection-minded side collects."""
    if verdict is Verdict.PROVISIONED:
        return BeliefSide.PROVISION_LIKELY
    return BeliefSide.REJECTION_LIKELY


def default_report(agent: AgentProfile) -> BeliefReport:
    """Truthful report at the agent's arrival: information from its side,
    prediction equal to its own probability of a no-provision outcome."""
    return BeliefReport(
        agent_id=agent.id,
        information=0 if agent.belief_side is BeliefSide.PROVISION_LIKELY else 1,
        prediction=agent.rejection_belief,
        tick=agent.arrival_belief,
    )


# ---------------------------------------------------------------------------
# Two-phase contribution utilities
# ---------------------------------------------------------------------------


def pprx_utility(agent: AgentProfile, side: BeliefSide, amount: float, total: float,
                 contribution_budget: float, belief_reward: float,
                 provisioned: bool) -> float:
    """Refund-bonus contribution utility with the belief reward attached to
    the branch the agent's reported side wins."""
    share = amount / total * contribution_budget if total > 0 else 0.0
    if side is BeliefSide.PROVISION_LIKELY:
        if provisioned:
            return agent.valuation - amount + belief_reward
        return share
    if provisioned:
        return agent.valuation - amount
    return share + belief_reward


def ppsx_utility(agent: AgentProfile, side: BeliefSide, rec: ContributionRecord,
                 belief_reward: float, provisioned: bool) -> float:
    """Securities contribution utility with the belief reward attached to
    the branch the agent's reported side wins."""
    if side is BeliefSide.PROVISION_LIKELY:
        if provisioned:
            return agent.valuation - rec.amount + belief_reward
        return rec.securities - rec.amount
    if provisioned:
        return agent.valuation - rec.amount
    return rec.securities - rec.amount + belief_reward


def run_two_phase(config: CampaignConfig, agents: list[AgentProfile], actions,
                  reports: list[BeliefReport] | None = None
                  ) -> tuple[BeliefLedger, Outcome]:
    """Run belief phase then contribution phase and settle both together.

    Reports default to truthful reports at each agent's arrival. The belief
    phase must close before contributions settle, so report ticks are checked
    against the belief deadline and the campaign engine enforces its own.
    Returns the scored belief ledger and the settled outcome.
    """
    from .mechanisms import run_campaign, settle

    if not config.mechanism.two_phase:
        raise ValueError(f"{config.mechanism.value} has no belief phase")
    if len(agents) < 3:
        raise ValueError("belief scoring requires at least 3 agents")
    if reports is None:
        reports = [default_report(a) for a in agents]
    known = {a.id for a in agents}
    for rep in reports:
        if rep.agent_id not in known:
            raise ValueError(f"belief report references unknown agent {rep.agent_id}")
        if rep.tick > config.deadline_belief:
            raise ValueError(
                f"agent {rep.agent_id}: report tick {rep.tick} is past the "
                f"belief deadline {config.deadline_belief}"
            )
    ledger = score_reports(reports)
    verdict, dual = run_campaign(config, actions)
    rewards = bbr_rewards(ledger, winning_side_for(verdict), config.belief_budget)
    # settlement keys rewards by reported side; unreported agents get nothing
    outcome = settle(config, agents, verdict, dual, belief_rewards=rewards)
    return ledger, outcome
