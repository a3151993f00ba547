import math

import pytest

from provpoint.costfn import CostFunction
from provpoint.equilibrium import (
    EquilibriumProfile,
    ProfileEntry,
    bound_ppr,
    bound_pprn,
    bound_pprx,
    bound_pps,
    bound_ppsn,
    bound_ppsx,
    certify_ne,
    certify_spe,
    check_conditions,
    combined_mechanism_gap,
    construct_profile,
    contribution_bound,
    contribution_ordering_gap,
)
from provpoint.model import (
    AgentProfile,
    BeliefSide,
    CampaignConfig,
    CostParams,
    Market,
    Mechanism,
    Verdict,
)


def agent(theta, aid=0, eps=0.0, side=BeliefSide.PROVISION_LIKELY, **kw):
    return AgentProfile(id=aid, valuation=theta, belief_epsilon=eps,
                        belief_side=side, **kw)


def pprn_config(h_for=20.0, h_against=15.0, budget=5.0):
    return CampaignConfig(mechanism=Mechanism.PPRN,
                          provision_point_pair=(h_for, h_against),
                          refund_budget=budget, deadline_contribution=5)


def ppsn_config(h_for=5.0, h_against=4.0, liquidity=30.0):
    return CampaignConfig(mechanism=Mechanism.PPSN,
                          provision_point_pair=(h_for, h_against),
                          cost_params=CostParams(liquidity=liquidity),
                          deadline_contribution=5)


def pprx_config(h0=14.0, belief=6.0, contribution=3.0):
    return CampaignConfig(mechanism=Mechanism.PPRX, provision_point=h0,
                          belief_budget=belief, contribution_budget=contribution,
                          deadline_contribution=6, deadline_belief=4)


def ppsx_config(h0=8.0, belief=6.0, liquidity=40.0):
    return CampaignConfig(mechanism=Mechanism.PPSX, provision_point=h0,
                          belief_budget=belief,
                          cost_params=CostParams(liquidity=liquidity),
                          deadline_contribution=6, deadline_belief=4)


# ---------------------------------------------------------------------------
# Closed-form bounds
# ---------------------------------------------------------------------------


def test_bound_pprn_values():
    assert bound_pprn(agent(10.0), 50.0, 50.0, 10.0) == pytest.approx(
        100.0 / 110.0 * 10.0)
    assert bound_pprn(agent(10.0), 50.0, 50.0, 1e-12) == pytest.approx(
        10.0, rel=1e-9)
    assert bound_pprn(agent(0.0), 50.0, 50.0, 10.0) == 0.0
    assert bound_pprn(agent(-10.0), 50.0, 50.0, 10.0) == pytest.approx(
        100.0 / 110.0 * 10.0)


def test_bound_ppsn_values():
    cf = CostFunction()
    assert bound_ppsn(agent(1.0), cf, 0.0) == pytest.approx(
        math.log((1 + math.e) / 2), rel=1e-12)
    assert bound_ppsn(agent(0.0), cf, 0.0) == 0.0
    # the bound is exactly the payment whose allocation equals |valuation|
    x = bound_ppsn(agent(1.0), cf, 0.0)
    assert cf.securities_for(x, 0.0) == pytest.approx(1.0, rel=1e-9)
    # a later arrival pays more for the same security block: the bound grows
    # with issuance toward |valuation| (convex cost, slope below one)
    assert bound_ppsn(agent(1.0), cf, 10.0) > bound_ppsn(agent(1.0), cf, 0.0)
    assert bound_ppsn(agent(1.0), cf, 10.0) < 1.0


def test_bound_pprx_values():
    plus = agent(10.0, eps=0.0, side=BeliefSide.PROVISION_LIKELY)
    assert bound_pprx(plus, 20.0, 5.0, 2.0) == pytest.approx(9.6)
    minus = agent(10.0, eps=0.0, side=BeliefSide.REJECTION_LIKELY)
    assert bound_pprx(minus, 20.0, 5.0, 0.0) == pytest.approx(8.0)
    # large reward drives the rejection-minded numerator negative: clamp
    assert bound_pprx(agent(1.0, eps=0.3, side=BeliefSide.REJECTION_LIKELY),
                      20.0, 5.0, 5.0) == 0.0


def test_bound_ppsx_values():
    cf = CostFunction()
    plus = agent(1.0, side=BeliefSide.PROVISION_LIKELY)
    assert bound_ppsx(plus, cf, 0.0, 0.0) == pytest.approx(
        math.log((1 + math.e) / 2), rel=1e-12)
    minus = agent(1.0, side=BeliefSide.REJECTION_LIKELY)
    assert bound_ppsx(minus, cf, 0.0, 0.0) == bound_ppsx(plus, cf, 0.0, 0.0)
    assert bound_ppsx(plus, cf, 0.0, 2.0) > bound_ppsx(minus, cf, 0.0, 2.0)
    assert bound_ppsx(minus, cf, 0.0, 2.0) == 0.0  # reward above valuation


def test_bound_ppr_pps_base_mechanisms():
    assert bound_ppr(agent(10.0), 10.0, 5.0) == pytest.approx(10.0 / 15.0 * 10.0)
    cf = CostFunction()
    assert bound_pps(agent(1.0), cf, 0.0) == pytest.approx(
        math.log((1 + math.e) / 2), rel=1e-12)


# ---------------------------------------------------------------------------
# Existence conditions
# ---------------------------------------------------------------------------


def test_conditions_pprn_example():
    # aggregate valuations 100 for / 60 against; caps are 90 and 45
    agents = [agent(50.0, 0), agent(50.0, 1), agent(-60.0, 2)]
    checks = {c.name: c for c in check_conditions(
        pprn_config(50.0, 40.0, 10.0), agents)}
    cap_for = checks["refund_budget_below_provision_cap"]
    assert cap_for.rhs == pytest.approx(90.0) and cap_for.satisfied
    cap_against = checks["refund_budget_below_rejection_cap"]
    assert cap_against.rhs == pytest.approx(45.0) and cap_against.satisfied


def test_conditions_pprx_example():
    agents = [agent(5.0, 0), agent(5.0, 1), agent(5.0, 2)]
    checks = {c.name: c for c in check_conditions(
        pprx_config(h0=20.0, belief=10.0, contribution=1.0), agents)}
    head = checks["target_within_valuation_plus_belief_budget"]
    assert head.satisfied and head.lhs == 20.0 and head.rhs == 25.0


def test_conditions_ppsn_affordability_violated():
    # securities needed to raise 5 from a cold market exceed the valuation 4
    agents = [agent(4.0, 0), agent(-10.0, 1)]
    checks = {c.name: c for c in check_conditions(
        ppsn_config(h_for=5.0, h_against=4.0, liquidity=1.0), agents)}
    afford = checks["provision_securities_affordable"]
    assert not afford.satisfied
    assert afford.lhs == pytest.approx(5.689772519290960, rel=1e-12)
    assert afford.rhs == 4.0


# ---------------------------------------------------------------------------
# Profile construction
# ---------------------------------------------------------------------------


def test_construct_proportional_fill():
    # two optimists with equal 9.6 bounds fill a 12.0 target at 6.0 each
    agents = [agent(10.0, i, eps=0.0) for i in range(2)] + [
        agent(10.0, 2, eps=0.0)]
    config = pprx_config(h0=12.0, belief=6.0, contribution=5.0)
    rewards = {0: 2.0, 1: 2.0, 2: 0.0}
    profile = construct_profile(config, agents, rewards)
    b0 = bound_pprx(agents[0], 12.0, 5.0, 2.0)
    scale = 12.0 / (2 * b0 + bound_pprx(agents[2], 12.0, 5.0, 0.0))
    assert profile.entries[0].amount == pytest.approx(scale * b0)
    assert sum(e.amount for e in profile.entries.values()) == pytest.approx(12.0)


def test_construct_single_agent_clips_to_target():
    config = ppsx_config(h0=0.5, belief=3.0, liquidity=40.0)
    agents = [agent(10.0, 0), agent(10.0, 1, arrival_contribution=1),
              agent(10.0, 2, arrival_contribution=2)]
    profile = construct_profile(config, agents, {0: 1.0, 1: 1.0, 2: 1.0})
    assert profile.entries[0].amount == pytest.approx(0.5)
    assert profile.entries[1].amount == 0.0


def test_construct_pprn_fills_both_sides():
    agents = [agent(10.0, i) for i in range(3)] + [agent(-12.0, i) for i in (3, 4)]
    profile = construct_profile(pprn_config(), agents)
    assert profile.feasible
    assert profile.total(Market.FOR) == pytest.approx(20.0, rel=1e-12)
    assert profile.total(Market.AGAINST) == pytest.approx(15.0, rel=1e-12)
    assert profile.expected_verdict is Verdict.PROVISIONED  # 30 for vs 24 against
    for a in agents:
        assert profile.entries[a.id].amount < contribution_bound(pprn_config(), a)


def test_construct_infeasible_reported():
    # refund budget beyond the cap shrinks bounds below the fill
    agents = [agent(10.0, i) for i in range(3)] + [agent(-12.0, i) for i in (3, 4)]
    profile = construct_profile(pprn_config(budget=18.0), agents)
    assert not profile.feasible
    assert "short" in profile.reason


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------


def pprn_agents():
    return [agent(10.0, i) for i in range(3)] + [agent(-12.0, i) for i in (3, 4)]


def test_certify_ne_pprn():
    config = pprn_config()
    profile = construct_profile(config, pprn_agents())
    report = certify_ne(config, pprn_agents(), profile)
    assert report.certified
    assert report.deviations == []
    for check in report.indifference:
        assert check.lhs == pytest.approx(check.rhs, rel=1e-9, abs=1e-9)


def test_certify_ne_flags_overbound_profile():
    # scale everyone past the bound: shaving into the refund branch must win
    config = pprn_config(h_for=28.0, h_against=15.0)
    agents = pprn_agents()
    profile = EquilibriumProfile()
    for i in range(3):
        profile.entries[i] = ProfileEntry(28.0 / 3, 5, Market.FOR)
    for i in (3, 4):
        profile.entries[i] = ProfileEntry(7.5, 5, Market.AGAINST)
    assert 28.0 / 3 > bound_pprn(agents[0], 28.0, 15.0, 5.0)
    report = certify_ne(config, agents, profile)
    assert not report.certified
    assert any(d.kind == "contribution" for d in report.deviations)


def test_certify_ne_infeasible_profile_not_certified():
    config = pprn_config(budget=18.0)
    profile = construct_profile(config, pprn_agents())
    report = certify_ne(config, pprn_agents(), profile)
    assert not report.feasible and not report.certified


def test_certify_spe_ppsn():
    config = ppsn_config()
    agents = [agent(8.0, 0, arrival_contribution=0),
              agent(9.0, 1, arrival_contribution=1),
              agent(-7.0, 2, arrival_contribution=2),
              agent(-8.0, 3, arrival_contribution=3)]
    profile = construct_profile(config, agents)
    assert profile.feasible
    report = certify_spe(config, agents, profile)
    assert report.certified, report.deviations[:3]
    # the second optimist clips to the remaining target on path
    assert profile.entries[1].amount < contribution_bound(
        config, agents[1], issued=profile.entries[1].issued_at_entry)


def test_certify_spe_post_target_arrival_plays_zero():
    config = ppsn_config()
    agents = [agent(20.0, 0, arrival_contribution=0),
              agent(9.0, 1, arrival_contribution=1),
              agent(-7.0, 2, arrival_contribution=2)]
    profile = construct_profile(config, agents)
    assert profile.feasible
    assert profile.entries[0].amount == pytest.approx(5.0)  # fills alone
    assert profile.entries[1].amount == 0.0
    assert profile.entries[2].amount == 0.0
    report = certify_spe(config, agents, profile)
    assert report.certified


def test_certify_spe_rejects_simultaneous_mechanisms():
    with pytest.raises(ValueError, match="sequential"):
        certify_spe(pprn_config(), pprn_agents(),
                    construct_profile(pprn_config(), pprn_agents()))


def test_certify_spe_flags_overbound_play():
    config = ppsn_config()
    agents = [agent(8.0, 0, arrival_contribution=0),
              agent(9.0, 1, arrival_contribution=1),
              agent(-7.0, 2, arrival_contribution=2),
              agent(-8.0, 3, arrival_contribution=3)]
    profile = construct_profile(config, agents)
    # shift stake onto the first optimist so it plays beyond its bound while
    # the pot still fills exactly; shaving into the refund branch then wins
    first = profile.entries[0]
    second = profile.entries[1]
    assert second.amount > 0.6
    profile.entries[0] = ProfileEntry(first.amount + 0.6, first.tick,
                                      first.market, first.issued_at_entry)
    profile.entries[1] = ProfileEntry(second.amount - 0.6, second.tick,
                                      second.market, second.issued_at_entry)
    report = certify_spe(config, agents, profile)
    assert not report.certified
    assert any(d.agent_id == 0 and d.kind == "contribution"
               for d in report.deviations)


def test_preference_flip_indifference_ppsn():
    # Step-style comparison: same stake, same reward securities, either side
    from provpoint.mechanisms import ppsn_utility
    from provpoint.model import ContributionRecord

    cf = CostFunction(liquidity=30.0)
    x = 1.7
    r = cf.securities_for(x, 0.0)
    who = agent(-7.0, 0)
    stay = ContributionRecord(agent_id=0, amount=x, tick=0,
                              market=Market.AGAINST, securities=r)
    flip = ContributionRecord(agent_id=0, amount=x, tick=0,
                              market=Market.FOR, securities=r)
    eu_stay = 0.5 * (ppsn_utility(who, stay, Verdict.REJECTED)
                     + ppsn_utility(who, stay, Verdict.PROVISIONED))
    eu_flip = 0.5 * (ppsn_utility(who, flip, Verdict.PROVISIONED)
                     + ppsn_utility(who, flip, Verdict.REJECTED))
    assert eu_stay == pytest.approx(eu_flip, abs=1e-12)


def test_certify_ne_pprx():
    agents = [agent(10.0, 0, eps=0.1), agent(12.0, 1, eps=0.2),
              agent(8.0, 2, eps=0.15, side=BeliefSide.REJECTION_LIKELY),
              agent(9.0, 3, eps=0.05, side=BeliefSide.REJECTION_LIKELY)]
    config = pprx_config()
    profile = construct_profile(config, agents)
    report = certify_ne(config, agents, profile)
    assert report.certified
    for check in report.indifference:
        if not check.clamped:
            scale = max(abs(check.lhs), abs(check.rhs), 1e-9)
            assert abs(check.lhs - check.rhs) <= 1e-6 * scale


def test_certify_spe_ppsx():
    agents = [agent(10.0, 0, eps=0.1, arrival_contribution=0),
              agent(12.0, 1, eps=0.2, arrival_contribution=1),
              agent(8.0, 2, eps=0.15, side=BeliefSide.REJECTION_LIKELY,
                    arrival_contribution=2),
              agent(9.0, 3, eps=0.05, side=BeliefSide.REJECTION_LIKELY,
                    arrival_contribution=3)]
    config = ppsx_config()
    profile = construct_profile(config, agents)
    assert profile.feasible
    report = certify_spe(config, agents, profile)
    assert report.certified, report.deviations[:3]


def test_report_serializes():
    config = pprn_config()
    profile = construct_profile(config, pprn_agents())
    report = certify_ne(config, pprn_agents(), profile)
    data = report.to_dict()
    assert data["certified"] is True
    assert data["mechanism"] == "PPRN"
    assert set(data["bounds"]) == {"0", "1", "2", "3", "4"}


# ---------------------------------------------------------------------------
# Analysis helpers
# ---------------------------------------------------------------------------


def matched_pair(eps):
    plus = agent(10.0, 0, eps=eps, side=BeliefSide.PROVISION_LIKELY)
    minus = agent(10.0, 1, eps=eps, side=BeliefSide.REJECTION_LIKELY)
    return plus, minus


def test_ordering_gap_pprx():
    plus, minus = matched_pair(0.1)
    config = pprx_config(h0=20.0, belief=6.0, contribution=5.0)
    upper, lower, gap = contribution_ordering_gap(config, plus, minus,
                                                  belief_reward=2.0)
    assert gap > 0.0
    assert upper == bound_pprx(plus, 20.0, 5.0, 2.0)
    assert lower == bound_pprx(minus, 20.0, 5.0, 2.0)


def test_ordering_gap_ppsx():
    plus, minus = matched_pair(0.1)
    cf = CostFunction()
    config = ppsx_config(h0=20.0, belief=6.0, liquidity=1.0)
    upper, lower, gap = contribution_ordering_gap(config, plus, minus,
                                                  belief_reward=2.0)
    assert upper == pytest.approx(cf.contribution_for(12.0, 0.0), rel=1e-12)
    assert lower == pytest.approx(cf.contribution_for(8.0, 0.0), rel=1e-12)
    assert gap > 0.0


def test_ordering_gap_degenerate_symmetric():
    plus, minus = matched_pair(0.0)
    config = pprx_config(h0=20.0, belief=6.0, contribution=5.0)
    _, _, gap = contribution_ordering_gap(config, plus, minus, belief_reward=0.0)
    assert gap == pytest.approx(0.0, abs=1e-12)


def test_ordering_gap_asymmetric_beliefs_alone():
    # no reward at stake: the refund-bonus gap still opens on beliefs alone
    plus, minus = matched_pair(0.2)
    config = pprx_config(h0=20.0, belief=6.0, contribution=5.0)
    _, _, gap = contribution_ordering_gap(config, plus, minus, belief_reward=0.0)
    assert gap > 0.0


def test_ordering_gap_rejects_unmatched():
    plus, _ = matched_pair(0.1)
    minus = agent(9.0, 1, eps=0.1, side=BeliefSide.REJECTION_LIKELY)
    with pytest.raises(ValueError, match="valuation"):
        contribution_ordering_gap(pprx_config(), plus, minus)
    with pytest.raises(ValueError, match="provision-minded"):
        contribution_ordering_gap(pprx_config(), minus, minus)
    with pytest.raises(ValueError, match="belief-phase"):
        contribution_ordering_gap(pprn_config(), plus, minus)


def test_combined_mechanism_gap():
    assert combined_mechanism_gap(agent(1.0, eps=0.1), 3.0) == pytest.approx(-0.6)
    assert combined_mechanism_gap(agent(1.0, eps=0.0), 3.0) == 0.0
    assert combined_mechanism_gap(agent(1.0, eps=0.1), 0.0) == 0.0
    # mirrored sign for a rejection-minded agent
    assert combined_mechanism_gap(
        agent(-1.0, eps=0.1, side=BeliefSide.REJECTION_LIKELY), 3.0
    ) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        combined_mechanism_gap(agent(1.0), -1.0)
