import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcmab.market import (AuctionRequest, CandidateAd, MerchantProfile, gsp_price, rank_by_ecpm,
                          settle_auction)
from oracles import brute_force_settle


def cand(mid, bid, pctr, pcvr=0.1, avg=0.1):
    return CandidateAd(mid, pctr, pcvr, avg, bid)


def merchants_for(cands, budget=np.inf, ppb=50.0):
    return {c.merchant_id: MerchantProfile(c.merchant_id, 1.0, ppb, budget) for c in cands}


def test_rank_preserves_order_when_already_sorted():
    cs = [cand(1, 2.0, 0.10), cand(2, 1.0, 0.15), cand(3, 0.5, 0.20)]
    # eCPMs are 0.20, 0.15, 0.10
    assert [c.merchant_id for c in rank_by_ecpm(cs)] == [1, 2, 3]
    assert [round(c.ecpm, 12) for c in rank_by_ecpm(cs)] == [0.2, 0.15, 0.1]


def test_rank_ties_break_by_id():
    cs = [cand(7, 1.0, 0.1), cand(3, 1.0, 0.1)]
    assert [c.merchant_id for c in rank_by_ecpm(cs)] == [3, 7]


def test_rank_single_and_empty():
    c = cand(1, 1.0, 0.1)
    assert rank_by_ecpm([c]) == [c]
    assert rank_by_ecpm([]) == []


def test_gsp_price_examples():
    ranked = [cand(1, 2.0, 0.10), cand(2, 1.0, 0.15)]
    assert gsp_price(ranked, 0) == pytest.approx(1.5)
    assert gsp_price(ranked, 1) == 0.0
    ranked = [cand(1, 1.0, 0.10), cand(2, 2.0, 0.05)]
    assert gsp_price(ranked, 0) == pytest.approx(1.0)


def test_gsp_price_uses_reserve_for_last():
    assert gsp_price([cand(1, 1.0, 0.1)], 0, reserve=0.3) == 0.3


def test_settle_expected_cost_and_revenue():
    cs = [cand(1, 2.0, 0.10, pcvr=0.2), cand(2, 1.0, 0.15)]
    ms = merchants_for(cs, budget=10.0)
    out = settle_auction(AuctionRequest(0, 0, 0, 0.0, cs), ms, slots=1)
    w = out.winners[0]
    assert w.merchant_id == 1
    assert w.expected_cost == pytest.approx(0.15)
    assert w.expected_revenue == pytest.approx(1.0)
    assert ms[1].budget_remaining == pytest.approx(10.0 - 0.15)
    assert ms[2].budget_remaining == 10.0  # loser pays nothing


def test_settle_loser_beyond_slots_gets_nothing():
    cs = [cand(i, 1.0 + i, 0.1) for i in range(4)]
    out = settle_auction(AuctionRequest(0, 0, 0, 0.0, cs), merchants_for(cs), slots=3)
    assert [w.merchant_id for w in out.winners] == [3, 2, 1]
    assert 0 not in {w.merchant_id for w in out.winners}


def test_settle_fewer_candidates_than_slots():
    cs = [cand(1, 2.0, 0.1), cand(2, 1.0, 0.1)]
    out = settle_auction(AuctionRequest(0, 0, 0, 0.0, cs), merchants_for(cs), slots=3)
    assert len(out.winners) == 2
    assert out.winners[0].price == pytest.approx(1.0)
    assert out.winners[1].price == 0.0


def test_exhausted_merchant_is_filtered_and_budget_floors_at_zero():
    cs = [cand(1, 2.0, 0.5), cand(2, 1.0, 0.5), cand(3, 0.5, 0.5)]
    ms = merchants_for(cs, budget=0.1)
    ms[2].budget_remaining = 0.0
    out = settle_auction(AuctionRequest(0, 0, 0, 0.0, cs), ms, slots=1)
    # merchant 2 is out, so 1 is priced against 3: 0.5 * 0.5 / 0.5 = 0.5 per click, 0.25 expected
    assert out.winners[0].price == pytest.approx(0.5)
    assert ms[1].budget_remaining == 0.0
    out = settle_auction(AuctionRequest(1, 0, 0, 0.0, cs), ms, slots=3)
    assert [w.merchant_id for w in out.winners] == [3]


def test_zero_pctr_candidate_never_ranks():
    cs = [cand(1, 5.0, 0.0), cand(2, 1.0, 0.1)]
    out = settle_auction(AuctionRequest(0, 0, 0, 0.0, cs), merchants_for(cs), slots=3)
    assert [w.merchant_id for w in out.winners] == [2]


cand_strategy = st.lists(
    st.tuples(st.floats(0.1, 1.9), st.floats(0.001, 1.0), st.floats(0.0, 1.0)),
    min_size=1, max_size=6)


@settings(max_examples=200, deadline=None)
@given(cand_strategy)
def test_gsp_never_charges_above_own_bid(raw):
    cs = [cand(i, b, p, v) for i, (b, p, v) in enumerate(raw)]
    out = settle_auction(AuctionRequest(0, 0, 0, 0.0, cs), merchants_for(cs), slots=3)
    bids = {c.merchant_id: c.final_bid for c in cs}
    for w in out.winners:
        assert w.price <= bids[w.merchant_id] + 1e-9
        assert w.expected_cost >= 0 and w.expected_revenue >= 0


@settings(max_examples=200, deadline=None)
@given(cand_strategy)
def test_rank_is_permutation_sorted_by_ecpm(raw):
    cs = [cand(i, b, p) for i, (b, p, _) in enumerate(raw)]
    ranked = rank_by_ecpm(cs)
    assert sorted(c.merchant_id for c in ranked) == list(range(len(cs)))
    scores = [c.ecpm for c in ranked]
    assert all(a >= b for a, b in zip(scores, scores[1:]))


@settings(max_examples=200, deadline=None)
@given(cand_strategy, st.integers(0, 5), st.floats(1.0, 3.0))
def test_raising_own_bid_never_lowers_position(raw, who, factor):
    cs = [cand(i, b, p) for i, (b, p, _) in enumerate(raw)]
    who = who % len(cs)
    before = [c.merchant_id for c in rank_by_ecpm(cs)].index(who)
    cs[who] = cand(who, cs[who].final_bid * factor, cs[who].pctr)
    after = [c.merchant_id for c in rank_by_ecpm(cs)].index(who)
    assert after <= before


def test_matches_brute_force_on_random_sequences():
    rng = np.random.default_rng(3)
    for trial in range(300):
        n = rng.integers(1, 6)
        ids = rng.choice(20, n, replace=False)
        raw = [dict(id=int(i), bid=float(rng.choice([0.5, 1.0, rng.uniform(0.1, 2)])),
                    pctr=float(rng.choice([0.1, rng.uniform(0, 0.3)])), pcvr=float(rng.uniform(0, 0.3)))
               for i in ids]
        ppb = {int(i): float(rng.uniform(1, 100)) for i in ids}
        budgets = {int(i): float(rng.choice([np.inf, 0.0, rng.uniform(0, 0.2)])) for i in ids}
        oracle_budgets = dict(budgets)
        expected = brute_force_settle(raw, oracle_budgets, ppb)
        ms = {i: MerchantProfile(i, 1.0, ppb[i], budgets[i]) for i in budgets}
        cs = [CandidateAd(c["id"], c["pctr"], c["pcvr"], 0.1, c["bid"]) for c in raw]
        out = settle_auction(AuctionRequest(trial, 0, 0, 0.0, cs), ms)
        got = [(w.merchant_id, w.price, w.expected_cost, w.expected_revenue, w.expected_click)
               for w in out.winners]
        assert got == expected
        assert {i: m.budget_remaining for i, m in ms.items()} == oracle_budgets
