"""Single-auction mechanics: eCPM ranking, GSP pricing and expected-value settlement.

The pure-Python functions here are the reference path. The simulator settles
whole intervals through :func:`settle_range`, a compiled kernel that must
agree with :func:`settle_auction` auction by auction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from numba import njit

PRICE_ATOL = 1e-9


@dataclass
class MerchantProfile:
    merchant_id: int
    base_bid: float
    ppb: float
    budget: float
    budget_remaining: Optional[float] = None
    cluster_id: int = 0

    def __post_init__(self):
        if self.budget_remaining is None:
            self.budget_remaining = self.budget
        if self.base_bid <= 0:
            raise ValueError(f"merchant {self.merchant_id}: base_bid must be > 0")
        if self.ppb < 0:
            raise ValueError(f"merchant {self.merchant_id}: ppb must be >= 0")

    @property
    def active(self) -> bool:
        return self.budget_remaining > 0


@dataclass
class CandidateAd:
    merchant_id: int
    pctr: float
    pcvr: float
    pcvr_avg: float
    final_bid: float
    ppb: float = 0.0

    @property
    def bratio(self) -> float:
        return self.pcvr / self.pcvr_avg

    @property
    def ecpm(self) -> float:
        return self.final_bid * self.pctr


@dataclass
class AuctionRequest:
    request_id: int
    consumer_id: int
    consumer_cluster_id: int
    timestamp: float
    candidates: List[CandidateAd] = field(default_factory=list)


@dataclass
class Winner:
    merchant_id: int
    price: float  # per click
    expected_cost: float
    expected_revenue: float
    expected_click: float


@dataclass
class AuctionOutcome:
    winners: List[Winner]
    slots: int = 3

    @property
    def cost(self) -> float:
        return sum(w.expected_cost for w in self.winners)

    @property
    def revenue(self) -> float:
        return sum(w.expected_revenue for w in self.winners)


def rank_by_ecpm(candidates: Sequence[CandidateAd]) -> List[CandidateAd]:
    """Sort by ``final_bid * pctr`` descending, ties by ascending merchant id."""
    return sorted(candidates, key=lambda c: (-c.final_bid * c.pctr, c.merchant_id))


def gsp_price(ranked: Sequence[CandidateAd], slot_index: int, reserve: float = 0.0) -> float:
    """Per-click price of the winner at ``slot_index`` under GSP."""
    winner = ranked[slot_index]
    if winner.pctr <= 0:
        raise ValueError("winner with pctr=0 must be filtered before ranking")
    if slot_index + 1 >= len(ranked):
        return reserve
    nxt = ranked[slot_index + 1]
    return nxt.pctr * nxt.final_bid / winner.pctr


def eligible_candidates(request: AuctionRequest,
                        merchants: Dict[int, MerchantProfile]) -> List[CandidateAd]:
    """Drop candidates whose merchant is out of budget or who cannot be priced."""
    return [c for c in request.candidates
            if merchants[c.merchant_id].budget_remaining > 0 and c.pctr > 0]


def settle_auction(request: AuctionRequest, merchants: Dict[int, MerchantProfile],
                   slots: int = 3, reserve: float = 0.0) -> AuctionOutcome:
    """Rank, price and settle one auction in expectation.

    Winners' ``budget_remaining`` is decremented in place and floored at 0.
    A merchant whose budget is already exhausted is filtered out and pays
    nothing.
    """
    ranked = rank_by_ecpm(eligible_candidates(request, merchants))
    winners = []
    for k in range(min(slots, len(ranked))):
        cand = ranked[k]
        price = gsp_price(ranked, k, reserve)
        cost = price * cand.pctr
        revenue = cand.pctr * cand.pcvr * merchants[cand.merchant_id].ppb
        m = merchants[cand.merchant_id]
        m.budget_remaining = max(m.budget_remaining - cost, 0.0)
        winners.append(Winner(cand.merchant_id, price, cost, revenue, cand.pctr))
    return AuctionOutcome(winners, slots)


def adjusted_bid(action, bratio, base_bid, bid_range: float = 0.9):
    """``base_bid * (1 + clip(action * bratio, -range, range))``; works on arrays."""
    alpha = np.clip(np.multiply(action, bratio), -bid_range, bid_range)
    return np.multiply(base_bid, 1.0 + alpha)


# column layout of the per-merchant statistics written by settle_range
M_COST, M_REVENUE, M_CLICK, M_CHARGED, M_MAX_COST = range(5)
# layers of the per-cell (N, L) statistics
C_COST, C_REVENUE, C_CLICK, C_COUNT = range(4)


@njit(cache=True)
def settle_range(reqs, req_ptr, cand_midx, cand_pctr, cand_pcvr, cand_ppb, final_bid,
                 merchant_id, merchant_cluster, req_consumer_cluster, budget_remaining,
                 slots, reserve, cells, mstats, rstats, violations):
    """Settle the requests listed in ``reqs``, in that order, against one budget ledger.

    Mutates ``budget_remaining`` and adds into ``cells`` (4, N, L), ``mstats``
    (n_merchants, 5) and ``rstats`` (n_requests, 2: cost, revenue).
    ``violations[0]`` counts GSP prices above the winner's own bid,
    ``violations[1]`` counts exhausted merchants reaching a ranking.
    Every eligible candidate counts as one execution of its cell's action.
    """
    width = slots + 1
    top = np.empty(width, dtype=np.int64)
    top_score = np.empty(width)
    top_id = np.empty(width, dtype=np.int64)
    served = 0
    for idx in range(reqs.shape[0]):
        r = reqs[idx]
        j = req_consumer_cluster[r]
        n_top = 0
        for c in range(req_ptr[r], req_ptr[r + 1]):
            m = cand_midx[c]
            if budget_remaining[m] <= 0.0 or cand_pctr[c] <= 0.0:
                continue
            cells[C_COUNT, merchant_cluster[m], j] += 1.0
            score = final_bid[c] * cand_pctr[c]
            mid = merchant_id[m]
            # insertion into a short sorted list: score desc, id asc
            pos = n_top
            while pos > 0 and (score > top_score[pos - 1] or
                               (score == top_score[pos - 1] and mid < top_id[pos - 1])):
                pos -= 1
            if pos >= width:
                continue
            last = n_top if n_top < width else width - 1
            for q in range(last, pos, -1):
                top[q] = top[q - 1]
                top_score[q] = top_score[q - 1]
                top_id[q] = top_id[q - 1]
            top[pos] = c
            top_score[pos] = score
            top_id[pos] = mid
            if n_top < width:
                n_top += 1
        n_win = min(slots, n_top)
        if n_win > 0:
            served += 1
        for k in range(n_win):
            c = top[k]
            m = cand_midx[c]
            if budget_remaining[m] <= 0.0:
                violations[1] += 1
            if k + 1 < n_top:
                nx = top[k + 1]
                price = cand_pctr[nx] * final_bid[nx] / cand_pctr[c]
            else:
                price = reserve
            if price > final_bid[c] + 1e-9:
                violations[0] += 1
            cost = price * cand_pctr[c]
            revenue = cand_pctr[c] * cand_pcvr[c] * cand_ppb[c]
            before = budget_remaining[m]
            if cost >= before:
                mstats[m, M_CHARGED] += before
                budget_remaining[m] = 0.0
            else:
                mstats[m, M_CHARGED] += cost
                budget_remaining[m] = before - cost
            i = merchant_cluster[m]
            cells[C_COST, i, j] += cost
            cells[C_REVENUE, i, j] += revenue
            cells[C_CLICK, i, j] += cand_pctr[c]
            mstats[m, M_COST] += cost
            mstats[m, M_REVENUE] += revenue
            mstats[m, M_CLICK] += cand_pctr[c]
            if cost > mstats[m, M_MAX_COST]:
                mstats[m, M_MAX_COST] = cost
            rstats[r, 0] += cost
            rstats[r, 1] += revenue
    return served
