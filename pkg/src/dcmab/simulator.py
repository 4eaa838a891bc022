"""Episode orchestration: worker pool, budget ledger, interval merges and the training loop.

Within one interval the action matrix is frozen. Workers compute final bids
for their shard of requests (requests are dealt round-robin by position);
settlement then runs through a single ledger in request order, so results do
not depend on the number of workers. ``async_workers=True`` lets each worker
settle its own shard in chunks under a lock instead, which makes the
interleaving (and the totals) depend on thread scheduling.
"""
from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from numba import njit

from . import clustering
from .agents import AgentConfig, Algorithm, Team, make_agent
from .dataio import AuctionLog
from .market import (C_CLICK, C_COST, C_COUNT, C_REVENUE, M_CHARGED, M_CLICK, M_COST,
                     M_MAX_COST, M_REVENUE, settle_range)
from .state import IntervalAccumulator, RewardMode, StateServer, consumer_features

log = logging.getLogger(__name__)


@dataclass
class EpisodeConfig:
    steps_per_episode: int = 3
    interval_seconds: float = 3600.0
    episodes: int = 300
    slots: int = 3
    worker_count: int = 1
    budget_fraction: float = 1.0 / 3.0
    reserve: float = 0.0
    seed: int = 0
    patience: int = 50
    min_episodes: int = 0
    async_workers: bool = False
    async_chunk: int = 256

    def __post_init__(self):
        if self.steps_per_episode < 1:
            raise ValueError("steps_per_episode must be >= 1")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if not 0.0 < self.budget_fraction <= 1.0:
            raise ValueError("budget_fraction must be in (0, 1]")
        if self.slots < 1:
            raise ValueError("slots must be >= 1")


@dataclass
class IntervalReport:
    acc: IntervalAccumulator
    served: int
    gsp_violations: int
    exhausted_bids: int
    bid_range_violations: int


class Market:
    """One log plus a cluster assignment and a budget per merchant."""

    def __init__(self, auction_log: AuctionLog, assignment: clustering.ClusterAssignment,
                 budgets, slots: int = 3, reserve: float = 0.0, bid_range: float = 0.9):
        self.log = auction_log
        self.assignment = clustering.extend_assignment(assignment, auction_log)
        self.N = assignment.n_merchant_clusters
        self.L = assignment.n_consumer_clusters
        self.merchant_cluster = self.assignment.merchant_array(auction_log.merchant_ids)
        self.consumer_cluster = self.assignment.consumer_array(auction_log.consumer_ids)
        self.req_cc = self.consumer_cluster[auction_log.req_cidx]
        self.cand_mc = self.merchant_cluster[auction_log.cand_midx]
        self.cand_cc = self.req_cc[auction_log.cand_request]
        self.budgets = np.asarray(budgets, dtype=float)
        if self.budgets.shape != (auction_log.n_merchants,):
            raise ValueError("one budget per merchant required")
        self.slots, self.reserve, self.bid_range = slots, reserve, bid_range
        self._pool: Optional[ThreadPoolExecutor] = None
        self.reset()

    def reset(self):
        n = self.log.n_merchants
        self.budget_remaining = self.budgets.copy()
        self.mstats = np.zeros((n, 5))
        self.rstats = np.zeros((self.log.n_requests, 2))
        self.final_bid = np.zeros(len(self.log.cand_midx))

    def agent_budgets(self) -> np.ndarray:
        return np.bincount(self.merchant_cluster, weights=self.budgets, minlength=self.N)

    def _pool_for(self, workers):
        if self._pool is None or self._pool._max_workers != workers:
            if self._pool is not None:
                self._pool.shutdown()
            self._pool = ThreadPoolExecutor(max_workers=workers)
        return self._pool

    def _bid_shard(self, actions, reqs) -> int:
        """Write final bids for the candidates of ``reqs``; returns out-of-range count."""
        lg = self.log
        cands = _candidate_indices(lg.req_ptr, reqs)
        alpha = np.clip(actions[self.cand_mc[cands], self.cand_cc[cands]] * lg.cand_bratio[cands],
                        -self.bid_range, self.bid_range)
        bid = lg.cand_base_bid[cands] * (1.0 + alpha)
        self.final_bid[cands] = bid
        lo_b = lg.cand_base_bid[cands] * (1.0 - self.bid_range) - 1e-9
        hi_b = lg.cand_base_bid[cands] * (1.0 + self.bid_range) + 1e-9
        return int(np.count_nonzero((bid < lo_b) | (bid > hi_b)))

    def _settle(self, reqs, cells, violations):
        lg = self.log
        return settle_range(reqs, lg.req_ptr, lg.cand_midx, lg.cand_pctr, lg.cand_pcvr, lg.cand_ppb,
                            self.final_bid, lg.merchant_ids, self.merchant_cluster, self.req_cc,
                            self.budget_remaining, self.slots, self.reserve, cells, self.mstats,
                            self.rstats, violations)

    def run_interval(self, actions, lo: int, hi: int, worker_count: int = 1,
                     async_workers: bool = False, chunk: int = 256) -> IntervalReport:
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.N, self.L):
            raise ValueError(f"actions must be ({self.N}, {self.L})")
        reqs = np.arange(lo, hi, dtype=np.int64)
        shards = [reqs[w::worker_count] for w in range(worker_count)]
        cells = np.zeros((4, self.N, self.L))
        violations = np.zeros(2, dtype=np.int64)
        if worker_count == 1:
            bad = self._bid_shard(actions, reqs)
            served = self._settle(reqs, cells, violations)
        elif not async_workers:
            pool = self._pool_for(worker_count)
            bad = sum(pool.map(lambda s: self._bid_shard(actions, s), shards))
            served = self._settle(reqs, cells, violations)
        else:
            lock = threading.Lock()
            pool = self._pool_for(worker_count)

            def work(shard):
                bad_w = self._bid_shard(actions, shard)
                own = np.zeros((4, self.N, self.L))
                viol = np.zeros(2, dtype=np.int64)
                n = 0
                for start in range(0, len(shard), chunk):
                    with lock:
                        n += self._settle(shard[start:start + chunk], own, viol)
                return bad_w, own, viol, n

            bad, served = 0, 0
            for bad_w, own, viol, n in pool.map(work, shards):
                bad += bad_w
                served += n
                cells += own
                violations += viol
        acc = IntervalAccumulator(cells[C_COST], cells[C_REVENUE], cells[C_CLICK],
                                  cells[C_COUNT].astype(np.int64))
        return IntervalReport(acc, int(served), int(violations[0]), int(violations[1]), bad)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


@njit(cache=True)
def _candidate_indices(req_ptr, reqs):
    n = 0
    for r in reqs:
        n += req_ptr[r + 1] - req_ptr[r]
    out = np.empty(n, dtype=np.int64)
    k = 0
    for r in reqs:
        for c in range(req_ptr[r], req_ptr[r + 1]):
            out[k] = c
            k += 1
    return out


# --- calibration and experiment setup ---

@dataclass
class Calibration:
    c_t: float
    total_revenue: float
    merchant_cost: np.ndarray
    merchant_revenue: np.ndarray
    consumer_revenue: np.ndarray
    cells: np.ndarray  # (4, N, L) under the given assignment


def _single_cluster(auction_log: AuctionLog) -> clustering.ClusterAssignment:
    return clustering.ClusterAssignment({int(m): 0 for m in auction_log.merchant_ids},
                                        {int(c): 0 for c in auction_log.consumer_ids}, 1, 1)


def calibrate(auction_log: AuctionLog, assignment=None, slots=3, reserve=0.0) -> Calibration:
    """Replay the log with manual bids and unlimited budgets."""
    assignment = _single_cluster(auction_log) if assignment is None else assignment
    market = Market(auction_log, assignment, np.full(auction_log.n_merchants, np.inf), slots, reserve)
    cells = np.zeros((4, market.N, market.L))
    reqs = np.arange(auction_log.n_requests, dtype=np.int64)
    market._bid_shard(np.zeros((market.N, market.L)), reqs)
    market._settle(reqs, cells, np.zeros(2, dtype=np.int64))
    consumer_revenue = np.bincount(auction_log.req_cidx, weights=market.rstats[:, 1],
                                   minlength=auction_log.n_consumers)
    return Calibration(float(market.mstats[:, M_COST].sum()), float(market.mstats[:, M_REVENUE].sum()),
                       market.mstats[:, M_COST].copy(), market.mstats[:, M_REVENUE].copy(),
                       consumer_revenue, cells)


def calibrate_ct(auction_log: AuctionLog, slots=3, reserve=0.0) -> float:
    """Total expected cost of a manual-bid, unlimited-budget replay."""
    if auction_log.n_requests == 0:
        return 0.0
    return calibrate(auction_log, slots=slots, reserve=reserve).c_t


def merchant_budgets(calib: Calibration, fraction: float) -> np.ndarray:
    """Each merchant gets ``fraction`` of its own unlimited-budget cost, so the total is ``fraction * C_T``."""
    return fraction * calib.merchant_cost


@dataclass
class Setup:
    """Everything an experiment needs that is derived from the logs before training."""
    train: Market
    test: Market
    assignment: clustering.ClusterAssignment
    x_features: np.ndarray
    g_scale: np.ndarray
    reward_scale: float
    train_calibration: Calibration
    test_calibration: Calibration
    steps: int = 3

    @property
    def N(self):
        return self.assignment.n_merchant_clusters

    @property
    def L(self):
        return self.assignment.n_consumer_clusters

    def server(self) -> StateServer:
        return StateServer(self.N, self.L, self.x_features, self.g_scale)

    def with_budget_fraction(self, fraction: float) -> "Setup":
        train = Market(self.train.log, self.assignment, merchant_budgets(self.train_calibration, fraction),
                       self.train.slots, self.train.reserve, self.train.bid_range)
        test = Market(self.test.log, self.assignment, merchant_budgets(self.test_calibration, fraction),
                      self.test.slots, self.test.reserve, self.test.bid_range)
        return Setup(train, test, self.assignment, self.x_features, self.g_scale, self.reward_scale,
                     self.train_calibration, self.test_calibration, self.steps)


def prepare(train_log: AuctionLog, test_log: AuctionLog, n_merchant_clusters: int,
            n_consumer_clusters: int, budget_fraction: float = 1.0 / 3.0, slots: int = 3,
            reserve: float = 0.0, bid_range: float = 0.9, steps: int = 3) -> Setup:
    """Cluster on the training log, calibrate both logs and derive budgets and input scales."""
    pre = calibrate(train_log, slots=slots, reserve=reserve)
    assignment = clustering.build_assignment(train_log, n_merchant_clusters, n_consumer_clusters,
                                             pre.merchant_revenue, pre.consumer_revenue)
    train_cal = calibrate(train_log, assignment, slots, reserve)
    test_cal = calibrate(test_log, clustering.extend_assignment(assignment, test_log), slots, reserve)
    hist_rev = train_cal.cells[C_REVENUE].sum(axis=0)
    hist_cost = train_cal.cells[C_COST].sum(axis=0)
    x = consumer_features(n_consumer_clusters, hist_rev, hist_cost)
    g_scale = np.stack([train_cal.cells[C_COST], train_cal.cells[C_REVENUE]], axis=-1)
    g_scale = np.maximum(g_scale, 1e-6 * max(train_cal.total_revenue, 1.0))
    reward_scale = max(train_cal.total_revenue * budget_fraction / steps, 1e-9)
    train = Market(train_log, assignment, merchant_budgets(train_cal, budget_fraction), slots, reserve, bid_range)
    test = Market(test_log, assignment, merchant_budgets(test_cal, budget_fraction), slots, reserve, bid_range)
    return Setup(train, test, assignment, x, g_scale, reward_scale, train_cal, test_cal, steps)


# --- episodes ---

@dataclass
class EpisodeResult:
    agent_revenue: np.ndarray
    agent_cost: np.ndarray
    agent_click: np.ndarray
    agent_budget: np.ndarray
    step_revenue: np.ndarray   # (T, N)
    step_cost: np.ndarray      # (T, N)
    merchant_cost: np.ndarray
    merchant_charged: np.ndarray
    merchant_max_cost: np.ndarray
    budget_remaining: np.ndarray
    budgets: np.ndarray
    transitions: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    distributions: list = field(default_factory=list)
    g_history: list = field(default_factory=list)
    gsp_violations: int = 0
    exhausted_bids: int = 0
    bid_range_violations: int = 0

    @property
    def total_revenue(self) -> float:
        return float(self.agent_revenue.sum())

    @property
    def total_cost(self) -> float:
        return float(self.agent_cost.sum())

    @property
    def spent_fraction(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.agent_budget > 0, self.agent_cost / self.agent_budget, np.nan)


def run_episode(market: Market, team: Team, config: EpisodeConfig, explore: bool = False,
                train: bool = False, on_step: Optional[Callable] = None) -> EpisodeResult:
    """Play the log once: T intervals, each ending in a merge, a snapshot and (optionally) updates."""
    T = config.steps_per_episode
    server = team.server
    market.reset()
    server.begin_episode()
    team.begin_episode()
    bounds = market.log.slice_bounds(T)
    N = market.N
    step_rev, step_cost = np.zeros((T, N)), np.zeros((T, N))
    res_click = np.zeros(N)
    transitions, actions_log, dists, g_hist = [], [], [], [server.g.copy()]
    viol = np.zeros(3, dtype=np.int64)
    for t in range(T):
        actions = team.act(explore)
        server.begin_interval(actions)
        rep = market.run_interval(actions, bounds[t], bounds[t + 1], config.worker_count,
                                  config.async_workers, config.async_chunk)
        server.merge(rep.acc)
        done = server.snapshot_transition(team.modes, terminal=(t == T - 1))
        team.observe(actions, done)
        step_rev[t] = rep.acc.revenue.sum(axis=1)
        step_cost[t] = rep.acc.cost.sum(axis=1)
        res_click += rep.acc.click.sum(axis=1)
        viol += [rep.gsp_violations, rep.exhausted_bids, rep.bid_range_violations]
        transitions.extend(done)
        actions_log.append(actions)
        dists.append(server.last.d.copy())
        g_hist.append(server.g.copy())
        if train:
            team.update()
        if on_step is not None:
            on_step(t, rep)
    return EpisodeResult(
        step_rev.sum(axis=0), step_cost.sum(axis=0), res_click, market.agent_budgets(), step_rev, step_cost,
        market.mstats[:, M_COST].copy(), market.mstats[:, M_CHARGED].copy(),
        market.mstats[:, M_MAX_COST].copy(), market.budget_remaining.copy(), market.budgets.copy(),
        transitions, actions_log, dists, g_hist, int(viol[0]), int(viol[1]), int(viol[2]))


# --- teams and training ---

@dataclass
class AgentSpec:
    algorithm: Algorithm
    reward_mode: RewardMode


def uniform_specs(n_agents: int, algorithm, reward_mode=RewardMode.SELF_INTEREST) -> List[AgentSpec]:
    algorithm = Algorithm(algorithm)
    mode = RewardMode.NONE if algorithm is Algorithm.MANUAL else RewardMode(reward_mode)
    return [AgentSpec(algorithm, mode) for _ in range(n_agents)]


def partial_coordination_specs(n_agents: int, learners: int, algorithm=Algorithm.DCMAB) -> List[AgentSpec]:
    """The first ``learners`` clusters learn on total revenue, the rest bid manually."""
    return [AgentSpec(Algorithm(algorithm), RewardMode.COORDINATED) if i < learners
            else AgentSpec(Algorithm.MANUAL, RewardMode.NONE) for i in range(n_agents)]


def build_team(setup: Setup, specs: Sequence[AgentSpec], agent_config: AgentConfig, seed: int) -> Team:
    server = setup.server()
    seeds = np.random.SeedSequence(seed).spawn(len(specs) + 1)
    agents = []
    for i, spec in enumerate(specs):
        cfg = agent_config.replace(algorithm=spec.algorithm)
        agents.append(make_agent(i, setup.N, setup.L, cfg, server.actor_dim, server.critic_state_dim,
                                 seed=int(seeds[i].generate_state(1)[0]), reward_scale=setup.reward_scale))
    return Team(agents, server, [s.reward_mode for s in specs], agent_config.replay_capacity,
                seed=int(seeds[-1].generate_state(1)[0]))


@dataclass
class TrainingResult:
    curves: List[dict]
    best_episode: int
    best_greedy_revenue: float
    episodes_run: int
    converged: bool


def run_training(market: Market, team: Team, config: EpisodeConfig,
                 on_episode: Optional[Callable] = None) -> TrainingResult:
    """Algorithm loop: explore-and-learn episodes, each followed by a greedy replay.

    Training stops after ``config.episodes`` episodes or once the greedy
    training revenue has not improved for ``config.patience`` episodes. The
    team is left holding the parameters of its best greedy episode.
    """
    curves = []
    best, best_ep, best_params = -np.inf, -1, None
    converged = False
    ep = 0
    if team.any_learning and config.episodes > 0:
        for ep in range(1, config.episodes + 1):
            res = run_episode(market, team, config, explore=True, train=True)
            team.end_episode()
            greedy = run_episode(market, team, config, explore=False, train=False)
            row = {"episode": ep, "train_revenue": res.total_revenue, "greedy_revenue": greedy.total_revenue,
                   "greedy_cost": greedy.total_cost}
            for i, a in enumerate(team.agents):
                row[f"revenue_{i}"] = greedy.agent_revenue[i]
                row[f"critic_loss_{i}"] = team.stats[i].critic_loss
                row[f"actor_{i}"] = team.stats[i].actor_metric
            curves.append(row)
            if on_episode is not None:
                on_episode(row)
            if greedy.total_revenue > best + 1e-9:
                best, best_ep, best_params = greedy.total_revenue, ep, team.get_params()
            elif ep - best_ep >= config.patience and ep >= config.min_episodes:
                converged = True
                break
        if best_params is not None:
            team.set_params(best_params)
    else:
        greedy = run_episode(market, team, config)
        best, best_ep = greedy.total_revenue, 0
        for ep in range(1, config.episodes + 1):
            row = {"episode": ep, "train_revenue": greedy.total_revenue,
                   "greedy_revenue": greedy.total_revenue, "greedy_cost": greedy.total_cost}
            for i in range(len(team.agents)):
                row[f"revenue_{i}"] = greedy.agent_revenue[i]
                row[f"critic_loss_{i}"] = float("nan")
                row[f"actor_{i}"] = float("nan")
            curves.append(row)
    return TrainingResult(curves, best_ep, float(best), ep, converged)


@dataclass
class ExperimentResult:
    training: TrainingResult
    test: EpisodeResult
    team: Team

    @property
    def total_revenue(self) -> float:
        return self.test.total_revenue


def run_experiment(setup: Setup, specs: Sequence[AgentSpec], agent_config: AgentConfig,
                   config: EpisodeConfig, seed: int) -> ExperimentResult:
    """Train on the training market, then replay the test market with exploration off."""
    team = build_team(setup, specs, agent_config, seed)
    training = run_training(setup.train, team, config)
    test = run_episode(setup.test, team, config)
    return ExperimentResult(training, test, team)


# --- sweeps ---

def sweep_cluster_count(train_log: AuctionLog, test_log: AuctionLog, Ns: Sequence[int],
                        reward_mode=RewardMode.SELF_INTEREST, seeds: Sequence[int] = (0, 1, 2),
                        agent_config: Optional[AgentConfig] = None,
                        config: Optional[EpisodeConfig] = None) -> List[dict]:
    """One row per cluster count (L = N): mean and std of test total revenue over seeds."""
    agent_config = agent_config or AgentConfig()
    config = config or EpisodeConfig()
    rows = []
    for n in Ns:
        setup = prepare(train_log, test_log, n, n, config.budget_fraction, config.slots, config.reserve,
                        agent_config.bid_range, config.steps_per_episode)
        specs = uniform_specs(n, Algorithm.DCMAB, reward_mode)
        vals = [run_experiment(setup, specs, agent_config, config, s).total_revenue for s in seeds]
        rows.append({"n_clusters": n, "mean": float(np.mean(vals)), "std": float(np.std(vals)),
                     "values": vals})
        log.info("clusters=%d revenue=%.2f +- %.2f", n, rows[-1]["mean"], rows[-1]["std"])
    return rows


def sweep_budget_ratio(train_log: AuctionLog, test_log: AuctionLog, fractions: Sequence[float],
                       n_clusters: int = 3, seeds: Sequence[int] = (0, 1, 2),
                       agent_config: Optional[AgentConfig] = None,
                       config: Optional[EpisodeConfig] = None) -> List[dict]:
    """Coordinated DCMAB against manual bids for each budget fraction of C_T."""
    agent_config = agent_config or AgentConfig()
    config = config or EpisodeConfig()
    base = prepare(train_log, test_log, n_clusters, n_clusters, 1.0, config.slots, config.reserve,
                   agent_config.bid_range, config.steps_per_episode)
    rows = []
    for frac in fractions:
        setup = base.with_budget_fraction(frac)
        manual_team = build_team(setup, uniform_specs(n_clusters, Algorithm.MANUAL), agent_config, 0)
        manual = run_episode(setup.test, manual_team, config)
        specs = uniform_specs(n_clusters, Algorithm.DCMAB, RewardMode.COORDINATED)
        vals = [run_experiment(setup, specs, agent_config, config, s).total_revenue for s in seeds]
        rows.append({"fraction": frac, "dcmab_mean": float(np.mean(vals)), "dcmab_std": float(np.std(vals)),
                     "manual": manual.total_revenue,
                     "manual_spend": manual.total_cost / max(setup.test.budgets.sum(), 1e-12),
                     "values": vals})
        log.info("fraction=%.3f dcmab=%.2f manual=%.2f", frac, rows[-1]["dcmab_mean"], manual.total_revenue)
    return rows
