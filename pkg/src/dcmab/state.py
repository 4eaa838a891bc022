"""Shared state for the agents.

``g`` is an ``(N, L, 2)`` array of cumulative ``(cost, revenue)`` per
merchant cluster i and consumer cluster j; flattened row-major it gives
``[cost_11, rev_11, cost_12, rev_12, ..., cost_NL, rev_NL]``. The distribution
``d`` of executed cluster actions is ``(N, L)`` and flattens the same way.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

COST, REVENUE = 0, 1


class RewardMode(str, Enum):
    SELF_INTEREST = "self_interest"
    COORDINATED = "coordinated"
    NONE = "none"  # manual agents receive no learning signal


def update_general_info(g: np.ndarray, outcome, i: int, j: int,
                        cluster_of: Optional[Dict[int, int]] = None) -> np.ndarray:
    """Accumulate the winners of ``outcome`` that belong to merchant cluster ``i`` into ``g[i, j]``.

    Without ``cluster_of`` every winner is taken to be in cluster ``i``.
    """
    for w in outcome.winners:
        if cluster_of is not None and cluster_of[w.merchant_id] != i:
            continue
        if w.expected_cost < 0 or w.expected_revenue < 0:
            raise ValueError("negative increment")
        g[i, j, COST] += w.expected_cost
        g[i, j, REVENUE] += w.expected_revenue
    return g


@dataclass
class ActionDistribution:
    d: np.ndarray
    degenerate: bool

    @property
    def flat(self) -> np.ndarray:
        return self.d.ravel()


def aggregate_action_distribution(counts) -> ActionDistribution:
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("execution counts must be >= 0")
    total = counts.sum()
    if total <= 0:
        return ActionDistribution(np.zeros_like(counts), True)
    return ActionDistribution(counts / total, False)


def consumer_features(n_consumer_clusters: int, hist_revenue, hist_cost) -> np.ndarray:
    """Rows ``x_j = one_hot(j) ++ (revenue_j, cost_j)``, historical pair scaled by its max over j."""
    L = n_consumer_clusters
    rev = np.asarray(hist_revenue, dtype=float)
    cost = np.asarray(hist_cost, dtype=float)
    rev = rev / rev.max() if rev.max() > 0 else rev
    cost = cost / cost.max() if cost.max() > 0 else cost
    return np.hstack([np.eye(L), rev[:, None], cost[:, None]])


@dataclass
class TransitionTuple:
    g: np.ndarray          # (N, L, 2) at interval start, raw currency
    d: np.ndarray          # (N, L) executed-action distribution of this interval
    actions: np.ndarray    # (N, L) in [-1, 1]
    rewards: np.ndarray    # (N,), NaN for agents without a learning signal
    g_next: np.ndarray
    d_next: np.ndarray     # distribution of the following interval; zeros after the last one
    terminal: bool
    step: int = 0
    degenerate: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "step": self.step, "terminal": self.terminal, "degenerate": self.degenerate,
            "shape": list(self.g.shape[:2]),
            "g": self.g.ravel().tolist(), "d": self.d.ravel().tolist(),
            "actions": self.actions.ravel().tolist(),
            "rewards": [None if np.isnan(r) else float(r) for r in self.rewards],
            "g_next": self.g_next.ravel().tolist(), "d_next": self.d_next.ravel().tolist(),
        })

    @classmethod
    def from_json(cls, line: str) -> "TransitionTuple":
        o = json.loads(line)
        n, l = o["shape"]
        rewards = np.array([np.nan if r is None else r for r in o["rewards"]], dtype=float)
        return cls(np.array(o["g"]).reshape(n, l, 2), np.array(o["d"]).reshape(n, l),
                   np.array(o["actions"]).reshape(n, l), rewards,
                   np.array(o["g_next"]).reshape(n, l, 2), np.array(o["d_next"]).reshape(n, l),
                   o["terminal"], o["step"], o["degenerate"])


def write_transitions(path, tuples: Sequence[TransitionTuple]) -> None:
    with open(path, "w") as fh:
        for t in tuples:
            fh.write(t.to_json() + "\n")


def read_transitions(path) -> List[TransitionTuple]:
    with open(path) as fh:
        return [TransitionTuple.from_json(line) for line in fh if line.strip()]


def interval_rewards(agent_revenue, modes: Sequence[RewardMode]) -> np.ndarray:
    """Per-agent reward for one interval under each agent's reward mode."""
    agent_revenue = np.asarray(agent_revenue, dtype=float)
    total = agent_revenue.sum()
    out = np.full(len(modes), np.nan)
    for i, mode in enumerate(modes):
        mode = RewardMode(mode)
        if mode is RewardMode.SELF_INTEREST:
            out[i] = agent_revenue[i]
        elif mode is RewardMode.COORDINATED:
            out[i] = total
    return out


class SnapshotError(RuntimeError):
    pass


@dataclass
class IntervalAccumulator:
    """What one worker (or the merged pool) saw during one interval."""
    cost: np.ndarray
    revenue: np.ndarray
    click: np.ndarray
    counts: np.ndarray

    @classmethod
    def zeros(cls, n, l):
        return cls(np.zeros((n, l)), np.zeros((n, l)), np.zeros((n, l)), np.zeros((n, l), dtype=np.int64))

    def merge(self, other: "IntervalAccumulator") -> "IntervalAccumulator":
        self.cost += other.cost
        self.revenue += other.revenue
        self.click += other.click
        self.counts += other.counts
        return self


class StateServer:
    """Owns ``g`` and the interval accumulators; the single merge point at each interval boundary."""

    def __init__(self, n_agents: int, n_consumer_clusters: int, x_features: np.ndarray,
                 g_scale: Optional[np.ndarray] = None):
        self.N, self.L = n_agents, n_consumer_clusters
        self.x = np.asarray(x_features, dtype=float)
        if self.x.shape != (self.L, self.L + 2):
            raise ValueError(f"x features must be ({self.L}, {self.L + 2})")
        self.g_scale = np.ones((self.N, self.L, 2)) if g_scale is None else np.maximum(g_scale, 1e-9)
        self.begin_episode()

    def begin_episode(self):
        self.g = np.zeros((self.N, self.L, 2))
        self.step = 0
        self.acc = IntervalAccumulator.zeros(self.N, self.L)
        self._open = False
        self._pending: Optional[TransitionTuple] = None
        self._interval_g0 = None
        self._actions = None

    # --- network inputs ---
    def g_input(self, g=None) -> np.ndarray:
        g = self.g if g is None else g
        return (np.asarray(g) / self.g_scale).reshape(-1)

    def actor_inputs(self, g=None) -> np.ndarray:
        """``(L, 2NL + L + 2)``: row j is ``[g, x_j]``."""
        gi = self.g_input(g)
        return np.hstack([np.tile(gi, (self.L, 1)), self.x])

    def critic_state(self, g=None) -> np.ndarray:
        """``[g, x_1, ..., x_L]``."""
        return np.concatenate([self.g_input(g), self.x.ravel()])

    def critic_states(self, gs: np.ndarray) -> np.ndarray:
        """Batched ``critic_state`` for stacked ``(S, N, L, 2)`` snapshots."""
        gi = (np.asarray(gs) / self.g_scale).reshape(len(gs), -1)
        return np.hstack([gi, np.tile(self.x.ravel(), (len(gs), 1))])

    def actor_inputs_batch(self, gs: np.ndarray) -> np.ndarray:
        """Batched ``actor_inputs``: ``(S * L, actor_dim)``, rows grouped by snapshot."""
        S = len(gs)
        gi = np.repeat((np.asarray(gs) / self.g_scale).reshape(S, -1), self.L, axis=0)
        return np.hstack([gi, np.tile(self.x, (S, 1))])

    @property
    def actor_dim(self) -> int:
        return 2 * self.N * self.L + self.L + 2

    @property
    def critic_state_dim(self) -> int:
        return 2 * self.N * self.L + self.L * (self.L + 2)

    # --- interval bookkeeping ---
    def begin_interval(self, actions: np.ndarray):
        if self._open:
            raise SnapshotError("interval already open")
        self._open = True
        self._interval_g0 = self.g.copy()
        self._actions = np.array(actions, dtype=float)
        self.acc = IntervalAccumulator.zeros(self.N, self.L)

    def merge(self, worker_acc: IntervalAccumulator):
        if not self._open:
            raise SnapshotError("no open interval")
        if np.any(worker_acc.cost < 0) or np.any(worker_acc.revenue < 0):
            raise ValueError("negative increment")
        self.acc.merge(worker_acc)

    def snapshot_transition(self, modes: Sequence[RewardMode], terminal: bool) -> List[TransitionTuple]:
        """Close the interval; return the tuples completed by it.

        The tuple of the interval just closed is held back until the next
        interval's distribution ``d_next`` is known, except at the terminal
        step where ``d_next`` is zero and both pending tuples are released.
        """
        if not self._open:
            raise SnapshotError("snapshot requested twice in one interval")
        self._open = False
        self.g[..., COST] += self.acc.cost
        self.g[..., REVENUE] += self.acc.revenue
        dist = aggregate_action_distribution(self.acc.counts)
        rewards = interval_rewards(self.acc.revenue.sum(axis=1), modes)
        cur = TransitionTuple(self._interval_g0, dist.d, self._actions, rewards, self.g.copy(),
                              np.zeros((self.N, self.L)), terminal, self.step, dist.degenerate)
        self.step += 1
        done = []
        if self._pending is not None:
            self._pending.d_next = dist.d.copy()
            done.append(self._pending)
            self._pending = None
        if terminal:
            done.append(cur)
        else:
            self._pending = cur
        self.last = cur
        return done
