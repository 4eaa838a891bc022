"""Named experiments and the multi-seed synthetic benchmark.

Experiment names:

    manual, bandit, a2c, ddpg, dcmab   all N clusters run one algorithm, self-interest rewards
    coord                              DCMAB with every cluster rewarded by total revenue
    coordK (K = 1..N-1)                the first K clusters run coordinated DCMAB, the rest bid manually
    <alg>:coordinated                  any algorithm with coordinated rewards

The benchmark uses the default generator (300 merchants, 1000 consumers,
20k requests), N = L = 3 and budgets at a third of the manual spend.
"""
from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .agents import AgentConfig, Algorithm
from .dataio import AuctionLog, GeneratorConfig, generate_records
from .simulator import (AgentSpec, EpisodeConfig, ExperimentResult, Setup, partial_coordination_specs,
                        prepare, run_experiment, uniform_specs)
from .state import RewardMode

log = logging.getLogger(__name__)

BASELINES = ("manual", "bandit", "a2c", "ddpg", "dcmab")


def benchmark_agent_config(**kw) -> AgentConfig:
    """Hyperparameters shared by every learner on the benchmark."""
    base = dict(actor_lr=1e-3, critic_lr=1e-3, updates_per_step=5)
    base.update(kw)
    return AgentConfig(**base)


def benchmark_episode_config(**kw) -> EpisodeConfig:
    """Every learner gets the full 300-episode budget; the best greedy episode is kept."""
    base = dict(episodes=300, patience=50, min_episodes=300)
    base.update(kw)
    return EpisodeConfig(**base)


def experiment_specs(name: str, n_agents: int) -> List[AgentSpec]:
    name = name.strip().lower()
    if name == "coord":
        return uniform_specs(n_agents, Algorithm.DCMAB, RewardMode.COORDINATED)
    m = re.fullmatch(r"coord(\d+)", name)
    if m:
        k = int(m.group(1))
        if not 0 <= k <= n_agents:
            raise ValueError(f"{name}: need 0 <= K <= {n_agents}")
        return partial_coordination_specs(n_agents, k)
    alg, _, mode = name.partition(":")
    try:
        algorithm = Algorithm(alg)
    except ValueError:
        raise ValueError(f"unknown experiment {name!r}") from None
    return uniform_specs(n_agents, algorithm, RewardMode(mode) if mode else RewardMode.SELF_INTEREST)


@dataclass
class RunSummary:
    experiment: str
    seed: int
    total_revenue: float
    agent_revenue: List[float]
    agent_cost: List[float]
    spent_fraction: List[float]
    best_episode: int
    episodes_run: int
    seconds: float

    @classmethod
    def from_result(cls, name, seed, res: ExperimentResult, seconds) -> "RunSummary":
        t = res.test
        return cls(name, seed, t.total_revenue, t.agent_revenue.tolist(), t.agent_cost.tolist(),
                   t.spent_fraction.tolist(), res.training.best_episode, res.training.episodes_run, seconds)


@dataclass
class BenchmarkResult:
    runs: List[RunSummary] = field(default_factory=list)

    def totals(self, name: str) -> np.ndarray:
        return np.array([r.total_revenue for r in self.runs if r.experiment == name])

    def mean(self, name: str) -> float:
        return float(np.mean(self.totals(name)))

    def table(self) -> List[dict]:
        names = list(dict.fromkeys(r.experiment for r in self.runs))
        rows = []
        for n in names:
            v = self.totals(n)
            rows.append({"experiment": n, "mean": float(v.mean()), "std": float(v.std()),
                         "min": float(v.min()), "max": float(v.max()), "seeds": len(v)})
        return rows

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.runs])

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkResult":
        return cls([RunSummary(**d) for d in json.loads(text)])


def standard_setup(train_seed: int = 1, test_seed: int = 2, gen: Optional[GeneratorConfig] = None,
                   n_clusters: int = 3, budget_fraction: float = 1.0 / 3.0) -> Setup:
    gen = gen or GeneratorConfig()
    train = AuctionLog(generate_records(gen, train_seed))
    test = AuctionLog(generate_records(gen, test_seed))
    return prepare(train, test, n_clusters, n_clusters, budget_fraction)


def run_named(setup: Setup, name: str, seed: int, agent_config: Optional[AgentConfig] = None,
              episode_config: Optional[EpisodeConfig] = None) -> ExperimentResult:
    agent_config = agent_config or benchmark_agent_config()
    episode_config = episode_config or benchmark_episode_config()
    return run_experiment(setup, experiment_specs(name, setup.N), agent_config, episode_config, seed)


def run_benchmark(names: Sequence[str], seeds: Sequence[int], setup: Optional[Setup] = None,
                  agent_config: Optional[AgentConfig] = None, episode_config: Optional[EpisodeConfig] = None,
                  cache: Optional[str] = None) -> BenchmarkResult:
    """Train-then-test every (experiment, seed) pair.

    With ``cache`` set, finished runs are appended to that JSON file and
    skipped on the next call, so an interrupted sweep resumes where it stopped.
    """
    setup = setup or standard_setup()
    done: Dict[tuple, RunSummary] = {}
    if cache and os.path.exists(cache):
        with open(cache) as fh:
            done = {(r.experiment, r.seed): r for r in BenchmarkResult.from_json(fh.read()).runs}
    out = BenchmarkResult()
    for name in names:
        for seed in seeds:
            if (name, seed) not in done:
                t0 = time.perf_counter()
                res = run_named(setup, name, seed, agent_config, episode_config)
                done[(name, seed)] = RunSummary.from_result(name, seed, res, time.perf_counter() - t0)
                log.info("%s seed=%d revenue=%.1f (%.0fs)", name, seed, res.total_revenue,
                         done[(name, seed)].seconds)
                if cache:
                    with open(cache, "w") as fh:
                        fh.write(BenchmarkResult(list(done.values())).to_json())
            out.runs.append(done[(name, seed)])
    return out
