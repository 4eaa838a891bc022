"""A guided tour of one experiment on a small market.

Run with ``python notebooks/walkthrough.py``; it takes about half a minute.
Each block prints what it has just computed, so the output reads top to bottom
as a short report.
"""
import numpy as np

from dcmab import GeneratorConfig, EpisodeConfig, compute_metrics, pareto_compare
from dcmab.agents import AgentConfig, Algorithm
from dcmab.dataio import AuctionLog, generate_records
from dcmab.simulator import build_team, prepare, run_episode, run_training, uniform_specs
from dcmab.state import RewardMode

# 1. Two days of synthetic traffic from the same merchant universe.
gen = GeneratorConfig(merchants=60, consumers=120, requests=3000, candidates_per_request=8)
train_log = AuctionLog(generate_records(gen, seed=1))
test_log = AuctionLog(generate_records(gen, seed=2))
print(f"train log: {train_log.n_requests} requests, {train_log.n_merchants} merchants")

# 2. Cluster merchants and consumers, replay the logs with unlimited budgets to
#    get the manual cost C_T, and give every merchant a third of its own cost.
setup = prepare(train_log, test_log, n_merchant_clusters=3, n_consumer_clusters=3, budget_fraction=1 / 3)
print(f"C_T train {setup.train_calibration.c_t:.2f}, test {setup.test_calibration.c_t:.2f}")
print("merchants per cluster:",
      np.bincount(setup.assignment.merchant_array(train_log.merchant_ids), minlength=setup.N).tolist())

# 3. The manual baseline bids the logged base bid every time.
episode = EpisodeConfig(episodes=100, patience=100)
manual = build_team(setup, uniform_specs(setup.N, Algorithm.MANUAL, RewardMode.NONE), AgentConfig(), seed=0)
manual_test = run_episode(setup.test, manual, episode)
print(f"manual test revenue {manual_test.total_revenue:.2f}, spend {np.round(manual_test.spent_fraction, 3)}")

# 4. One DCMAB agent per merchant cluster, trained on the training day.
cfg = AgentConfig(actor_lr=1e-3, updates_per_step=5, minibatch_size=8, actor_hidden=(64, 64),
                  critic_hidden=(32, 32))
team = build_team(setup, uniform_specs(setup.N, Algorithm.DCMAB), cfg, seed=0)
training = run_training(setup.train, team, episode)
curve = [round(r["greedy_revenue"]) for r in training.curves]
print(f"greedy training revenue every 10 episodes: {curve[::10]}")
print(f"best episode {training.best_episode}, revenue {training.best_greedy_revenue:.2f}")

# 5. Replay the unseen test day with exploration off and compare per cluster.
test = run_episode(setup.test, team, episode)
a, b = compute_metrics(test), compute_metrics(manual_test)
for ca, cb in zip(a.clusters, b.clusters):
    print(f"cluster {ca.cluster}: revenue {ca.revenue:8.2f} vs manual {cb.revenue:8.2f}, ROI {ca.roi:.2f}")
print(f"total {a.total.revenue:.2f} vs {b.total.revenue:.2f}; Pareto: {pareto_compare(a, b).value}")
