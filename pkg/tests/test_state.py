import numpy as np
import pytest

from dcmab.market import AuctionOutcome, Winner
from dcmab.state import (IntervalAccumulator, RewardMode, SnapshotError, StateServer, TransitionTuple,
                         aggregate_action_distribution, consumer_features, interval_rewards,
                         read_transitions, update_general_info, write_transitions)


def outcome(*pairs, ids=None):
    ids = ids or list(range(len(pairs)))
    return AuctionOutcome([Winner(i, 0.0, c, r, 0.1) for i, (c, r) in zip(ids, pairs)])


def test_update_general_info_accumulates():
    g = np.zeros((2, 2, 2))
    update_general_info(g, outcome((0.15, 1.0)), 0, 0)
    assert g[0, 0].tolist() == [0.15, 1.0]
    assert g.sum() == pytest.approx(1.15)


def test_update_general_info_two_winners_same_cell():
    g = np.zeros((1, 1, 2))
    update_general_info(g, outcome((0.1, 0.0), (0.2, 0.0)), 0, 0)
    assert g[0, 0, 0] == pytest.approx(0.3)


def test_update_general_info_losers_only():
    g = np.zeros((2, 2, 2))
    update_general_info(g, AuctionOutcome([]), 1, 1)
    assert not g.any()


def test_update_general_info_filters_by_cluster_and_rejects_negative():
    g = np.zeros((2, 1, 2))
    update_general_info(g, outcome((1.0, 2.0), (3.0, 4.0), ids=[10, 11]), 1, 0, cluster_of={10: 0, 11: 1})
    assert g[1, 0].tolist() == [3.0, 4.0] and not g[0].any()
    with pytest.raises(ValueError):
        update_general_info(g, outcome((-1.0, 0.0)), 0, 0)


def test_action_distribution_examples():
    assert np.allclose(aggregate_action_distribution([[1, 1], [1, 1]]).d, 0.25)
    d = aggregate_action_distribution([[3, 0], [0, 1]])
    assert d.d.tolist() == [[0.75, 0], [0, 0.25]] and not d.degenerate
    z = aggregate_action_distribution([[0, 0], [0, 0]])
    assert z.degenerate and not z.d.any()
    assert z.flat.shape == (4,)


def test_interval_rewards_modes():
    rev = [2, 3, 5]
    assert interval_rewards(rev, [RewardMode.SELF_INTEREST] * 3).tolist() == [2, 3, 5]
    assert interval_rewards(rev, [RewardMode.COORDINATED] * 3).tolist() == [10, 10, 10]
    part = interval_rewards(rev, [RewardMode.COORDINATED, RewardMode.NONE, RewardMode.NONE])
    assert part[0] == 10 and np.isnan(part[1:]).all()


def test_consumer_features_one_hot():
    x = consumer_features(3, [10.0, 5.0, 0.0], [2.0, 4.0, 1.0])
    assert x.shape == (3, 5)
    assert np.all(x[:, :3].sum(axis=1) == 1)
    assert x[:, 3].tolist() == [1.0, 0.5, 0.0]
    assert x[:, 4].tolist() == [0.5, 1.0, 0.25]


def make_server(N=2, L=2):
    return StateServer(N, L, consumer_features(L, np.ones(L), np.ones(L)))


def acc(N, L, cost, rev, counts):
    a = IntervalAccumulator.zeros(N, L)
    a.cost[...] = cost
    a.revenue[...] = rev
    a.counts[...] = counts
    return a


def test_snapshot_chain_and_rewards():
    s = make_server()
    modes = [RewardMode.SELF_INTEREST, RewardMode.COORDINATED]
    out = []
    for t in range(3):
        s.begin_interval(np.full((2, 2), 0.1 * t))
        s.merge(acc(2, 2, 1.0, [[1, 2], [3, 4]], [[1, 0], [0, 1]]))
        out += s.snapshot_transition(modes, terminal=(t == 2))
    assert [t.step for t in out] == [0, 1, 2]
    for a, b in zip(out, out[1:]):
        assert np.array_equal(a.g_next, b.g)
        assert np.array_equal(a.d_next, b.d)
    assert out[0].rewards.tolist() == [3.0, 10.0]
    assert out[-1].terminal and not out[-1].d_next.any()
    assert out[-1].g_next[..., 1].sum() == pytest.approx(30.0)
    assert all(abs(t.d.sum() - 1) < 1e-12 for t in out)


def test_double_snapshot_rejected():
    s = make_server()
    s.begin_interval(np.zeros((2, 2)))
    s.snapshot_transition([RewardMode.SELF_INTEREST] * 2, terminal=False)
    with pytest.raises(SnapshotError):
        s.snapshot_transition([RewardMode.SELF_INTEREST] * 2, terminal=False)


def test_episode_reset_keeps_features():
    s = make_server()
    s.begin_interval(np.zeros((2, 2)))
    s.merge(acc(2, 2, 1.0, 1.0, 1))
    s.snapshot_transition([RewardMode.SELF_INTEREST] * 2, terminal=True)
    x = s.x.copy()
    s.begin_episode()
    assert not s.g.any() and np.array_equal(s.x, x)


def test_network_input_layout():
    s = make_server(N=2, L=3)
    s.g[1, 2] = [5.0, 7.0]
    gi = s.g_input()
    # row-major (i, j), (cost, revenue) innermost
    assert gi[2 * (1 * 3 + 2)] == 5.0 and gi[2 * (1 * 3 + 2) + 1] == 7.0
    ai = s.actor_inputs()
    assert ai.shape == (3, s.actor_dim)
    assert np.array_equal(ai[1, -5:], s.x[1])
    assert s.critic_state().shape == (s.critic_state_dim,)


def test_transition_json_round_trip(tmp_path):
    t = TransitionTuple(np.arange(8.0).reshape(2, 2, 2), np.full((2, 2), 0.25), np.zeros((2, 2)),
                        np.array([1.5, np.nan]), np.ones((2, 2, 2)), np.zeros((2, 2)), True, 2, False)
    write_transitions(tmp_path / "t.jsonl", [t, t])
    back = read_transitions(tmp_path / "t.jsonl")
    assert len(back) == 2
    assert np.array_equal(back[0].g, t.g) and back[0].terminal and back[0].step == 2
    assert back[0].rewards[0] == 1.5 and np.isnan(back[0].rewards[1])


def test_batched_inputs_match_single():
    s = StateServer(2, 3, consumer_features(3, [1.0, 2.0, 3.0], [3.0, 2.0, 1.0]),
                    g_scale=np.arange(1.0, 13.0).reshape(2, 3, 2))
    gs = np.random.default_rng(0).uniform(0, 5, (4, 2, 3, 2))
    assert np.array_equal(s.critic_states(gs), np.stack([s.critic_state(g) for g in gs]))
    assert np.array_equal(s.actor_inputs_batch(gs), np.vstack([s.actor_inputs(g) for g in gs]))
