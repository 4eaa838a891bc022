"""Bidding agents: DCMAB and the Manual / Bandit / A2C / DDPG baselines.

Every agent controls one merchant cluster i and emits a row ``a_i^q`` of L
actions in [-1, 1], one per consumer cluster. A :class:`Team` holds the N
agents plus the shared replay memory, because the centralised critic of DCMAB
needs every agent's target actor to build its TD target.

Critic extra inputs (joined at the first hidden layer) are ordered
``[a_1^q, ..., a_N^q, d]`` for DCMAB and Bandit and ``[a_i^q, d]`` for DDPG.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from . import nn
from .state import RewardMode, StateServer, TransitionTuple


class Algorithm(str, Enum):
    MANUAL = "manual"
    BANDIT = "bandit"
    A2C = "a2c"
    DDPG = "ddpg"
    DCMAB = "dcmab"


class DivergenceError(FloatingPointError):
    pass


@dataclass
class AgentConfig:
    algorithm: Algorithm = Algorithm.DCMAB
    gamma: float = 1.0
    minibatch_size: int = 32
    replay_capacity: int = 10000
    noise_mode: str = "gaussian"
    noise_sigma: float = 0.2
    noise_decay: float = 0.995
    noise_min: float = 0.0
    ou_theta: float = 0.15
    bid_range: float = 0.9
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    tau: float = 0.01
    actor_hidden: tuple = (300, 300)
    critic_hidden: tuple = (100, 100)
    updates_per_step: int = 1
    bandit_candidates: int = 32
    bandit_epsilon: float = 0.1
    a2c_sigma: float = 0.3
    grad_clip: float = 0.0
    gamma_scaled_loss: bool = False

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        if not 0.0 < self.bid_range < 1.0:
            raise ValueError("bid_range must be in (0, 1)")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.minibatch_size > self.replay_capacity:
            raise ValueError("minibatch_size must not exceed replay_capacity")
        if self.noise_mode not in ("gaussian", "ou"):
            raise ValueError(f"unknown noise mode {self.noise_mode!r}")
        self.actor_hidden = tuple(self.actor_hidden)
        self.critic_hidden = tuple(self.critic_hidden)

    def replace(self, **kw) -> "AgentConfig":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return AgentConfig(**vals)


class ReplayMemory:
    """Capacity-bounded ring buffer with uniform sampling without replacement."""

    def __init__(self, capacity: int, seed=None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.items: List[TransitionTuple] = []
        self.next = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return len(self.items)

    def push(self, item: TransitionTuple):
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self.next] = item
        self.next = (self.next + 1) % self.capacity

    def sample_indices(self, size: int, rng=None) -> np.ndarray:
        rng = self.rng if rng is None else rng
        return rng.choice(len(self.items), size=size, replace=False)

    def sample(self, size: int, rng=None) -> List[TransitionTuple]:
        return [self.items[k] for k in self.sample_indices(size, rng)]


class ExplorationNoise:
    """Gaussian or Ornstein-Uhlenbeck action noise with per-episode decay."""

    def __init__(self, shape, mode="gaussian", sigma=0.2, theta=0.15, decay=0.995,
                 sigma_min=0.0, seed=None):
        self.shape, self.mode = shape, mode
        self.sigma0 = self.sigma = sigma
        self.theta, self.decay, self.sigma_min = theta, decay, sigma_min
        self.rng = np.random.default_rng(seed)
        self.state = np.zeros(shape)

    def sample(self) -> np.ndarray:
        if self.mode == "ou":
            self.state += -self.theta * self.state + self.sigma * self.rng.standard_normal(self.shape)
            return self.state.copy()
        return self.sigma * self.rng.standard_normal(self.shape)

    def end_episode(self):
        self.sigma = max(self.sigma * self.decay, self.sigma_min)
        self.state[...] = 0.0

    def get_state(self) -> dict:
        return {"sigma": self.sigma, "state": self.state.tolist(),
                "rng": self.rng.bit_generator.state}

    def set_state(self, st: dict):
        self.sigma = st["sigma"]
        self.state = np.array(st["state"], dtype=float).reshape(self.shape)
        self.rng.bit_generator.state = st["rng"]


def compute_bid_adjustment(a_ij, bratio, base_bid, bid_range=0.9):
    """``final_bid = base_bid * (1 + clip(a_ij * bratio, -range, range))``."""
    if np.any(np.asarray(base_bid) <= 0):
        raise ValueError("base_bid must be > 0")
    alpha = np.clip(np.multiply(a_ij, bratio), -bid_range, bid_range)
    return np.multiply(base_bid, 1.0 + alpha)


def manual_policy(n_consumer_clusters: int) -> np.ndarray:
    return np.zeros(n_consumer_clusters)


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite {what}; training diverged")
    return x


class Agent:
    """Base class: a non-learning agent that never adjusts bids (the manual baseline)."""

    learns = False
    uses_replay = False

    def __init__(self, index: int, n_agents: int, n_consumer_clusters: int, config: AgentConfig,
                 actor_dim: int, critic_state_dim: int, seed=None, reward_scale: float = 1.0):
        self.index = index
        self.N, self.L = n_agents, n_consumer_clusters
        self.config = config
        self.actor_dim = actor_dim
        self.critic_state_dim = critic_state_dim
        self.seed = seed
        self.reward_scale = reward_scale
        self.rng = np.random.default_rng(seed)

    def act(self, team: "Team", explore: bool) -> np.ndarray:
        return manual_policy(self.L)

    def target_actions(self, actor_inputs: np.ndarray) -> np.ndarray:
        """Target-policy actions for rows of actor inputs; shape ``(rows,)``."""
        return np.zeros(actor_inputs.shape[0])

    def end_episode(self):
        pass

    def networks(self) -> dict:
        return {}

    def optimizers(self) -> dict:
        return {}


class ManualAgent(Agent):
    pass


class ActorCriticAgent(Agent):
    """Deterministic actor + Q critic. ``centralized`` selects DCMAB over DDPG."""

    learns = True
    uses_replay = True

    def __init__(self, *args, centralized: bool = True, **kw):
        super().__init__(*args, **kw)
        cfg = self.config
        self.centralized = centralized
        rng = np.random.default_rng(self.seed)
        self.actor = nn.init_params(nn.chain([self.actor_dim, *cfg.actor_hidden, 1], output="tanh"), rng)
        own = self.N * self.L if centralized else self.L
        self.critic = nn.SplitInputNet.build(self.critic_state_dim, own + self.N * self.L,
                                             cfg.critic_hidden, rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = nn.Optimizer(nn.OptimizerConfig(lr=cfg.actor_lr, grad_clip=cfg.grad_clip))
        self.critic_opt = nn.Optimizer(nn.OptimizerConfig(lr=cfg.critic_lr, grad_clip=cfg.grad_clip))
        self.noise = ExplorationNoise((self.L,), cfg.noise_mode, cfg.noise_sigma, cfg.ou_theta,
                                      cfg.noise_decay, cfg.noise_min, seed=rng.integers(2 ** 32))

    def policy(self, actor_inputs: np.ndarray) -> np.ndarray:
        out, _ = nn.forward(self.actor, actor_inputs)
        return _check_finite(out[:, 0], "actor output")

    def act(self, team, explore):
        a = self.policy(team.server.actor_inputs())
        if explore:
            a = a + self.noise.sample()
        return np.clip(a, -1.0, 1.0)

    def target_actions(self, actor_inputs):
        out, _ = nn.forward(self.actor_target, actor_inputs)
        return out[:, 0]

    def action_slice(self) -> slice:
        if self.centralized:
            return slice(self.index * self.L, (self.index + 1) * self.L)
        return slice(0, self.L)

    def critic_extra(self, actions: np.ndarray, d: np.ndarray) -> np.ndarray:
        """``actions`` is ``(S, N, L)``, ``d`` is ``(S, N, L)``."""
        S = actions.shape[0]
        own = actions.reshape(S, -1) if self.centralized else actions[:, self.index, :]
        return np.hstack([own, d.reshape(S, -1)])

    def end_episode(self):
        self.noise.end_episode()

    def networks(self):
        return {"actor": self.actor, "critic": self.critic,
                "actor_target": self.actor_target, "critic_target": self.critic_target}

    def optimizers(self):
        return {"actor_opt": self.actor_opt, "critic_opt": self.critic_opt}


class BanditAgent(Agent):
    """Contextual bandit: a reward estimator over (state, all actions, d) maximised by sampling."""

    learns = True
    uses_replay = True

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        cfg = self.config
        rng = np.random.default_rng(self.seed)
        self.critic = nn.SplitInputNet.build(self.critic_state_dim, 2 * self.N * self.L,
                                             cfg.critic_hidden, rng)
        self.critic_opt = nn.Optimizer(nn.OptimizerConfig(lr=cfg.critic_lr, grad_clip=cfg.grad_clip))
        self.greedy_candidates = rng.uniform(-1, 1, (cfg.bandit_candidates, self.L))
        self.greedy_candidates[0] = 0.0
        self.centralized = True

    def act(self, team, explore):
        cfg = self.config
        if explore and self.rng.random() < cfg.bandit_epsilon:
            return self.rng.uniform(-1, 1, self.L)
        cands = self.rng.uniform(-1, 1, (cfg.bandit_candidates, self.L)) if explore \
            else self.greedy_candidates
        K = cands.shape[0]
        context = np.array(team.last_actions, dtype=float)
        actions = np.repeat(context[None], K, axis=0)
        actions[:, self.index, :] = cands
        d = np.repeat(team.last_d[None], K, axis=0)
        state = np.repeat(team.server.critic_state()[None], K, axis=0)
        q, _ = self.critic.forward(state, np.hstack([actions.reshape(K, -1), d.reshape(K, -1)]))
        _check_finite(q, "reward estimate")
        return cands[int(np.argmax(q[:, 0]))].copy()

    def networks(self):
        return {"critic": self.critic}

    def optimizers(self):
        return {"critic_opt": self.critic_opt}


class A2CAgent(Agent):
    """On-policy advantage actor-critic; gaussian policy around a tanh mean, state-value critic."""

    learns = True
    uses_replay = False

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        cfg = self.config
        rng = np.random.default_rng(self.seed)
        self.actor = nn.init_params(nn.chain([self.actor_dim, *cfg.actor_hidden, 1], output="tanh"), rng)
        self.value = nn.init_params(nn.chain([self.critic_state_dim, *cfg.critic_hidden, 1]), rng)
        self.actor_opt = nn.Optimizer(nn.OptimizerConfig(lr=cfg.actor_lr, grad_clip=cfg.grad_clip))
        self.critic_opt = nn.Optimizer(nn.OptimizerConfig(lr=cfg.critic_lr, grad_clip=cfg.grad_clip))
        self.sigma = cfg.a2c_sigma

    def policy(self, actor_inputs):
        out, _ = nn.forward(self.actor, actor_inputs)
        return _check_finite(out[:, 0], "actor output")

    def act(self, team, explore):
        mu = self.policy(team.server.actor_inputs())
        if explore:
            mu = mu + self.sigma * self.rng.standard_normal(self.L)
        return np.clip(mu, -1.0, 1.0)

    def target_actions(self, actor_inputs):
        return self.policy(actor_inputs)

    def networks(self):
        return {"actor": self.actor, "value": self.value}

    def optimizers(self):
        return {"actor_opt": self.actor_opt, "critic_opt": self.critic_opt}


AGENT_CLASSES = {
    Algorithm.MANUAL: ManualAgent,
    Algorithm.BANDIT: BanditAgent,
    Algorithm.A2C: A2CAgent,
    Algorithm.DDPG: ActorCriticAgent,
    Algorithm.DCMAB: ActorCriticAgent,
}


def make_agent(index, n_agents, n_consumer_clusters, config: AgentConfig, actor_dim,
               critic_state_dim, seed=None, reward_scale=1.0) -> Agent:
    cls = AGENT_CLASSES[config.algorithm]
    kw = {}
    if cls is ActorCriticAgent:
        kw["centralized"] = config.algorithm is Algorithm.DCMAB
    return cls(index, n_agents, n_consumer_clusters, config, actor_dim, critic_state_dim,
               seed=seed, reward_scale=reward_scale, **kw)


@dataclass
class Batch:
    states: np.ndarray        # (S, Ds)
    next_states: np.ndarray   # (S, Ds)
    actor_in: np.ndarray      # (S*L, Da), rows grouped by tuple
    next_actor_in: np.ndarray
    actions: np.ndarray       # (S, N, L)
    d: np.ndarray             # (S, N, L)
    d_next: np.ndarray
    rewards: np.ndarray       # (S, N)
    terminal: np.ndarray      # (S,)


def make_batch(server: StateServer, tuples: Sequence[TransitionTuple]) -> Batch:
    g = np.stack([t.g for t in tuples])
    g_next = np.stack([t.g_next for t in tuples])
    return Batch(
        states=server.critic_states(g),
        next_states=server.critic_states(g_next),
        actor_in=server.actor_inputs_batch(g),
        next_actor_in=server.actor_inputs_batch(g_next),
        actions=np.stack([t.actions for t in tuples]),
        d=np.stack([t.d for t in tuples]),
        d_next=np.stack([t.d_next for t in tuples]),
        rewards=np.stack([t.rewards for t in tuples]),
        terminal=np.array([t.terminal for t in tuples], dtype=bool),
    )


def td_targets(team: "Team", agent: ActorCriticAgent, batch: Batch) -> np.ndarray:
    """``y = r_i + gamma * Q'_i(s', a_1', ..., a_N', d')``, bootstrap dropped at terminal tuples."""
    S, L = batch.actions.shape[0], agent.L
    r = batch.rewards[:, agent.index] / agent.reward_scale
    gamma = agent.config.gamma
    if gamma == 0.0 or np.all(batch.terminal):
        return r.copy()
    next_actions = np.stack([a.target_actions(batch.next_actor_in).reshape(S, L) for a in team.agents],
                            axis=1)
    q_next, _ = agent.critic_target.forward(batch.next_states, agent.critic_extra(next_actions, batch.d_next))
    return r + gamma * np.where(batch.terminal, 0.0, q_next[:, 0])


def dcmab_critic_update(team: "Team", agent: ActorCriticAgent, batch: Batch) -> float:
    """One optimiser step on the squared TD error; returns the mean loss before the step."""
    y = td_targets(team, agent, batch)
    S = len(y)
    q, cache = agent.critic.forward(batch.states, agent.critic_extra(batch.actions, batch.d))
    q = q[:, 0]
    if agent.config.gamma_scaled_loss:
        gamma = agent.config.gamma
        err = y - gamma * q
        grad_q = -2.0 * gamma * err / S
    else:
        err = y - q
        grad_q = -2.0 * err / S
    grads, _, _ = agent.critic.backward(cache, grad_q[:, None])
    agent.critic_opt.step(agent.critic.arrays(), grads)
    return _check_finite(float(np.mean(err ** 2)), "critic loss")


def actor_gradient(agent: ActorCriticAgent, batch: Batch):
    """Gradient of ``mean_s Q_i(s, ..., a_i = mu_i(s), ..., d)`` w.r.t. the actor parameters.

    Per tuple the contributions of all L consumer clusters are summed; other
    agents' actions stay at their stored values.
    """
    S, L = batch.actions.shape[0], agent.L
    a_out, a_cache = nn.forward(agent.actor, batch.actor_in)
    actions = batch.actions.copy()
    actions[:, agent.index, :] = a_out.reshape(S, L)
    q, c_cache = agent.critic.forward(batch.states, agent.critic_extra(actions, batch.d))
    _, _, g_extra = agent.critic.backward(c_cache, np.full((S, 1), 1.0 / S))
    dq_da = g_extra[:, agent.action_slice()]            # (S, L)
    grads, _ = nn.backward(agent.actor, a_cache, dq_da.reshape(S * L, 1))
    return grads, float(np.mean(q))


def dcmab_actor_update(team: "Team", agent: ActorCriticAgent, batch: Batch) -> float:
    """Ascend the critic through the actor; returns the gradient norm."""
    grads, _ = actor_gradient(agent, batch)
    return agent.actor_opt.step(agent.actor.arrays(), grads, ascend=True)


ddpg_critic_update = dcmab_critic_update
ddpg_actor_update = dcmab_actor_update


def bandit_update(agent: BanditAgent, batch: Batch) -> float:
    """Regress the reward estimator on immediate rewards (``y = r``)."""
    y = batch.rewards[:, agent.index] / agent.reward_scale
    S = len(y)
    extra = np.hstack([batch.actions.reshape(S, -1), batch.d.reshape(S, -1)])
    q, cache = agent.critic.forward(batch.states, extra)
    err = y - q[:, 0]
    grads, _, _ = agent.critic.backward(cache, (-2.0 * err / S)[:, None])
    agent.critic_opt.step(agent.critic.arrays(), grads)
    return float(np.mean(err ** 2))


def a2c_advantage(agent: A2CAgent, batch: Batch) -> np.ndarray:
    r = batch.rewards[:, agent.index] / agent.reward_scale
    v, _ = nn.forward(agent.value, batch.states)
    v_next, _ = nn.forward(agent.value, batch.next_states)
    boot = np.where(batch.terminal, 0.0, v_next[:, 0])
    return r + agent.config.gamma * boot - v[:, 0]


def a2c_update(agent: A2CAgent, batch: Batch) -> float:
    """One on-policy step for critic (TD(0) on V) and actor (advantage-weighted log-prob)."""
    S, L = batch.actions.shape[0], agent.L
    adv = a2c_advantage(agent, batch)
    # critic: fit V(s) to r + gamma V(s'), target held fixed
    v, cache = nn.forward(agent.value, batch.states)
    target = v[:, 0] + adv
    err = target - v[:, 0]
    grads, _ = nn.backward(agent.value, cache, (-2.0 * err / S)[:, None])
    agent.critic_opt.step(agent.value.arrays(), grads)
    # actor: d/dmu log N(a; mu, sigma) = (a - mu) / sigma^2
    mu, a_cache = nn.forward(agent.actor, batch.actor_in)
    a = batch.actions[:, agent.index, :].reshape(S * L)
    g = np.repeat(adv, L) * (a - mu[:, 0]) / agent.sigma ** 2 / S
    grads, _ = nn.backward(agent.actor, a_cache, g[:, None])
    agent.actor_opt.step(agent.actor.arrays(), grads, ascend=True)
    return float(np.mean(err ** 2))


@dataclass
class UpdateStats:
    critic_loss: float = float("nan")
    actor_metric: float = float("nan")


class Team:
    """The N agents of one experiment plus their shared replay memory."""

    def __init__(self, agents: Sequence[Agent], server: StateServer, reward_modes: Sequence[RewardMode],
                 replay_capacity: int = 10000, seed=None):
        self.agents = list(agents)
        self.server = server
        self.modes = [RewardMode(m) for m in reward_modes]
        for a, m in zip(self.agents, self.modes):
            if a.learns and m is RewardMode.NONE:
                raise ValueError(f"learning agent {a.index} has no reward signal")
        self.memory = ReplayMemory(replay_capacity, seed)
        self.onpolicy: List[TransitionTuple] = []
        self.last_actions = np.zeros((server.N, server.L))
        self.last_d = np.zeros((server.N, server.L))
        self.stats = [UpdateStats() for _ in self.agents]

    @property
    def any_learning(self) -> bool:
        return any(a.learns for a in self.agents)

    def begin_episode(self):
        self.last_actions = np.zeros((self.server.N, self.server.L))
        self.last_d = np.zeros((self.server.N, self.server.L))

    def act(self, explore: bool) -> np.ndarray:
        a = np.stack([agent.act(self, explore) for agent in self.agents])
        if np.any(np.abs(a) > 1.0):
            raise AssertionError("action outside [-1, 1]")
        return a

    def observe(self, actions, tuples: Sequence[TransitionTuple]):
        self.last_actions = np.array(actions, dtype=float)
        self.last_d = self.server.last.d.copy()
        if not self.any_learning:
            return
        for t in tuples:
            self.memory.push(t)
        self.onpolicy.extend(tuples)

    def update(self) -> List[UpdateStats]:
        """One round of per-agent updates: critic, actor, target networks."""
        stats = [UpdateStats() for _ in self.agents]
        fresh, self.onpolicy = self.onpolicy, []
        for agent, st in zip(self.agents, stats):
            cfg = agent.config
            if isinstance(agent, A2CAgent):
                if fresh:
                    st.critic_loss = a2c_update(agent, make_batch(self.server, fresh))
                continue
            if not agent.learns or len(self.memory) < cfg.minibatch_size:
                continue
            for _ in range(cfg.updates_per_step):
                batch = make_batch(self.server, self.memory.sample(cfg.minibatch_size))
                if isinstance(agent, BanditAgent):
                    st.critic_loss = bandit_update(agent, batch)
                    continue
                st.critic_loss = dcmab_critic_update(self, agent, batch)
                st.actor_metric = dcmab_actor_update(self, agent, batch)
                nn.soft_update(agent.actor_target.arrays(), agent.actor.arrays(), cfg.tau)
                nn.soft_update(agent.critic_target.arrays(), agent.critic.arrays(), cfg.tau)
        self.stats = stats
        return stats

    def end_episode(self):
        for a in self.agents:
            a.end_episode()

    # --- parameter snapshots and checkpoints ---
    def get_params(self) -> list:
        return [{k: [x.copy() for x in net.arrays()] for k, net in a.networks().items()}
                for a in self.agents]

    def set_params(self, snapshot: list):
        for a, snap in zip(self.agents, snapshot):
            for k, net in a.networks().items():
                nn.copy_into(net.arrays(), snap[k])

    def save(self, directory):
        import json
        os.makedirs(directory, exist_ok=True)
        for a in self.agents:
            sub = os.path.join(directory, f"agent_{a.index}")
            os.makedirs(sub, exist_ok=True)
            for name, net in a.networks().items():
                nn.save_arrays(os.path.join(sub, f"{name}.bin"), net.arrays(),
                               {"algorithm": a.config.algorithm.value, "seed": a.seed, "net": name})
            for name, opt in a.optimizers().items():
                if opt.m:
                    nn.save_arrays(os.path.join(sub, f"{name}.bin"), opt.m + opt.v, {"t": opt.t})
            if isinstance(a, ActorCriticAgent):
                with open(os.path.join(sub, "noise.json"), "w") as fh:
                    json.dump(a.noise.get_state(), fh)

    def load(self, directory):
        import json
        for a in self.agents:
            sub = os.path.join(directory, f"agent_{a.index}")
            for name, net in a.networks().items():
                _, arrays = nn.load_arrays(os.path.join(sub, f"{name}.bin"))
                nn.copy_into(net.arrays(), arrays)
            for name, opt in a.optimizers().items():
                path = os.path.join(sub, f"{name}.bin")
                if os.path.exists(path):
                    header, arrays = nn.load_arrays(path)
                    half = len(arrays) // 2
                    opt.m, opt.v, opt.t = arrays[:half], arrays[half:], header["t"]
            noise_path = os.path.join(sub, "noise.json")
            if isinstance(a, ActorCriticAgent) and os.path.exists(noise_path):
                with open(noise_path) as fh:
                    a.noise.set_state(json.load(fh))
