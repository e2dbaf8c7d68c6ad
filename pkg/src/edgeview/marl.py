"""Learning on top of the episode engine.

Four decision algorithms share the episode pipeline:

* proposed -- one actor-critic agent per vehicle, trained on its own
  share of the slot reward (counterfactual difference), with the
  rank-based bandwidth rule at the edge;
* mac      -- same agents, but every agent is trained on the undivided
  system reward;
* c_ddpg   -- a single central agent that outputs every vehicle's raw
  action plus a bandwidth simplex, trained on the system reward;
* random   -- the uniform baseline, no learning.

Actors map observations to raw [0, 1] actions; critics score an
observation together with the actions of every vehicle.  Training is
off-policy from a shared ring replay buffer with per-agent minibatches,
target networks, and soft target updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import policy, simulation
from .core import Scenario
from .nn import AdamState, Mlp, adam_step, soft_update

ALGORITHMS = ("proposed", "mac", "c_ddpg", "random")

#: episode index reserved for evaluation rollouts
EVAL_EPISODE = 0x7FFFFFFF

#: temperature on the central agent's [0, 1] bandwidth head; the softmax
#: sees logits in [0, scale], so one share can dominate another by at
#: most e**scale and the action space stays bounded for the critic
_LOGIT_SCALE = 8.0

# rng substream tags (seed, tag, ...)
_STREAM_INIT = 10
_STREAM_NOISE = 11
_STREAM_RANDOM_POLICY = 12
_STREAM_SAMPLE = 13


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient becomes non-finite."""

    def __init__(self, iteration: int, detail: str, nets: dict[str, Mlp]) -> None:
        super().__init__(f"training diverged at iteration {iteration}: {detail}")
        self.iteration = iteration
        self.nets = nets


@dataclass
class Agent:
    """Actor-critic pair with target copies and their optimizers."""

    actor: Mlp
    critic: Mlp
    target_actor: Mlp
    target_critic: Mlp
    actor_opt: AdamState
    critic_opt: AdamState

    @staticmethod
    def build(
        obs_dim: int,
        action_dim: int,
        critic_in_dim: int,
        hidden_actor: tuple[int, ...],
        hidden_critic: tuple[int, ...],
        lr: float,
        rng: np.random.Generator,
        linear_tail: int = 0,
    ) -> "Agent":
        actor = Mlp((obs_dim, *hidden_actor, action_dim), output="sigmoid",
                    linear_tail=linear_tail, rng=rng)
        critic = Mlp((critic_in_dim, *hidden_critic, 1), output="identity", rng=rng)
        return Agent(
            actor=actor,
            critic=critic,
            target_actor=actor.copy(),
            target_critic=critic.copy(),
            actor_opt=AdamState.for_net(actor, lr),
            critic_opt=AdamState.for_net(critic, lr),
        )

    def nets(self, prefix: str) -> dict[str, Mlp]:
        return {
            f"{prefix}.actor": self.actor,
            f"{prefix}.critic": self.critic,
            f"{prefix}.target_actor": self.target_actor,
            f"{prefix}.target_critic": self.target_critic,
        }


class ReplayBuffer:
    """Fixed-capacity ring of transitions in preallocated float32 arrays."""

    def __init__(self, capacity: int, obs_shape: tuple[int, ...], action_dim: int,
                 reward_dim: int) -> None:
        self.capacity = capacity
        self.obs = np.zeros((capacity, *obs_shape), dtype=np.float32)
        self.actions = np.zeros((capacity, action_dim), dtype=np.float32)
        self.rewards = np.zeros((capacity, reward_dim), dtype=np.float32)
        self.next_obs = np.zeros((capacity, *obs_shape), dtype=np.float32)
        self.size = 0
        self.pos = 0

    def __len__(self) -> int:
        return self.size

    def push(self, obs: np.ndarray, action: np.ndarray, reward: np.ndarray,
             next_obs: np.ndarray) -> None:
        i = self.pos
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, rng: np.random.Generator, m: int) -> np.ndarray:
        """Uniform sample of m distinct stored transitions."""
        if m > self.size:
            raise ValueError(f"cannot sample {m} from {self.size} transitions")
        return rng.choice(self.size, size=m, replace=False, shuffle=False)

    def gather(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (
            self.obs[idx].astype(np.float64),
            self.actions[idx].astype(np.float64),
            self.rewards[idx].astype(np.float64),
            self.next_obs[idx].astype(np.float64),
        )


def select_action(actor: Mlp, obs: np.ndarray, noise_std: float,
                  rng: np.random.Generator | None) -> np.ndarray:
    """Actor output plus exploration noise, squashed entries clamped to [0, 1]."""
    y = actor.forward(obs)
    if noise_std > 0.0 and rng is not None:
        y = y + rng.normal(0.0, noise_std, y.shape)
    k = y.shape[-1] - actor.linear_tail
    y[..., :k] = np.clip(y[..., :k], 0.0, 1.0)
    return y


def exploration_std(training, iteration: int) -> float:
    """Gaussian exploration scale at the given iteration (decayed, floored)."""
    return max(training.noise_floor, training.noise_std * training.noise_decay ** iteration)


def _check_finite(iteration: int, what: str, *arrays: np.ndarray | float,
                  nets: dict[str, Mlp]) -> None:
    for a in arrays:
        value = a if isinstance(a, float) else np.asarray(a)
        if not np.all(np.isfinite(value)):
            raise TrainingDiverged(iteration, f"non-finite {what}", nets)


def critic_update(
    agents: list[Agent],
    s: int,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    gamma: float,
    iteration: int,
    all_nets: dict[str, Mlp],
) -> float:
    """One TD step on agent s's critic; returns the squared-error loss."""
    obs, actions, rewards, next_obs = batch
    m = len(obs)
    next_actions = np.concatenate(
        [agents[j].target_actor.forward(next_obs[:, j, :]) for j in range(len(agents))],
        axis=1,
    )
    agent = agents[s]
    q_next = agent.target_critic.forward(
        np.concatenate([next_obs[:, s, :], next_actions], axis=1)
    )
    eta = rewards[:, s: s + 1] + gamma * q_next
    q, cache = agent.critic.forward_cached(np.concatenate([obs[:, s, :], actions], axis=1))
    resid = q - eta
    loss = float(np.mean(resid ** 2))
    grads, _ = agent.critic.backward(cache, 2.0 * resid / m)
    _check_finite(iteration, "critic loss/gradient", loss, grads, nets=all_nets)
    adam_step(agent.critic_opt, agent.critic.params, grads)
    return loss


def actor_update(
    agents: list[Agent],
    s: int,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    layout: list[tuple[int, int, int]],
    iteration: int,
    all_nets: dict[str, Mlp],
) -> float:
    """One ascent step on agent s's actor along the critic; returns mean Q."""
    obs, actions, _, _ = batch
    m = len(obs)
    obs_s = obs[:, s, :]
    agent = agents[s]
    a_mine, a_cache = agent.actor.forward_cached(obs_s)
    _, off, width = layout[s]
    acts = actions.copy()
    acts[:, off: off + width] = a_mine
    x = np.concatenate([obs_s, acts], axis=1)
    q, c_cache = agent.critic.forward_cached(x)
    _, dx = agent.critic.backward(c_cache, np.full((m, 1), 1.0 / m))
    da = dx[:, obs_s.shape[1] + off: obs_s.shape[1] + off + width]
    grads, _ = agent.actor.backward(a_cache, da)
    _check_finite(iteration, "actor gradient", grads, nets=all_nets)
    adam_step(agent.actor_opt, agent.actor.params, -grads)
    return float(np.mean(q))


def central_critic_update(
    agent: Agent,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    gamma: float,
    iteration: int,
    all_nets: dict[str, Mlp],
) -> float:
    obs, actions, rewards, next_obs = batch
    m = len(obs)
    next_actions = agent.target_actor.forward(next_obs)
    q_next = agent.target_critic.forward(np.concatenate([next_obs, next_actions], axis=1))
    eta = rewards + gamma * q_next
    q, cache = agent.critic.forward_cached(np.concatenate([obs, actions], axis=1))
    resid = q - eta
    loss = float(np.mean(resid ** 2))
    grads, _ = agent.critic.backward(cache, 2.0 * resid / m)
    _check_finite(iteration, "critic loss/gradient", loss, grads, nets=all_nets)
    adam_step(agent.critic_opt, agent.critic.params, grads)
    return loss


def central_actor_update(
    agent: Agent,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    iteration: int,
    all_nets: dict[str, Mlp],
) -> float:
    obs, _, _, _ = batch
    m = len(obs)
    a_mine, a_cache = agent.actor.forward_cached(obs)
    x = np.concatenate([obs, a_mine], axis=1)
    q, c_cache = agent.critic.forward_cached(x)
    _, dx = agent.critic.backward(c_cache, np.full((m, 1), 1.0 / m))
    da = dx[:, obs.shape[1]:]
    grads, _ = agent.actor.backward(a_cache, da)
    _check_finite(iteration, "actor gradient", grads, nets=all_nets)
    adam_step(agent.actor_opt, agent.actor.params, -grads)
    return float(np.mean(q))


def _central_softmax_shares(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def _random_policies(scenario: Scenario, episode: int, seed: int):
    """The uniform baseline: random frequencies, priorities and bandwidth."""
    rng = np.random.default_rng([seed, _STREAM_RANDOM_POLICY, episode])
    widths = {v.id: 2 * len(v.sensible_types) for v in scenario.vehicles}

    def vehicle_policy(vid, obs, t, central_obs):
        n = widths[vid] // 2
        raw = np.empty(widths[vid])
        raw[:n] = rng.uniform(0.0, 1.0, n)
        perm = rng.permutation(n)
        scores = np.empty(n)
        scores[perm] = np.linspace(1.0, 0.0, n)
        raw[n:] = scores
        return raw

    def edge_policy(edge, ranks, covered_ids, central_obs, t):
        return policy.random_bandwidth(edge, covered_ids, rng)

    return vehicle_policy, edge_policy


def _actor_policies(scenario: Scenario, agents: list[Agent], episode: int, seed: int,
                    noise_std: float):
    """Per-vehicle actors plus the rank-based edge rule."""
    idx = {v.id: i for i, v in enumerate(scenario.vehicles)}
    rngs = {
        v.id: np.random.default_rng([seed, _STREAM_NOISE, episode, v.id])
        for v in scenario.vehicles
    } if noise_std > 0.0 else {}

    def vehicle_policy(vid, obs, t, central_obs):
        return select_action(agents[idx[vid]].actor, obs, noise_std, rngs.get(vid))

    return vehicle_policy, simulation.rank_edge_policy(scenario)


def _central_policies(scenario: Scenario, agent: Agent, episode: int, seed: int,
                      noise_std: float):
    """One central actor: sliced per vehicle, softmax tail for bandwidth."""
    layout = simulation.action_layout(scenario)
    offsets = {vid: (off, width) for vid, off, width in layout}
    vidx = {v.id: i for i, v in enumerate(scenario.vehicles)}
    rng = np.random.default_rng([seed, _STREAM_NOISE, episode]) if noise_std > 0.0 else None
    cached: dict[int, np.ndarray] = {}

    def central_action(t: int, central_obs: np.ndarray) -> np.ndarray:
        a = cached.get(t)
        if a is None:
            a = select_action(agent.actor, central_obs, noise_std, rng)
            cached.clear()
            cached[t] = a
        return a

    def vehicle_policy(vid, obs, t, central_obs):
        a = central_action(t, central_obs)
        off, width = offsets[vid]
        return a[off: off + width]

    def edge_policy(edge, ranks, covered_ids, central_obs, t):
        if not covered_ids:
            return policy.EdgeAction(edge_id=edge.id, bandwidth_hz={})
        a = central_action(t, central_obs)
        tail = a[-len(scenario.vehicles):]
        logits = _LOGIT_SCALE * np.array([tail[vidx[vid]] for vid in covered_ids])
        shares = _central_softmax_shares(logits)
        return policy.EdgeAction(
            edge_id=edge.id,
            bandwidth_hz={vid: float(s * edge.bandwidth_hz)
                          for vid, s in zip(covered_ids, shares)},
        )

    return vehicle_policy, edge_policy, cached


@dataclass
class TrainResult:
    """Learning curve plus the trained policies of one run."""

    algo: str
    seed: int
    iterations: int
    curve: np.ndarray  # (iterations, 2 + n_vehicles): iteration, CR, mean DR per vehicle
    agents: list[Agent] = field(default_factory=list)
    central_agent: Agent | None = None

    def checkpoint_nets(self) -> dict[str, Mlp]:
        nets: dict[str, Mlp] = {}
        for i, a in enumerate(self.agents):
            nets.update(a.nets(f"vehicle_{i}"))
        if self.central_agent is not None:
            nets.update(self.central_agent.nets("central"))
        return nets


def _build_agents(scenario: Scenario, algo: str, seed: int) -> tuple[list[Agent], Agent | None]:
    tr = scenario.training
    obs_dim = simulation.observation_dim(scenario)
    layout = simulation.action_layout(scenario)
    total_act = sum(w for _, _, w in layout)
    if algo in ("proposed", "mac"):
        agents = []
        for i, v in enumerate(scenario.vehicles):
            rng = np.random.default_rng([seed, _STREAM_INIT, i])
            agents.append(
                Agent.build(
                    obs_dim=obs_dim,
                    action_dim=2 * len(v.sensible_types),
                    critic_in_dim=obs_dim + total_act,
                    hidden_actor=tr.actor_hidden,
                    hidden_critic=tr.critic_hidden,
                    lr=tr.learning_rate,
                    rng=rng,
                )
            )
        return agents, None
    if algo == "c_ddpg":
        if len(scenario.edges) != 1:
            raise ValueError("the central learner supports single-edge scenarios only")
        cdim = simulation.central_observation_dim(scenario)
        s_n = len(scenario.vehicles)
        rng = np.random.default_rng([seed, _STREAM_INIT, 0])
        central = Agent.build(
            obs_dim=cdim,
            action_dim=total_act + s_n,
            critic_in_dim=cdim + total_act + s_n,
            hidden_actor=tr.actor_hidden,
            hidden_critic=tr.critic_hidden,
            lr=tr.learning_rate,
            rng=rng,
        )
        return [], central
    if algo == "random":
        return [], None
    raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")


def _episode_policies(scenario: Scenario, algo: str, agents: list[Agent],
                      central: Agent | None, episode: int, seed: int, noise_std: float):
    if algo == "random":
        vp, ep = _random_policies(scenario, episode, seed)
        return vp, ep, None
    if algo == "c_ddpg":
        vp, ep, cache = _central_policies(scenario, central, episode, seed, noise_std)
        return vp, ep, cache
    vp, ep = _actor_policies(scenario, agents, episode, seed, noise_std)
    return vp, ep, None


def run_policy_episode(scenario: Scenario, algo: str, agents: list[Agent],
                       central: Agent | None, episode: int, seed: int,
                       noise_std: float, **episode_kwargs) -> simulation.EpisodeResult:
    """One rollout of the given algorithm's current policies."""
    vp, ep, _ = _episode_policies(scenario, algo, agents, central, episode, seed, noise_std)
    return simulation.run_episode(
        scenario, vp, ep, episode,
        need_central=(algo == "c_ddpg"), **episode_kwargs,
    )


def train(
    scenario: Scenario,
    algo: str,
    iterations: int,
    seed: int | None = None,
    progress=None,
) -> TrainResult:
    """Run ``iterations`` episodes, learning after each one.

    Episode rollouts depend only on (scenario, seed, episode index,
    action stream); learning state never feeds back into the
    environment's random tables.  Raises TrainingDiverged on a
    non-finite loss or gradient.
    """
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")
    if seed is None:
        seed = scenario.seed
    tr = scenario.training
    s_n = len(scenario.vehicles)
    layout = simulation.action_layout(scenario)
    total_act = sum(w for _, _, w in layout)
    obs_dim = simulation.observation_dim(scenario)

    agents, central = _build_agents(scenario, algo, seed)
    all_nets: dict[str, Mlp] = {}
    for i, a in enumerate(agents):
        all_nets.update(a.nets(f"vehicle_{i}"))
    if central is not None:
        all_nets.update(central.nets("central"))

    buffer: ReplayBuffer | None = None
    if algo in ("proposed", "mac"):
        buffer = ReplayBuffer(tr.buffer_capacity, (s_n, obs_dim), total_act, s_n)
    elif algo == "c_ddpg":
        cdim = simulation.central_observation_dim(scenario)
        buffer = ReplayBuffer(tr.buffer_capacity, (cdim,), total_act + s_n, 1)

    sample_rng = np.random.default_rng([seed, _STREAM_SAMPLE])
    curve = np.zeros((iterations, 2 + s_n))

    for it in range(iterations):
        noise_std = exploration_std(tr, it)
        vp, ep, central_cache = _episode_policies(
            scenario, algo, agents, central, it, seed, noise_std
        )
        central_actions: list[np.ndarray] = []
        if algo == "c_ddpg":
            inner_vp = vp

            def vp(vid, obs, t, cobs):
                raw = inner_vp(vid, obs, t, cobs)
                if len(central_actions) < t:
                    central_actions.append(central_cache[t])
                return raw

        result = simulation.run_episode(
            scenario, vp, ep, it, need_central=(algo == "c_ddpg")
        )

        if buffer is not None:
            if algo == "proposed":
                rewards = result.diff_rewards
            elif algo == "mac":
                rewards = np.repeat(
                    np.array(result.slot_rewards)[:, None], s_n, axis=1
                )
            else:
                rewards = np.array(result.slot_rewards)[:, None]
            for t0 in range(scenario.horizon):
                if algo == "c_ddpg":
                    buffer.push(
                        result.central_obs[t0],
                        central_actions[t0],
                        rewards[t0],
                        result.central_obs[t0 + 1],
                    )
                else:
                    buffer.push(
                        result.vehicle_obs[t0],
                        result.raw_actions[t0],
                        rewards[t0],
                        result.vehicle_obs[t0 + 1],
                    )

            if len(buffer) >= tr.batch_size:
                if algo == "c_ddpg":
                    batch = buffer.gather(buffer.sample_indices(sample_rng, tr.batch_size))
                    central_critic_update(central, batch, tr.gamma, it, all_nets)
                    central_actor_update(central, batch, it, all_nets)
                    soft_update(central.target_critic, central.critic, tr.target_rate)
                    soft_update(central.target_actor, central.actor, tr.target_rate)
                else:
                    for s in range(s_n):
                        batch = buffer.gather(
                            buffer.sample_indices(sample_rng, tr.batch_size)
                        )
                        critic_update(agents, s, batch, tr.gamma, it, all_nets)
                        actor_update(agents, s, batch, layout, it, all_nets)
                        soft_update(agents[s].target_critic, agents[s].critic, tr.target_rate)
                        soft_update(agents[s].target_actor, agents[s].actor, tr.target_rate)

        curve[it, 0] = it
        curve[it, 1] = result.cumulative_reward
        curve[it, 2:] = result.diff_rewards.mean(axis=0)
        if progress is not None:
            progress(it, curve[it])

    return TrainResult(
        algo=algo,
        seed=seed,
        iterations=iterations,
        curve=curve,
        agents=agents,
        central_agent=central,
    )


def evaluate(scenario: Scenario, trained: TrainResult,
             episode: int = EVAL_EPISODE) -> simulation.EpisodeResult:
    """Noise-free rollout of a trained policy on a fresh episode stream."""
    return run_policy_episode(
        scenario, trained.algo, trained.agents, trained.central_agent,
        episode, trained.seed, noise_std=0.0,
    )
