"""DDPG agent: replay memory, Bellman critic update, policy-gradient actor update."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core
from .env import FeederEnv
from .errors import EmptyBatch, NumericalError, ShapeError
from .nn_core import AdamState, MlpNet

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ACTOR_FINAL_INIT = 3e-3


@dataclass(frozen=True)
class Experience:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray


@dataclass(frozen=True)
class DdpgConfig:
    hidden: tuple[int, ...] = (256, 256)
    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    capacity: int = 200_000
    noise_start: float = 0.2
    noise_end: float = 0.05


class ReplayBuffer:
    """Fixed-capacity ring of transitions; overwrites the oldest when full."""

    def __init__(self, capacity: int, n_obs: int, n_act: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, n_obs))
        self.actions = np.zeros((capacity, n_act))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, n_obs))
        self.size = 0
        self._head = 0

    def __len__(self):
        return self.size

    def push(self, state, action, reward, next_state):
        state, next_state = np.asarray(state, dtype=float), np.asarray(next_state, dtype=float)
        action = np.asarray(action, dtype=float)
        n_obs, n_act = self.states.shape[1], self.actions.shape[1]
        if state.shape != (n_obs,) or next_state.shape != (n_obs,) or action.shape != (n_act,):
            raise ShapeError("transition does not match the buffer's dimensions")
        i = self._head
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise EmptyBatch("cannot sample an empty buffer")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = self.sample_indices(batch_size, rng)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx]


@dataclass
class AgentBundle:
    actor: MlpNet
    critic: MlpNet
    actor_target: MlpNet
    critic_target: MlpNet
    actor_opt: AdamState
    critic_opt: AdamState
    gamma: float = 0.99
    tau: float = 0.005
    noise_sigma: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.actor_target.layer_sizes != self.actor.layer_sizes or self.critic_target.layer_sizes != self.critic.layer_sizes:
            raise ShapeError("target networks must mirror the online networks")

    @property
    def n_obs(self) -> int:
        return self.actor.layer_sizes[0]

    @property
    def n_act(self) -> int:
        return self.actor.layer_sizes[-1]


def make_agent(n_obs: int, n_act: int, rng: np.random.Generator, cfg: DdpgConfig = DdpgConfig()) -> AgentBundle:
    actor = nn_core.init_mlp((n_obs, *cfg.hidden, n_act), rng, "tanh", final_scale=ACTOR_FINAL_INIT)
    critic = nn_core.init_mlp((n_obs + n_act, *cfg.hidden, 1), rng, "linear")
    return AgentBundle(
        actor=actor,
        critic=critic,
        actor_target=actor.copy(),
        critic_target=critic.copy(),
        actor_opt=nn_core.adam_init(actor, cfg.lr_actor),
        critic_opt=nn_core.adam_init(critic, cfg.lr_critic),
        gamma=cfg.gamma,
        tau=cfg.tau,
        noise_sigma=cfg.noise_start,
    )


def select_action(agent: AgentBundle, state, explore: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    s = np.asarray(state, dtype=float)
    if s.shape != (agent.n_obs,):
        raise ShapeError(f"expected state of length {agent.n_obs}, got {s.shape}")
    a, _ = nn_core.forward(agent.actor, s)
    if explore:
        if rng is None:
            raise ValueError("exploration needs an rng")
        a = np.clip(a + rng.normal(0.0, agent.noise_sigma, size=a.shape), -1.0, 1.0)
    return a


def _as_arrays(batch):
    if isinstance(batch, tuple) and len(batch) == 4 and isinstance(batch[0], np.ndarray):
        s, a, r, s2 = batch
    else:
        batch = list(batch)
        if not batch:
            raise EmptyBatch("empty batch")
        s = np.array([e.state for e in batch], dtype=float)
        a = np.array([e.action for e in batch], dtype=float)
        r = np.array([e.reward for e in batch], dtype=float)
        s2 = np.array([e.next_state for e in batch], dtype=float)
    if len(r) == 0:
        raise EmptyBatch("empty batch")
    return s, a, r, s2


def critic_update(agent: AgentBundle, batch) -> float:
    """One Adam step on the mean squared Bellman error; returns the pre-step loss."""
    s, a, r, s2 = _as_arrays(batch)
    a2, _ = nn_core.forward(agent.actor_target, s2)
    q2, _ = nn_core.forward(agent.critic_target, np.hstack([s2, a2]))
    y = r + agent.gamma * q2[:, 0]
    q, cache = nn_core.forward(agent.critic, np.hstack([s, a]))
    err = q[:, 0] - y
    loss = float(np.mean(err**2))
    if not np.isfinite(loss):
        raise NumericalError("critic loss is not finite")
    grads = nn_core.backward(agent.critic, cache, (2.0 / len(r)) * err[:, None])
    nn_core.adam_step(agent.critic, grads, agent.critic_opt)
    return loss


def actor_update(agent: AgentBundle, batch) -> float:
    """Ascend mean Q(s, mu(s)) through the frozen critic; returns pre-step mean Q."""
    s = _as_arrays(batch)[0]
    a, a_cache = nn_core.forward(agent.actor, s)
    q, q_cache = nn_core.forward(agent.critic, np.hstack([s, a]))
    mean_q = float(np.mean(q))
    if not np.isfinite(mean_q):
        raise NumericalError("critic value is not finite")
    dq_dx = nn_core.backward(agent.critic, q_cache, np.full_like(q, -1.0 / len(q))).input
    grads = nn_core.backward(agent.actor, a_cache, dq_dx[:, agent.n_obs :])
    nn_core.adam_step(agent.actor, grads, agent.actor_opt)
    return mean_q


def update_targets(agent: AgentBundle) -> None:
    nn_core.soft_update(agent.actor_target, agent.actor, agent.tau)
    nn_core.soft_update(agent.critic_target, agent.critic, agent.tau)


@dataclass
class TrainingLog:
    episode: list[int] = field(default_factory=list)
    episode_return: list[float] = field(default_factory=list)
    critic_loss: list[float] = field(default_factory=list)
    mean_q: list[float] = field(default_factory=list)
    noise_sigma: list[float] = field(default_factory=list)
    # per training step: r_v, r_a, r_f, total
    step_rewards: list[np.ndarray] = field(default_factory=list)

    def to_csv(self) -> str:
        rows = ["episode,return,critic_loss,mean_q,noise_sigma"]
        for row in zip(self.episode, self.episode_return, self.critic_loss, self.mean_q, self.noise_sigma):
            rows.append(",".join(repr(float(x)) if i else str(x) for i, x in enumerate(row)))
        return "\n".join(rows) + "\n"


def train(
    agent: AgentBundle,
    env: FeederEnv,
    episodes: int,
    rng: np.random.Generator,
    train_range: tuple[int, int] | None = None,
    buffer: ReplayBuffer | None = None,
    cfg: DdpgConfig = DdpgConfig(),
    replay_rng: np.random.Generator | None = None,
    checkpoint_on_error: str | Path | None = None,
    callback=None,
) -> TrainingLog:
    """Chronological passes over ``train_range`` with one update per env step.

    Exploration noise decays linearly from ``cfg.noise_start`` to
    ``cfg.noise_end`` over all training steps. ``rng`` drives exploration,
    ``replay_rng`` (defaults to ``rng``) drives minibatch sampling.
    ``callback(episode, log)`` runs after every episode.
    """
    start, stop = train_range if train_range is not None else (0, env.n_steps - 1)
    if not 0 <= start < stop <= env.n_steps - 1:
        raise ValueError(f"invalid training range {start}..{stop}")
    if buffer is None:
        buffer = ReplayBuffer(cfg.capacity, env.n_obs, env.n_act)
    replay_rng = rng if replay_rng is None else replay_rng
    total_steps = max(episodes * (stop - start) - 1, 1)
    out = TrainingLog()
    k = 0
    for ep in range(episodes):
        ep_return, losses, qs = 0.0, [], []
        state = env.build_state(start)
        rewards = np.empty((stop - start, 4))
        for t in range(start, stop):
            agent.noise_sigma = cfg.noise_start + (cfg.noise_end - cfg.noise_start) * min(k / total_steps, 1.0)
            obs = state.observation()
            a = select_action(agent, obs, explore=True, rng=rng)
            res = env.step(t, a)
            rb = res.reward
            rewards[t - start] = (rb.r_v, rb.r_a, rb.r_f, rb.total)
            buffer.push(obs, a, rb.total, res.next_state.observation())
            ep_return += rb.total
            if len(buffer) >= cfg.batch_size:
                batch = buffer.sample(cfg.batch_size, replay_rng)
                try:
                    losses.append(critic_update(agent, batch))
                    qs.append(actor_update(agent, batch))
                except NumericalError:
                    if checkpoint_on_error is not None:
                        save_agent(agent, checkpoint_on_error)
                    raise
                update_targets(agent)
            state = res.next_state
            k += 1
        out.episode.append(ep)
        out.episode_return.append(ep_return)
        out.critic_loss.append(float(np.mean(losses)) if losses else float("nan"))
        out.mean_q.append(float(np.mean(qs)) if qs else float("nan"))
        out.noise_sigma.append(agent.noise_sigma)
        out.step_rewards.append(rewards)
        if callback is not None:
            callback(ep, out)
        log.info("episode %d return %.2f critic_loss %.4g mean_q %.4g", ep, ep_return, out.critic_loss[-1], out.mean_q[-1])
    return out


@dataclass
class EvalTrace:
    t: np.ndarray
    v_mag: np.ndarray  # (T, buses), post-control
    converged: np.ndarray
    actions: np.ndarray  # (T, m)
    p_avail: np.ndarray  # (T, m), W
    q_cmd: np.ndarray  # var
    p_out: np.ndarray  # W
    curtail: np.ndarray  # W
    r_v: np.ndarray
    r_a: np.ndarray
    r_f: np.ndarray
    total: np.ndarray
    weights: tuple[float, float, float]
    step_hours: float

    def __len__(self):
        return len(self.t)


def evaluate(agent: AgentBundle | None, env: FeederEnv, eval_range: tuple[int, int]) -> EvalTrace:
    """Deterministic rollout; ``agent=None`` applies zero actions throughout."""
    start, stop = eval_range
    if not 0 <= start < stop <= env.n_steps - 1:
        raise ValueError(f"invalid evaluation range {start}..{stop}")
    n, m, nb = stop - start, env.n_act, len(env.spec.buses)
    base = env.spec.base_power
    tr = EvalTrace(
        t=np.arange(start, stop),
        v_mag=np.empty((n, nb)),
        converged=np.empty(n, dtype=bool),
        actions=np.empty((n, m)),
        p_avail=np.empty((n, m)),
        q_cmd=np.empty((n, m)),
        p_out=np.empty((n, m)),
        curtail=np.empty((n, m)),
        r_v=np.empty(n),
        r_a=np.empty(n),
        r_f=np.empty(n),
        total=np.empty(n),
        weights=(env.weights.alpha, env.weights.beta, env.weights.omega),
        step_hours=env.series.step_hours,
    )
    state = env.build_state(start)
    for i, t in enumerate(range(start, stop)):
        a = np.zeros(m) if agent is None else select_action(agent, state.observation())
        res = env.step(t, a)
        tr.v_mag[i] = res.pf.v_mag
        tr.converged[i] = res.pf.converged
        tr.actions[i] = a
        tr.p_avail[i] = env.series.pv_p_avail[:, t]
        tr.q_cmd[i] = res.q_cmd * base
        tr.p_out[i] = res.p_out * base
        tr.curtail[i] = res.curtail * base
        rb = res.reward
        tr.r_v[i], tr.r_a[i], tr.r_f[i], tr.total[i] = rb.r_v, rb.r_a, rb.r_f, rb.total
        state = res.next_state
    return tr


# -- checkpoints -----------------------------------------------------------


def save_agent(agent: AgentBundle, path) -> None:
    data = {
        "version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
        "hyper": np.array([agent.gamma, agent.tau, agent.noise_sigma]),
    }
    for name in ("actor", "critic", "actor_target", "critic_target"):
        data.update(nn_core.net_to_arrays(getattr(agent, name), name))
    data.update(nn_core.adam_to_arrays(agent.actor_opt, "actor_opt"))
    data.update(nn_core.adam_to_arrays(agent.critic_opt, "critic_opt"))
    with open(path, "wb") as fh:
        np.savez(fh, **data)


def load_agent(path) -> AgentBundle:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        gamma, tau, sigma = (float(x) for x in data["hyper"])
        return AgentBundle(
            actor=nn_core.net_from_arrays(data, "actor"),
            critic=nn_core.net_from_arrays(data, "critic"),
            actor_target=nn_core.net_from_arrays(data, "actor_target"),
            critic_target=nn_core.net_from_arrays(data, "critic_target"),
            actor_opt=nn_core.adam_from_arrays(data, "actor_opt"),
            critic_opt=nn_core.adam_from_arrays(data, "critic_opt"),
            gamma=gamma,
            tau=tau,
            noise_sigma=sigma,
        )
