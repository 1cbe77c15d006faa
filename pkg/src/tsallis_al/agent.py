"""TAL-DQN and its Munchausen / plain Tsallis-DQN variants.

The three variants share one network, replay buffer and training loop and
differ only in the regression target built from the target network:

* ``tal``:     ``r + gamma V(s') + beta (Q(s, a) - V(s))``
* ``mt``:      ``r + gamma V(s') + beta c ln pi(a|s)``  (Munchausen, ``ln`` floored)
* ``tsallis``: ``r + gamma V(s')``

``V`` is ``<pi, Q>`` under the regularized greedy policy of the target
network (the soft value on the Shannon route, q=1). The bootstrap is dropped
on terminated transitions, truncation bootstraps as usual.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .mlp import Adam, Mlp
from .operators import state_value
from .policy import RegularizerConfig, action_gap, greedy_policy, log_policy

VARIANTS = ("tal", "mt", "tsallis")
CURVE_COLUMNS = ("step", "episode_return_mean", "action_gap_mean")


@dataclass(frozen=True)
class AgentConfig:
    """Hyperparameters; defaults are the classic-control (CartPole) settings."""

    variant: str = "tal"
    q: float = 2.0
    alpha: float = 0.03
    beta: float = 0.99
    gamma: float = 0.99
    total_steps: int = 500_000
    train_freq: int = 4
    target_update: int = 1000
    buffer_size: int = 50_000
    batch_size: int = 128
    epsilon: float = 0.01
    delta: float = 1e-8
    hidden: tuple[int, ...] = (512, 512)
    lr: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    learning_starts: int = 1000
    policy: str = "approx"
    normalization: str = "appendix"
    log_interval: int = 10_000
    return_window: int = 20
    n_probe: int = 64
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        for name in ("total_steps", "train_freq", "target_update", "buffer_size", "batch_size", "log_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.batch_size > self.buffer_size:
            raise ValueError("batch_size cannot exceed buffer_size")
        if self.variant == "mt" and math.isinf(self.q):
            raise ValueError("Munchausen variant needs a stochastic policy (q < inf)")
        self.regularizer  # validates q / alpha / policy

    @property
    def regularizer(self) -> RegularizerConfig:
        # one coefficient serves as alpha (Tsallis) and tau (Shannon)
        return RegularizerConfig(
            q=self.q, alpha=self.alpha, tau=self.alpha, policy=self.policy, normalization=self.normalization
        )

    def to_dict(self):
        return asdict(self)


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminated: np.ndarray

    def __len__(self):
        return len(self.actions)


class ReplayBuffer:
    """Fixed-capacity ring buffer of ``(s, a, r, s', terminated)`` transitions."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminated = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, terminated):
        i = self._next
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminated[i] = terminated
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng) -> Batch:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.terminated[idx])


def td_targets(batch: Batch, target_net: Mlp, cfg: AgentConfig) -> np.ndarray:
    """Regression targets for ``cfg.variant``, computed from the target network only."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    reg = cfg.regularizer
    n = len(batch)
    both = target_net(np.concatenate([batch.obs, batch.next_obs])).astype(np.float64)
    q_s, q_next = both[:n], both[n:]
    pi_next = greedy_policy(q_next, reg)
    boot = cfg.gamma * np.where(batch.terminated, 0.0, state_value(q_next, pi_next, reg))
    target = batch.rewards + boot
    if cfg.variant == "tsallis" or cfg.beta == 0.0:
        return target
    rows = np.arange(n)
    pi_s = greedy_policy(q_s, reg)
    if cfg.variant == "tal":
        return target + cfg.beta * (q_s[rows, batch.actions] - state_value(q_s, pi_s, reg))
    logp = log_policy(q_s, pi_s, reg, cfg.delta)[rows, batch.actions]
    return target + cfg.beta * reg.coefficient * logp


def _squared_td_loss(batch, net, target_net, cfg):
    target = td_targets(batch, target_net, cfg)
    out, acts = net.forward(batch.obs, cache=True)
    rows = np.arange(len(batch))
    err = out[rows, batch.actions].astype(np.float64) - target
    loss = float(np.mean(err**2))
    dout = np.zeros(out.shape, dtype=np.float64)
    dout[rows, batch.actions] = 2.0 * err / len(batch)
    return loss, net.backward(acts, dout)


def tal_loss(batch: Batch, net: Mlp, target_net: Mlp, cfg: AgentConfig):
    """Mean squared TAL TD error and its gradient w.r.t. ``net`` parameters."""
    if cfg.variant != "tal":
        cfg = _with(cfg, variant="tal")
    return _squared_td_loss(batch, net, target_net, cfg)


def mt_loss(batch: Batch, net: Mlp, target_net: Mlp, cfg: AgentConfig):
    """Mean squared Munchausen-Tsallis TD error and its gradient."""
    if cfg.variant != "mt":
        cfg = _with(cfg, variant="mt")
    return _squared_td_loss(batch, net, target_net, cfg)


def tsallis_loss(batch: Batch, net: Mlp, target_net: Mlp, cfg: AgentConfig):
    if cfg.variant != "tsallis":
        cfg = _with(cfg, variant="tsallis")
    return _squared_td_loss(batch, net, target_net, cfg)


def loss_for(cfg: AgentConfig):
    return {"tal": tal_loss, "mt": mt_loss, "tsallis": tsallis_loss}[cfg.variant]


def _with(cfg, **kw):
    d = cfg.to_dict()
    d.update(kw)
    return AgentConfig(**d)


def act(obs, net: Mlp, cfg: AgentConfig, rng) -> int:
    """Epsilon-uniform mixture with a sample from the regularized greedy policy."""
    n_actions = net.sizes[-1]
    if rng.random() < cfg.epsilon:
        return int(rng.integers(n_actions))
    q = net(obs)[0].astype(np.float64)
    pi = greedy_policy(q, cfg.regularizer)
    return int(min(np.searchsorted(np.cumsum(pi), rng.random(), side="right"), n_actions - 1))


@dataclass
class LearningCurve:
    steps: list[int] = field(default_factory=list)
    return_mean: list[float] = field(default_factory=list)
    gap_mean: list[float] = field(default_factory=list)
    episode_steps: list[int] = field(default_factory=list)
    episode_returns: list[float] = field(default_factory=list)

    def trailing_mean(self, window: int = 20) -> float:
        if not self.episode_returns:
            return float("nan")
        return float(np.mean(self.episode_returns[-window:]))

    def reached(self, threshold: float, window: int = 20) -> bool:
        """Whether the trailing-``window`` episode mean ever reached ``threshold``."""
        r = np.asarray(self.episode_returns, dtype=float)
        if r.size == 0:
            return False
        c = np.concatenate([[0.0], np.cumsum(r)])
        idx = np.arange(1, r.size + 1)
        lo = np.maximum(idx - window, 0)
        means = (c[idx] - c[lo]) / (idx - lo)
        return bool(np.any(means[window - 1 :] >= threshold)) if r.size >= window else False

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for s, r, g in zip(self.steps, self.return_mean, self.gap_mean):
            w.writerow([s, repr(float(r)), repr(float(g))])
        return buf.getvalue()

    def episodes_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("step", "episode_return"))
        for s, r in zip(self.episode_steps, self.episode_returns):
            w.writerow([s, repr(float(r))])
        return buf.getvalue()


@dataclass
class Agent:
    """Mutable training state of one run."""

    net: Mlp
    target_net: Mlp
    optimizer: Adam
    buffer: ReplayBuffer
    rng: np.random.Generator
    updates: int = 0
    target_syncs: int = 0

    @classmethod
    def create(cls, obs_dim, n_actions, cfg: AgentConfig, seed):
        rng = np.random.default_rng(seed)
        net = Mlp((obs_dim, *cfg.hidden, n_actions), rng, dtype=cfg.dtype)
        opt = Adam(net.params, cfg.lr, cfg.adam_betas, cfg.adam_eps)
        return cls(net, net.copy(), opt, ReplayBuffer(cfg.buffer_size, obs_dim), rng)

    def update(self, cfg: AgentConfig) -> float:
        batch = self.buffer.sample(cfg.batch_size, self.rng)
        loss, grads = loss_for(cfg)(batch, self.net, self.target_net, cfg)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss} after {self.updates} updates")
        self.optimizer.step(grads)
        self.updates += 1
        if not math.isfinite(sum(float(p.sum()) for p in self.net.params)):
            raise FloatingPointError(f"non-finite parameters after update {self.updates} (loss {loss})")
        return loss

    def sync_target(self):
        self.target_net.load(self.net)
        self.target_syncs += 1


def train(env, cfg: AgentConfig, seed: int, callback=None) -> LearningCurve:
    """Run ``cfg.total_steps`` environment steps of the configured variant.

    A gradient step on a fresh minibatch happens every ``train_freq`` steps
    once ``learning_starts`` transitions are stored; the target network is
    overwritten every ``target_update`` steps. Every ``log_interval`` steps the
    curve records the trailing-``return_window`` episode mean and the mean
    action gap of the online network on ``n_probe`` stored observations drawn
    once when enough transitions exist. ``callback(t, agent)`` is invoked
    after every step if given.
    """
    agent = Agent.create(env.observation_dim, env.n_actions, cfg, seed)
    rng = agent.rng
    curve = LearningCurve()
    probes = None
    obs = env.reset(int(rng.integers(2**31)))
    ep_return = 0.0
    warmup = max(cfg.batch_size, cfg.learning_starts)
    for t in range(1, cfg.total_steps + 1):
        a = act(obs, agent.net, cfg, rng)
        next_obs, r, terminated, truncated = env.step(a)
        agent.buffer.add(obs, a, r, next_obs, terminated)
        ep_return += r
        if terminated or truncated:
            curve.episode_steps.append(t)
            curve.episode_returns.append(ep_return)
            ep_return = 0.0
            obs = env.reset()
        else:
            obs = next_obs
        if probes is None and len(agent.buffer) >= cfg.n_probe:
            probes = agent.buffer.obs[rng.choice(len(agent.buffer), cfg.n_probe, replace=False)].copy()
        if t % cfg.train_freq == 0 and len(agent.buffer) >= warmup:
            agent.update(cfg)
        if t % cfg.target_update == 0:
            agent.sync_target()
        if t % cfg.log_interval == 0:
            curve.steps.append(t)
            curve.return_mean.append(curve.trailing_mean(cfg.return_window))
            gap = float("nan")
            if probes is not None and env.n_actions >= 2:
                gap = float(np.mean(action_gap(agent.net(probes).astype(np.float64))))
            curve.gap_mean.append(gap)
        if callback is not None:
            callback(t, agent)
    return curve
