"""Self-contained environments: a CartPole replica plus tabular chain and grid MDPs.

Episodic environments share a small interface::

    obs = env.reset(seed)
    obs, reward, terminated, truncated = env.step(action)

with ``observation_dim`` and ``n_actions`` attributes. Stepping a finished
episode raises ``RuntimeError``.
"""

from __future__ import annotations

import math

import numpy as np

from .operators import FiniteMdp


class CartPole:
    """Cart-pole balancing with the classic constants and explicit Euler steps.

    Observation is the raw ``(x, x_dot, theta, theta_dot)`` vector. Action 0
    pushes left, 1 pushes right. Reward is 1 for every step taken, the episode
    terminates when ``|theta| > 12 deg`` or ``|x| > 2.4`` and truncates after
    ``max_steps`` steps.
    """

    observation_dim = 4
    n_actions = 2

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5  # half the pole length
    force_mag = 10.0
    dt = 0.02
    theta_limit = 12 * 2 * math.pi / 360
    x_limit = 2.4

    def __init__(self, max_steps: int = 500):
        self.max_steps = max_steps
        self.state = None
        self._steps = 0
        self._done = True
        self._rng = np.random.default_rng()

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.state = self._rng.uniform(-0.05, 0.05, size=4)
        self._steps = 0
        self._done = False
        return self.state.copy()

    def set_state(self, state):
        self.state = np.asarray(state, dtype=float).copy()
        self._steps = 0
        self._done = False

    @classmethod
    def dynamics(cls, state, action):
        """One explicit Euler step of the cart-pole equations of motion."""
        x, x_dot, theta, theta_dot = state
        force = cls.force_mag if action == 1 else -cls.force_mag
        total_mass = cls.masscart + cls.masspole
        polemass_length = cls.masspole * cls.length
        cos, sin = math.cos(theta), math.sin(theta)
        temp = (force + polemass_length * theta_dot**2 * sin) / total_mass
        theta_acc = (cls.gravity * sin - cos * temp) / (
            cls.length * (4.0 / 3.0 - cls.masspole * cos**2 / total_mass)
        )
        x_acc = temp - polemass_length * theta_acc * cos / total_mass
        return np.array(
            [
                x + cls.dt * x_dot,
                x_dot + cls.dt * x_acc,
                theta + cls.dt * theta_dot,
                theta_dot + cls.dt * theta_acc,
            ]
        )

    def step(self, action):
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        if action not in (0, 1):
            raise ValueError(f"invalid action {action!r}")
        self.state = self.dynamics(self.state, action)
        self._steps += 1
        x, _, theta, _ = self.state
        terminated = bool(abs(x) > self.x_limit or abs(theta) > self.theta_limit)
        truncated = bool(not terminated and self._steps >= self.max_steps)
        self._done = terminated or truncated
        return self.state.copy(), 1.0, terminated, truncated


class MdpEnv:
    """Episodes sampled from a ``FiniteMdp`` with one-hot observations.

    Rewards are the expected rewards ``r[s, a]``; episodes terminate on
    reaching a terminal state and truncate after ``max_steps``.
    """

    def __init__(self, mdp: FiniteMdp, start_state: int = 0, max_steps: int = 100):
        self.mdp = mdp
        self.start_state = start_state
        self.max_steps = max_steps
        self.observation_dim = mdp.n_states
        self.n_actions = mdp.n_actions
        self._rng = np.random.default_rng()
        self._done = True
        self.s = start_state

    def _obs(self):
        o = np.zeros(self.observation_dim)
        o[self.s] = 1.0
        return o

    def reset(self, seed=None):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.s = self.start_state
        self._steps = 0
        self._done = False
        return self._obs()

    def step(self, action):
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        r = float(self.mdp.reward[self.s, action])
        self.s = int(self._rng.choice(self.mdp.n_states, p=self.mdp.transition[self.s, action]))
        self._steps += 1
        terminated = bool(self.mdp.terminal[self.s])
        truncated = bool(not terminated and self._steps >= self.max_steps)
        self._done = terminated or truncated
        return self._obs(), r, terminated, truncated


def chain_mdp(n: int, slip: float = 0.0, gamma: float = 0.99) -> FiniteMdp:
    """Chain of ``n`` states, actions left (0) and right (1), goal at the right end.

    The intended move happens with probability ``1 - slip``, the opposite one
    otherwise; moves off the left end stay put. Entering the goal pays 1, the
    goal is absorbing with zero reward, so with ``slip=0`` the start value is
    ``gamma**(n-2)``.
    """
    if n < 2:
        raise ValueError(f"chain needs n >= 2, got {n}")
    if not 0.0 <= slip < 0.5:
        raise ValueError(f"slip must lie in [0, 0.5), got {slip}")
    goal = n - 1
    P = np.zeros((n, 2, n))
    for s in range(goal):
        for a, step in ((0, -1), (1, 1)):
            for move, p in ((step, 1.0 - slip), (-step, slip)):
                P[s, a, min(max(s + move, 0), goal)] += p
    P[goal, :, goal] = 1.0
    r = P[:, :, goal].copy()
    r[goal] = 0.0
    terminal = np.zeros(n, bool)
    terminal[goal] = True
    return FiniteMdp(P, r, gamma, terminal)


GRID_MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))  # up, down, left, right as (dx, dy)


def gridworld(w: int, h: int, goal=None, noise: float = 0.0, gamma: float = 0.99) -> FiniteMdp:
    """``w x h`` grid, state index ``y*w + x``, four moves, walls block.

    With probability ``noise`` one of the three other moves is executed
    instead (uniformly). Entering ``goal`` (default bottom-right ``(w-1, h-1)``)
    pays 1; the goal is absorbing with zero reward.
    """
    if w < 1 or h < 1 or w * h < 2:
        raise ValueError(f"grid needs at least two cells, got {w}x{h}")
    if not 0.0 <= noise < 0.5:
        raise ValueError(f"noise must lie in [0, 0.5), got {noise}")
    gx, gy = (w - 1, h - 1) if goal is None else goal
    if not (0 <= gx < w and 0 <= gy < h):
        raise ValueError(f"goal {goal} outside the grid")
    n = w * h
    g = gy * w + gx
    P = np.zeros((n, 4, n))
    for y in range(h):
        for x in range(w):
            s = y * w + x
            if s == g:
                P[s, :, s] = 1.0
                continue
            for a in range(4):
                for b, (dx, dy) in enumerate(GRID_MOVES):
                    p = 1.0 - noise if b == a else noise / 3.0
                    nx, ny = x + dx, y + dy
                    if not (0 <= nx < w and 0 <= ny < h):
                        nx, ny = x, y
                    P[s, a, ny * w + nx] += p
    r = P[:, :, g].copy()
    r[g] = 0.0
    terminal = np.zeros(n, bool)
    terminal[g] = True
    return FiniteMdp(P, r, gamma, terminal)


def make_env(env_id: str, **params):
    """Episodic environment by id: ``cartpole`` or ``chain-bandit``."""
    if env_id == "cartpole":
        return CartPole(**params)
    if env_id == "chain-bandit":
        n = params.pop("n", 5)
        slip = params.pop("slip", 0.0)
        return MdpEnv(chain_mdp(n, slip), **params)
    raise KeyError(f"unknown environment {env_id!r}")


AGENT_ENVS = ("cartpole", "chain-bandit")
