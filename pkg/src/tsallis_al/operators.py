"""Synchronous regularized Bellman sweeps on finite MDPs.

All sweeps map an ``|S| x |A|`` table to a new table (and, where relevant, the
greedy policy used for the backup). Nothing is mutated in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .policy import (
    Entropy,
    RegularizerConfig,
    greedy_policy,
    log_policy,
    softmax_policy,
    tsallis_entropy,
)


@dataclass(frozen=True)
class FiniteMdp:
    """Transition kernel ``P[s, a, s']``, expected reward ``r[s, a]`` and discount.

    ``terminal`` marks absorbing states; it only matters for environments that
    sample episodes from the MDP, the kernel itself already encodes absorption.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    terminal: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or r.shape != P.shape[:2]:
            raise ValueError(f"inconsistent shapes P{P.shape}, r{r.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(-1) - 1.0) > 1e-12):
            raise ValueError("each P[s, a] must be a probability vector")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        term = np.zeros(P.shape[0], bool) if self.terminal is None else np.asarray(self.terminal, bool)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "terminal", term)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def expect(self, v: np.ndarray) -> np.ndarray:
        """``(P v)[s, a] = sum_s' P[s, a, s'] v[s']``."""
        return self.transition @ v

    def zeros(self) -> np.ndarray:
        return np.zeros((self.n_states, self.n_actions))

    def uniform_policy(self) -> np.ndarray:
        return np.full((self.n_states, self.n_actions), 1.0 / self.n_actions)


@dataclass(frozen=True)
class SchemeConfig:
    """One iteration scheme: which recursion, its regularizer and coefficients.

    ``method`` is ``"tal"``, ``"mdqn"`` or ``"cvi"``. TAL with ``beta=0`` is
    plain regularized value iteration for the configured entropy. ``sigma`` is
    the KL coefficient and only used by CVI, whose advantage coefficient is
    ``sigma/(sigma+tau)`` regardless of ``beta``. ``cvi_value`` selects how
    CVI forms its state values: ``"boltzmann"`` uses ``<pi, Psi>``,
    ``"logsumexp"`` the exact soft value at temperature ``sigma+tau``.
    """

    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    method: str = "tal"
    beta: float = 0.9
    sigma: float = 0.0
    munchausen_delta: float = 1e-8
    cvi_value: str = "boltzmann"

    def __post_init__(self):
        if self.method not in ("tal", "mdqn", "cvi"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.munchausen_delta > 0:
            raise ValueError("munchausen_delta must be > 0")
        if self.cvi_value not in ("boltzmann", "logsumexp"):
            raise ValueError(f"unknown cvi_value {self.cvi_value!r}")
        if self.method == "mdqn" and self.regularizer.mode is Entropy.HARDMAX:
            raise ValueError("Munchausen recursion needs a stochastic policy (q < inf)")
        if self.method == "cvi" and self.regularizer.mode is not Entropy.SHANNON:
            raise ValueError("CVI is defined for the Shannon route only (q=1)")
        if self.method == "cvi" and self.sigma + self.regularizer.tau <= 0:
            raise ValueError("CVI needs sigma + tau > 0")

    @property
    def cvi_beta(self) -> float:
        return self.sigma / (self.sigma + self.regularizer.tau)


def hard_bellman_sweep(mdp: FiniteMdp, Q: np.ndarray) -> np.ndarray:
    return mdp.reward + mdp.gamma * mdp.expect(Q.max(-1))


def soft_bellman_sweep(mdp: FiniteMdp, Q: np.ndarray, tau: float) -> np.ndarray:
    """``r + gamma P <pi, Q - tau ln pi>`` with ``pi`` Boltzmann in ``Q``.

    The inner product equals the log-sum-exp value, which is what is used.
    """
    _, v = softmax_policy(Q, tau)
    return mdp.reward + mdp.gamma * mdp.expect(v)


def _tsallis_backup(mdp, Q, cfg):
    pi = greedy_policy(Q, cfg)
    v = np.sum(pi * Q, -1) + tsallis_entropy(pi, cfg)
    return mdp.reward + mdp.gamma * mdp.expect(v), pi


def tsallis_bellman_sweep(mdp: FiniteMdp, Q: np.ndarray, cfg: RegularizerConfig) -> np.ndarray:
    """``r + gamma P <pi, Q + alpha k/(q-1) (1 - pi^(q-1))>`` for the Tsallis greedy ``pi``."""
    if cfg.mode is not Entropy.TSALLIS or cfg.q <= 1.0 or not cfg.alpha > 0:
        raise ValueError("Tsallis sweep needs 1 < q < inf and alpha > 0")
    return _tsallis_backup(mdp, Q, cfg)[0]


def regularized_sweep(mdp: FiniteMdp, Q: np.ndarray, cfg: RegularizerConfig):
    """Regularized Bellman sweep for the route ``cfg`` selects, with its greedy policy."""
    if cfg.mode is Entropy.SHANNON:
        pi, v = softmax_policy(Q, cfg.tau)
        return mdp.reward + mdp.gamma * mdp.expect(v), pi
    if cfg.mode is Entropy.HARDMAX:
        pi = greedy_policy(Q, cfg)
        return hard_bellman_sweep(mdp, Q), pi
    if not cfg.alpha > 0 or cfg.q <= 1.0:
        raise ValueError("Tsallis sweep needs q > 1 and alpha > 0")
    return _tsallis_backup(mdp, Q, cfg)


def state_value(Q: np.ndarray, pi: np.ndarray, cfg: RegularizerConfig) -> np.ndarray:
    """Baseline subtracted by the advantage term.

    ``<pi, Q>`` for Tsallis and hard-max routes. On the Shannon route the soft
    value ``tau * lse(Q / tau)`` is used, which makes ``Q - V = tau ln pi`` and
    lets the advantage term coincide with the Munchausen term.
    """
    if cfg.mode is Entropy.SHANNON:
        return softmax_policy(Q, cfg.tau)[1]
    return np.sum(pi * Q, -1)


def tal_sweep(mdp: FiniteMdp, Q: np.ndarray, scheme: SchemeConfig):
    """One Tsallis advantage learning sweep.

    ``pi_{k+1}`` is the regularized greedy policy of ``Q_k`` and
    ``Q_{k+1} = T Q_k + beta (Q_k - V_k)``; returns ``(Q_{k+1}, pi_{k+1})``.
    """
    cfg = scheme.regularizer
    TQ, pi = regularized_sweep(mdp, Q, cfg)
    return TQ + scheme.beta * (Q - state_value(Q, pi, cfg)[:, None]), pi


def mdqn_sweep(mdp: FiniteMdp, Q: np.ndarray, scheme: SchemeConfig):
    """One Munchausen sweep.

    ``Q_{k+1} = r + beta c ln pi_{k+1} + gamma P <pi_{k+1}, Q_k - c ln pi_{k+1}>``
    with ``pi_{k+1}`` the regularized greedy policy of ``Q_k`` (Boltzmann at
    q=1, Tsallis otherwise), ``c`` equal to ``tau`` on the Shannon route and
    ``alpha`` otherwise, and both logarithms floored at ``ln(munchausen_delta)``.
    """
    cfg = scheme.regularizer
    pi = greedy_policy(Q, cfg)
    c = cfg.coefficient
    logp = log_policy(Q, pi, cfg, scheme.munchausen_delta)
    boot = np.sum(pi * (Q - c * logp), -1)
    return mdp.reward + scheme.beta * c * logp + mdp.gamma * mdp.expect(boot), pi


def cvi_sweep(mdp: FiniteMdp, Psi: np.ndarray, scheme: SchemeConfig, pi_prev=None):
    """One sweep of the CVI preference recursion.

    ``pi_{k+1}`` is Boltzmann in ``Psi_k`` at temperature ``sigma + tau`` and
    ``Psi_{k+1} = r + gamma P W'_k + beta (Psi_k - W_k)`` with
    ``beta = sigma/(sigma+tau)``. With ``cvi_value="boltzmann"``,
    ``W'_k = <pi_{k+1}, Psi_k>`` and ``W_k = <pi_k, Psi_k>`` (``pi_prev``,
    uniform if omitted). With ``"logsumexp"`` both are the soft value of
    ``Psi_k``, which makes the recursion identical to the Munchausen one.
    """
    cfg = scheme.regularizer
    temp = scheme.sigma + cfg.tau
    pi, lse = softmax_policy(Psi, temp)
    if scheme.cvi_value == "logsumexp":
        boot = base = lse
    else:
        prev = mdp.uniform_policy() if pi_prev is None else np.asarray(pi_prev, float)
        boot = np.sum(pi * Psi, -1)
        base = np.sum(prev * Psi, -1)
    new = mdp.reward + mdp.gamma * mdp.expect(boot) + scheme.cvi_beta * (Psi - base[:, None])
    return new, pi


def sweep(mdp: FiniteMdp, Q: np.ndarray, scheme: SchemeConfig, pi_prev=None):
    """Dispatch one sweep of ``scheme.method``; returns ``(table, policy)``."""
    if scheme.method == "tal":
        return tal_sweep(mdp, Q, scheme)
    if scheme.method == "mdqn":
        return mdqn_sweep(mdp, Q, scheme)
    return cvi_sweep(mdp, Q, scheme, pi_prev)


def floored_log(pi, delta: float) -> np.ndarray:
    return np.log(np.maximum(pi, delta))


def floored_kl(p, p_ref, delta: float) -> np.ndarray:
    """``KL(p || p_ref)`` after flooring both distributions at ``delta`` and renormalizing.

    Finite for sparse policies; the floor is the one used for the Munchausen ``ln pi``.
    """
    p = np.maximum(p, delta)
    p = p / p.sum(-1, keepdims=True)
    p_ref = np.maximum(p_ref, delta)
    p_ref = p_ref / p_ref.sum(-1, keepdims=True)
    return np.sum(p * (np.log(p) - np.log(p_ref)), -1)


__all__ = [
    "FiniteMdp",
    "SchemeConfig",
    "cvi_sweep",
    "floored_kl",
    "floored_log",
    "hard_bellman_sweep",
    "mdqn_sweep",
    "regularized_sweep",
    "soft_bellman_sweep",
    "state_value",
    "sweep",
    "tal_sweep",
    "tsallis_bellman_sweep",
]
