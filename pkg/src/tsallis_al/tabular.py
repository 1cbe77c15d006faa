"""Fixed-point drivers, per-sweep diagnostics and a random MDP generator."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .operators import FiniteMdp, SchemeConfig, floored_kl, floored_log, sweep
from .policy import Entropy, action_gap, greedy_policy, shannon_entropy, softmax_policy

TRACE_COLUMNS = ("sweep", "residual", "mean_gap", "mean_entropy", "kl_residual")


@dataclass
class IterationTrace:
    residual: list[float] = field(default_factory=list)
    mean_gap: list[float] = field(default_factory=list)
    mean_entropy: list[float] = field(default_factory=list)
    kl_residual: list[float] = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.residual)

    def rows(self):
        for i in range(len(self)):
            yield (i + 1, self.residual[i], self.mean_gap[i], self.mean_entropy[i], self.kl_residual[i])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in self.rows():
            w.writerow([row[0], *(repr(float(x)) for x in row[1:])])
        return buf.getvalue()


@dataclass(frozen=True)
class MdpGeneratorConfig:
    n_states: int = 10
    n_actions: int = 4
    branching: int = 3
    reward_range: tuple[float, float] = (0.0, 1.0)
    gamma: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("need at least one state and one action")
        if not 1 <= self.branching <= self.n_states:
            raise ValueError(f"branching must lie in [1, n_states], got {self.branching}")
        lo, hi = self.reward_range
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ValueError(f"bad reward range {self.reward_range}")


def random_mdp(cfg: MdpGeneratorConfig) -> FiniteMdp:
    """Each ``P[s, a]`` spreads normalized uniform weights over ``branching`` random successors."""
    rng = np.random.default_rng(cfg.seed)
    S, A = cfg.n_states, cfg.n_actions
    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            succ = rng.choice(S, size=cfg.branching, replace=False)
            w = rng.uniform(size=cfg.branching) + 1e-3
            P[s, a, succ] = w / w.sum()
    r = rng.uniform(*cfg.reward_range, size=(S, A))
    return FiniteMdp(P, r, cfg.gamma)


def kl_identity_residual(Q_k, Q_k1, pi_k, pi_k1, mdp: FiniteMdp, tau: float, delta: float = 1e-8) -> float:
    """Sup-norm gap in ``Q'_{k+1} = r + gamma P(<pi_{k+1}, Q'_k> - tau KL(pi_{k+1} || pi_k))``.

    ``Q' = Q - tau ln pi`` with ``ln`` floored at ``ln delta``; the KL floors and
    renormalizes both policies.
    """
    lhs = Q_k1 - tau * floored_log(pi_k1, delta)
    inner = np.sum(pi_k1 * (Q_k - tau * floored_log(pi_k, delta)), -1)
    rhs = mdp.reward + mdp.gamma * mdp.expect(inner - tau * floored_kl(pi_k1, pi_k, delta))
    return float(np.max(np.abs(lhs - rhs)))


def kl_greedy_residual(Q_k, pi_k, pi_k1, coef: float, delta: float = 1e-8) -> float:
    """Largest per-state TV distance between ``pi_{k+1}`` and the KL-greedy policy.

    The KL-greedy step from ``pi_k`` on ``Q'_k = Q_k - coef ln pi_k`` is
    ``pi_k exp(Q'_k / coef)``, normalized. Munchausen iterates at q=1 take
    exactly this step; a nonzero value means the sweep is not an implicit
    KL-regularized update.
    """
    with np.errstate(divide="ignore"):
        logw = np.where(pi_k > 0, np.log(np.where(pi_k > 0, pi_k, 1.0)), -np.inf)
    logw = logw + (Q_k - coef * floored_log(pi_k, delta)) / coef
    logw -= logw.max(-1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(-1, keepdims=True)
    return float(0.5 * np.abs(w - pi_k1).sum(-1).max())


def _mean_gap(Q):
    if Q.shape[-1] < 2:
        return 0.0
    return float(np.mean(action_gap(Q)))


def final_policy(Q, scheme: SchemeConfig) -> np.ndarray:
    if scheme.method == "cvi":
        return softmax_policy(Q, scheme.sigma + scheme.regularizer.tau)[0]
    return greedy_policy(Q, scheme.regularizer)


@dataclass
class SolveResult:
    q: np.ndarray
    policy: np.ndarray
    trace: IterationTrace

    @property
    def converged(self) -> bool:
        return self.trace.converged


def iterate(mdp: FiniteMdp, scheme: SchemeConfig, n_sweeps: int, Q0=None):
    """Yield ``(Q_k, Q_{k+1}, pi_k, pi_{k+1})`` for ``n_sweeps`` sweeps from ``Q0`` (default 0).

    ``pi_0`` is uniform.
    """
    Q = mdp.zeros() if Q0 is None else np.array(Q0, dtype=float)
    pi = mdp.uniform_policy()
    for _ in range(n_sweeps):
        Q1, pi1 = sweep(mdp, Q, scheme, pi)
        yield Q, Q1, pi, pi1
        Q, pi = Q1, pi1


def solve(mdp: FiniteMdp, scheme: SchemeConfig, max_sweeps: int = 100_000, tol: float = 1e-10, Q0=None) -> SolveResult:
    """Run ``scheme`` until the sup-norm change drops below ``tol`` or ``max_sweeps`` is hit.

    Non-convergence is reported through ``trace.converged``, not raised.
    """
    trace = IterationTrace()
    cfg = scheme.regularizer
    kl_coef = cfg.coefficient
    Q = mdp.zeros() if Q0 is None else np.array(Q0, dtype=float)
    for Q_k, Q, pi_k, pi in iterate(mdp, scheme, max_sweeps, Q0):
        res = float(np.max(np.abs(Q - Q_k)))
        if not np.isfinite(res):
            break
        trace.residual.append(res)
        trace.mean_gap.append(_mean_gap(Q))
        trace.mean_entropy.append(float(np.mean(shannon_entropy(pi))))
        if scheme.method == "mdqn" and cfg.mode is not Entropy.HARDMAX:
            kl = kl_identity_residual(Q_k, Q, pi_k, pi, mdp, kl_coef, scheme.munchausen_delta)
        else:
            kl = float("nan")
        trace.kl_residual.append(kl)
        if res < tol:
            trace.converged = True
            break
    return SolveResult(Q, final_policy(Q, scheme), trace)
