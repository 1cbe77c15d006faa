"""Entropies, greedy policies and normalization terms for one state's action values.

Every kernel accepts either a single action-value vector or a stack of them;
the last axis always indexes actions. Values are treated in ``Q / alpha``
units wherever a Tsallis coefficient is involved.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

SIMPLEX_TOL = 1e-9


class Entropy(enum.Enum):
    """Which regularizer a configuration routes to."""

    SHANNON = "shannon"
    TSALLIS = "tsallis"
    HARDMAX = "hardmax"


class Normalization(enum.Enum):
    """Constant offset used by the first-order approximate normalization.

    ``APPENDIX`` is ``kq - kq/(q-1)``, the offset obtained by carrying the
    derivation through with a general scale ``k``. ``MAIN_TEXT`` is the
    printed ``q/2 - q/(q-2)`` (generalized as ``kq - 2kq/(q-2)``).
    """

    APPENDIX = "appendix"
    MAIN_TEXT = "main"


# Chosen by scripts/arbitrate_normalization.py; frozen in tests/fixtures.
DEFAULT_NORMALIZATION = Normalization.APPENDIX


@dataclass(frozen=True)
class RegularizerConfig:
    """Entropic index and coefficients of the regularizer.

    ``q=1`` selects the Shannon route (coefficient ``tau``), ``q=inf`` the
    hard-max route. Any other ``q`` is a Tsallis entropy with coefficient
    ``alpha`` and scale ``k``. ``policy`` picks how a Tsallis greedy policy is
    computed when no closed form exists: ``"approx"`` (first-order
    expansion) or ``"exact"`` (bisection on the normalization term).
    """

    q: float = 2.0
    k: float = 0.5
    alpha: float = 1.0
    tau: float = 1.0
    policy: str = "approx"
    normalization: Normalization = DEFAULT_NORMALIZATION

    def __post_init__(self):
        if isinstance(self.normalization, str):
            object.__setattr__(self, "normalization", Normalization(self.normalization))
        if math.isnan(self.q):
            raise ValueError("q must not be NaN")
        if self.alpha < 0 or self.tau < 0:
            raise ValueError(f"alpha and tau must be >= 0, got {self.alpha}, {self.tau}")
        if not self.k > 0:
            raise ValueError(f"k must be > 0, got {self.k}")
        if self.policy not in ("approx", "exact"):
            raise ValueError(f"policy must be 'approx' or 'exact', got {self.policy!r}")
        if self.mode is Entropy.TSALLIS and abs(self.q - 1.0) < 1e-9:
            raise ValueError("q within 1e-9 of 1 must use the Shannon route (q=1 exactly)")

    @property
    def mode(self) -> Entropy:
        if self.q == 1.0:
            return Entropy.SHANNON
        if math.isinf(self.q) and self.q > 0:
            return Entropy.HARDMAX
        return Entropy.TSALLIS

    @property
    def coefficient(self) -> float:
        """Regularization weight of the active route (``tau`` for Shannon)."""
        if self.mode is Entropy.SHANNON:
            return self.tau
        if self.mode is Entropy.HARDMAX:
            return 0.0
        return self.alpha

    @classmethod
    def shannon(cls, tau: float, **kw) -> "RegularizerConfig":
        return cls(q=1.0, tau=tau, **kw)

    @classmethod
    def hardmax(cls, **kw) -> "RegularizerConfig":
        return cls(q=math.inf, **kw)


def _values(q_vals) -> np.ndarray:
    z = np.asarray(q_vals, dtype=float)
    if z.ndim == 0 or z.shape[-1] < 1:
        raise ValueError("action-value input needs at least one action")
    if not np.all(np.isfinite(z)):
        raise ValueError("action values must be finite")
    return z


def _probs(pi) -> np.ndarray:
    p = np.asarray(pi, dtype=float)
    if p.ndim == 0 or p.shape[-1] < 1:
        raise ValueError("policy needs at least one action")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("policy entries must be finite and non-negative")
    if np.any(np.abs(p.sum(-1) - 1.0) > SIMPLEX_TOL):
        raise ValueError("policy entries must sum to 1")
    return p


def _positive(name, x):
    if not x > 0:
        raise ValueError(f"{name} must be > 0, got {x}")


def shannon_entropy(pi) -> np.ndarray:
    p = _probs(pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(-1)


def tsallis_entropy(pi, cfg: RegularizerConfig):
    """Return ``alpha * k/(q-1) * (1 - sum pi^q)``.

    On the Shannon route the limit ``alpha * k * H(pi)`` is returned, which is
    the ``q -> 1`` limit of the formula (half the Shannon entropy at k=1/2).
    The hard-max route carries no entropy and returns 0.
    """
    p = _probs(pi)
    if cfg.mode is Entropy.SHANNON:
        return cfg.alpha * cfg.k * shannon_entropy(p)
    if cfg.mode is Entropy.HARDMAX:
        return np.zeros(p.shape[:-1])
    q = cfg.q
    return cfg.alpha * cfg.k / (q - 1.0) * (1.0 - np.sum(p**q, axis=-1))


def log_sum_exp(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))).squeeze(axis)


def softmax_policy(q_vals, tau: float):
    """Boltzmann policy ``exp((Q - V)/tau)`` and soft value ``V = tau*lse(Q/tau)``."""
    _positive("tau", tau)
    z = _values(q_vals) / tau
    lse = log_sum_exp(z)
    pi = np.exp(z - lse[..., None])
    pi /= pi.sum(-1, keepdims=True)
    return pi, tau * lse


def log_softmax(q_vals, tau: float) -> np.ndarray:
    _positive("tau", tau)
    z = _values(q_vals) / tau
    return z - log_sum_exp(z)[..., None]


def hardmax_policy(q_vals) -> np.ndarray:
    """One-hot on the first maximal action."""
    z = _values(q_vals)
    idx = np.argmax(z, axis=-1)
    return (np.arange(z.shape[-1]) == idx[..., None]).astype(float)


def _descending(z):
    # stable: ties keep ascending action index
    order = np.argsort(-z, axis=-1, kind="stable")
    return order, np.take_along_axis(z, order, axis=-1)


def _prefix_length(cond):
    """Length of the maximal all-true prefix along the last axis."""
    first_false = np.argmin(cond, axis=-1)
    return np.where(cond.all(-1), cond.shape[-1], first_false)


def _unsort(mask_sorted, order):
    out = np.empty_like(mask_sorted)
    np.put_along_axis(out, order, mask_sorted, axis=-1)
    return out


def sparsemax_policy(q_vals, alpha: float):
    """Closed-form q=2 (k=1/2) Tsallis greedy policy.

    Returns ``(pi, support, psi)`` where ``support`` is a boolean mask over
    actions and ``psi`` the normalization term in ``Q/alpha`` units.
    """
    _positive("alpha", alpha)
    z = _values(q_vals) / alpha
    n = z.shape[-1]
    order, zs = _descending(z)
    cs = np.cumsum(zs, axis=-1)
    i = np.arange(1, n + 1)
    K = _prefix_length(1.0 + i * zs > cs)
    psi = (np.take_along_axis(cs, (K - 1)[..., None], axis=-1)[..., 0] - 1.0) / K
    support = _unsort(i <= K[..., None], order)
    pi = np.where(support, np.maximum(z - psi[..., None], 0.0), 0.0)
    pi /= pi.sum(-1, keepdims=True)
    return pi, support, psi


def sparse_value(q_vals, alpha: float):
    """Regularized value of the sparsemax policy, in ``Q/alpha`` units.

    Equals ``max_pi <pi, Q/alpha> + (1 - sum pi^2)/2``; multiply by ``alpha``
    for a value in return units.
    """
    z = _values(q_vals) / alpha
    _, support, psi = sparsemax_policy(q_vals, alpha)
    sq = np.where(support, z**2 - psi[..., None] ** 2, 0.0)
    return 0.5 * sq.sum(-1) + 0.5


def normalization_offset(q: float, k: float, variant: Normalization) -> float:
    if variant is Normalization.APPENDIX:
        return k * q - k * q / (q - 1.0)
    return k * q - 2.0 * k * q / (q - 2.0)


def approx_tsallis_policy(q_vals, cfg: RegularizerConfig):
    """First-order approximate Tsallis greedy policy for q without a closed form.

    The support is the maximal prefix of actions (descending value) with
    ``kq + i*z_(i) > sum_{j<=i} z_(j) + i*c`` where ``c`` is the
    normalization offset; ``psi`` is then ``(sum_S z - kq)/|S| + c`` and the
    policy is ``[z - psi]_+ ** (1/(q-1))``, renormalized. An all-zero result
    falls back to the one-hot argmax. q=2 is delegated to the closed form.

    Returns ``(pi, support, psi_tilde)``.
    """
    if cfg.mode is not Entropy.TSALLIS or cfg.q <= 1.0:
        raise ValueError(f"approximate Tsallis policy needs 1 < q < inf, got q={cfg.q}")
    _positive("alpha", cfg.alpha)
    q, k = cfg.q, cfg.k
    if q == 2.0:
        return sparsemax_policy(q_vals, 2.0 * k * cfg.alpha)
    z = _values(q_vals) / cfg.alpha
    n = z.shape[-1]
    c = normalization_offset(q, k, cfg.normalization)
    order, zs = _descending(z)
    cs = np.cumsum(zs, axis=-1)
    i = np.arange(1, n + 1)
    K = _prefix_length(k * q + i * zs > cs + i * c)
    Ksafe = np.maximum(K, 1)
    psi = (np.take_along_axis(cs, (Ksafe - 1)[..., None], axis=-1)[..., 0] - k * q) / Ksafe + c
    support = _unsort(i <= K[..., None], order)
    base = np.where(support, np.maximum(z - psi[..., None], 0.0), 0.0)
    pi = base ** (1.0 / (q - 1.0))
    total = pi.sum(-1, keepdims=True)
    onehot = hardmax_policy(z)
    dead = total[..., 0] <= 0.0
    pi = np.where(dead[..., None], onehot, pi / np.where(total > 0, total, 1.0))
    support = np.where(dead[..., None], onehot > 0, support)
    return pi, support, psi


def exact_tsallis_policy_oracle(q_vals, cfg: RegularizerConfig, max_iter: int = 400):
    """Tsallis greedy policy with the normalization term solved by bisection.

    Finds ``psi`` with ``sum_a [(z_a - psi)(q-1)/(kq)]_+ ** (1/(q-1)) = 1``.
    The bracket ``[max z - kq/(q-1), max z]`` always contains the root; the
    interval is halved until it stops shrinking in floating point, and the
    result is divided by its sum to remove the last rounding residue.
    """
    if cfg.mode is not Entropy.TSALLIS or cfg.q <= 1.0:
        raise ValueError(f"oracle needs 1 < q < inf, got q={cfg.q}")
    _positive("alpha", cfg.alpha)
    z = _values(q_vals) / cfg.alpha
    q, k = cfg.q, cfg.k
    c = (q - 1.0) / (k * q)
    p = 1.0 / (q - 1.0)

    def mass(psi):
        return np.sum(np.maximum((z - psi[..., None]) * c, 0.0) ** p, axis=-1)

    top = z.max(-1)
    # widened by a few ulps so rounding cannot push the left end inside the root
    lo = top - (1.0 / c) * (1.0 + 1e-12) - 1e-15 * np.abs(top)
    hi = top.copy()
    if np.any(mass(lo) < 1.0) or np.any(mass(hi) > 1.0):
        raise RuntimeError("bisection bracket does not contain the normalization root")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if np.all((mid == lo) | (mid == hi)):
            break
        above = mass(mid) >= 1.0
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    pi = np.maximum((z - lo[..., None]) * c, 0.0) ** p
    return pi / pi.sum(-1, keepdims=True)


def tsallis_greedy(q_vals, cfg: RegularizerConfig) -> np.ndarray:
    """Tsallis greedy policy: closed form at q=2, otherwise per ``cfg.policy``."""
    if cfg.q == 2.0:
        return sparsemax_policy(q_vals, 2.0 * cfg.k * cfg.alpha)[0]
    if cfg.policy == "exact":
        return exact_tsallis_policy_oracle(q_vals, cfg)
    return approx_tsallis_policy(q_vals, cfg)[0]


def greedy_policy(q_vals, cfg: RegularizerConfig) -> np.ndarray:
    """Regularized greedy policy for whichever route ``cfg`` selects."""
    if cfg.mode is Entropy.SHANNON:
        return softmax_policy(q_vals, cfg.tau)[0]
    if cfg.mode is Entropy.HARDMAX:
        return hardmax_policy(q_vals)
    return tsallis_greedy(q_vals, cfg)


def log_policy(q_vals, pi, cfg: RegularizerConfig, delta: float = 1e-8) -> np.ndarray:
    """``ln pi`` floored at ``ln delta``.

    On the Shannon route the log-softmax ``(Q - V)/tau`` is used directly so
    the identity ``tau*ln pi = Q - V`` holds to rounding.
    """
    floor = math.log(delta)
    if cfg.mode is Entropy.SHANNON:
        return np.maximum(log_softmax(q_vals, cfg.tau), floor)
    return np.log(np.maximum(pi, delta))


def action_gap(q_vals) -> np.ndarray:
    """Difference between the largest and second-largest action values."""
    z = _values(q_vals)
    if z.shape[-1] < 2:
        raise ValueError("action gap needs at least two actions")
    top2 = -np.partition(-z, 1, axis=-1)[..., :2]
    return top2[..., 0] - top2[..., 1]
