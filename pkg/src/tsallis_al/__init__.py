"""Tsallis advantage learning: sparse-policy operators, tabular drivers, a numpy DQN and a CLI harness."""

__version__ = "0.1.0"

from .policy import (
    DEFAULT_NORMALIZATION,
    Entropy,
    Normalization,
    RegularizerConfig,
    approx_tsallis_policy,
    exact_tsallis_policy_oracle,
    greedy_policy,
    sparse_value,
    sparsemax_policy,
)
from .operators import FiniteMdp, SchemeConfig, mdqn_sweep, sweep, tal_sweep, tsallis_bellman_sweep
from .tabular import MdpGeneratorConfig, kl_identity_residual, random_mdp, solve
from .envs import CartPole, chain_mdp, gridworld, make_env
