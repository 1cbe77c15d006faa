import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tsallis_al.policy import (
    DEFAULT_NORMALIZATION,
    Entropy,
    Normalization,
    RegularizerConfig,
    action_gap,
    approx_tsallis_policy,
    exact_tsallis_policy_oracle,
    greedy_policy,
    hardmax_policy,
    log_policy,
    normalization_offset,
    shannon_entropy,
    softmax_policy,
    sparse_value,
    sparsemax_policy,
    tsallis_entropy,
)

from oracles import simplex_grid_max, sparsemax_bruteforce, tsallis_root_scalar

FIXTURES = Path(__file__).parent / "fixtures"


def vectors(min_size=1, max_size=32, bound=1e6):
    return st.integers(min_size, max_size).flatmap(
        lambda n: arrays(np.float64, n, elements=st.floats(-bound, bound, allow_nan=False, allow_infinity=False))
    )


def assert_simplex(pi, tol=1e-9):
    assert np.all(pi >= 0)
    assert np.all(np.abs(pi.sum(-1) - 1) <= tol)


# --- config -----------------------------------------------------------------


def test_config_routes():
    assert RegularizerConfig(q=1.0).mode is Entropy.SHANNON
    assert RegularizerConfig(q=math.inf).mode is Entropy.HARDMAX
    assert RegularizerConfig(q=3.0).mode is Entropy.TSALLIS
    assert RegularizerConfig.shannon(0.3).coefficient == 0.3
    assert RegularizerConfig.hardmax().coefficient == 0.0


@pytest.mark.parametrize("kw", [{"alpha": -1}, {"tau": -0.1}, {"k": 0}, {"policy": "magic"}, {"q": 1 + 1e-10}, {"q": math.nan}])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        RegularizerConfig(**kw)


def test_normalization_from_string():
    assert RegularizerConfig(normalization="main").normalization is Normalization.MAIN_TEXT


# --- entropies --------------------------------------------------------------


def test_tsallis_entropy_examples():
    cfg = RegularizerConfig(q=2.0, k=0.5, alpha=1.0)
    assert tsallis_entropy([0.5, 0.5], cfg) == pytest.approx(0.25, abs=1e-15)
    for q in (1.5, 2.0, 3.0, 7.0):
        assert tsallis_entropy([0.0, 1.0, 0.0], RegularizerConfig(q=q)) == pytest.approx(0.0, abs=1e-15)
    # 2 * 0.5/2 * (1 - 0.343 - 0.027), exact decimal arithmetic
    assert tsallis_entropy([0.7, 0.3], RegularizerConfig(q=3.0, k=0.5, alpha=2.0)) == pytest.approx(0.315, abs=1e-14)


def test_tsallis_entropy_limit_is_k_shannon():
    pi = np.array([0.1, 0.2, 0.3, 0.4])
    near = tsallis_entropy(pi, RegularizerConfig(q=1 + 1e-6, k=0.5, alpha=1.0))
    assert near == pytest.approx(0.5 * shannon_entropy(pi), abs=1e-4)
    assert tsallis_entropy(pi, RegularizerConfig(q=1.0, k=0.5, alpha=2.0)) == pytest.approx(shannon_entropy(pi))


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8), st.floats(1.1, 6.0))
def test_tsallis_entropy_maximized_by_uniform(w, q):
    pi = np.array(w) / np.sum(w)
    cfg = RegularizerConfig(q=q)
    u = np.full(len(w), 1 / len(w))
    assert 0 <= tsallis_entropy(pi, cfg) <= tsallis_entropy(u, cfg) + 1e-12


def test_invalid_policy_rejected():
    with pytest.raises(ValueError):
        tsallis_entropy([0.6, 0.6], RegularizerConfig())
    with pytest.raises(ValueError):
        tsallis_entropy([1.2, -0.2], RegularizerConfig())


# --- softmax ----------------------------------------------------------------


def test_softmax_examples():
    pi, v = softmax_policy([0.0, 0.0], 1.0)
    np.testing.assert_allclose(pi, [0.5, 0.5])
    assert v == pytest.approx(math.log(2))
    pi, v = softmax_policy([4.0, 4.0, 4.0], 0.7)
    np.testing.assert_allclose(pi, 1 / 3)
    assert v == pytest.approx(4 + 0.7 * math.log(3))
    # 30-digit evaluation of 0.5*ln(e^2+1) and e^2/(e^2+1)
    pi, v = softmax_policy([1.0, 0.0], 0.5)
    assert v == pytest.approx(1.063464005521486248, abs=1e-14)
    assert pi[0] == pytest.approx(0.880797077977882444, abs=1e-14)


def test_softmax_rejects_nonpositive_tau():
    with pytest.raises(ValueError):
        softmax_policy([1.0, 2.0], 0.0)


@given(vectors(1, 16, 1e3), st.floats(-1e3, 1e3), st.floats(0.05, 10))
def test_softmax_shift(z, c, tau):
    p0, v0 = softmax_policy(z, tau)
    p1, v1 = softmax_policy(z + c, tau)
    np.testing.assert_allclose(p1, p0, atol=1e-9)
    assert v1 - v0 == pytest.approx(c, abs=1e-9 * (1 + abs(c) + np.abs(z).max()))


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        softmax_policy([1.0, np.nan], 1.0)
    with pytest.raises(ValueError):
        sparsemax_policy([np.inf, 0.0], 1.0)
    with pytest.raises(ValueError):
        sparsemax_policy([], 1.0)


# --- sparsemax --------------------------------------------------------------


def test_sparsemax_onehot_example():
    pi, support, psi = sparsemax_policy([1.0, 0.0], 1.0)
    np.testing.assert_array_equal(pi, [1.0, 0.0])
    np.testing.assert_array_equal(support, [True, False])
    assert psi == 0.0


def test_sparsemax_uniform_and_single():
    pi, support, _ = sparsemax_policy([2.5] * 4, 0.37)
    np.testing.assert_allclose(pi, 0.25)
    assert support.all()
    pi, _, psi = sparsemax_policy([3.0], 2.0)
    assert pi.tolist() == [1.0] and psi == pytest.approx(0.5)


def test_sparsemax_matches_subset_search():
    rng = np.random.default_rng(11)
    for _ in range(200):
        z = rng.uniform(-3, 3, size=rng.integers(1, 8))
        np.testing.assert_allclose(sparsemax_policy(z, 1.0)[0], sparsemax_bruteforce(z), atol=1e-12)


def test_sparsemax_matches_oracle_8_actions():
    rng = np.random.default_rng(3)
    cfg = RegularizerConfig(q=2.0, k=0.5, alpha=0.5)
    for _ in range(100):
        z = rng.normal(size=8)
        assert np.max(np.abs(sparsemax_policy(z, 0.5)[0] - exact_tsallis_policy_oracle(z, cfg))) < 1e-10


def test_sparsemax_ties_are_deterministic():
    pi, support, _ = sparsemax_policy([1.0, 1.0, -5.0], 1.0)
    np.testing.assert_array_equal(support, [True, True, False])
    np.testing.assert_allclose(pi, [0.5, 0.5, 0.0])


@given(vectors(1, 32), st.floats(1e-3, 1e3))
def test_sparsemax_simplex(z, alpha):
    assert_simplex(sparsemax_policy(z, alpha)[0], 1e-12)


@given(vectors(1, 16, 1e3), st.floats(-1e3, 1e3))
def test_sparsemax_shift_covariant(z, c):
    p0, s0, _ = sparsemax_policy(z, 1.0)
    p1, s1, _ = sparsemax_policy(z + c, 1.0)
    np.testing.assert_allclose(p1, p0, atol=1e-9)


@given(vectors(2, 12, 10.0), st.floats(0.01, 10), st.floats(1.0, 10.0))
def test_sparsemax_support_grows_with_alpha(z, alpha, factor):
    s_small = sparsemax_policy(z, alpha)[1]
    s_big = sparsemax_policy(z, alpha * factor)[1]
    assert np.all(s_big >= s_small)


def test_sparsemax_batched_rows_independent():
    rng = np.random.default_rng(5)
    Z = rng.normal(size=(6, 5))
    pi = sparsemax_policy(Z, 0.4)[0]
    for i in range(6):
        np.testing.assert_array_equal(pi[i], sparsemax_policy(Z[i], 0.4)[0])


# --- sparse value -----------------------------------------------------------


def test_sparse_value_examples():
    assert sparse_value([1.0, 0.0], 1.0) == pytest.approx(1.0)
    n, c, alpha = 5, 0.8, 0.4
    psi = c / alpha - 1 / n
    assert sparse_value([c] * n, alpha) == pytest.approx(0.5 * n * ((c / alpha) ** 2 - psi**2) + 0.5)
    # same number via <pi, Q/alpha> + H2(pi) at uniform pi
    assert sparse_value([c] * n, alpha) == pytest.approx(c / alpha + 0.5 * (1 - 1 / n))


def test_sparse_value_matches_simplex_grid():
    rng = np.random.default_rng(2)
    for _ in range(5):
        z = rng.uniform(-1, 1, size=3)
        v = sparse_value(z, 1.0)
        grid = simplex_grid_max(z)
        assert grid <= v + 1e-12
        assert v - grid < 5e-3
        assert v >= z.max() - 1e-12


@given(vectors(1, 10, 100.0), st.floats(0.01, 10))
def test_sparse_value_is_regularized_max(z, alpha):
    pi = sparsemax_policy(z, alpha)[0]
    direct = pi @ (z / alpha) + 0.5 * (1 - pi @ pi)
    assert sparse_value(z, alpha) == pytest.approx(direct, rel=1e-9, abs=1e-9)


# --- exact oracle -----------------------------------------------------------


def test_oracle_two_action_q3_closed_form():
    # z = (0.5, 0), q=3, k=1/2: psi = -1/48 and pi = (5/6, 1/6)
    pi = exact_tsallis_policy_oracle([0.5, 0.0], RegularizerConfig(q=3.0, alpha=1.0))
    np.testing.assert_allclose(pi, [5 / 6, 1 / 6], atol=1e-12)
    np.testing.assert_allclose(tsallis_root_scalar([0.5, 0.0], 3.0), [5 / 6, 1 / 6], atol=1e-12)


@pytest.mark.parametrize("q", [1.3, 2.5, 3.0, 5.0])
def test_oracle_matches_scalar_bisection(q):
    rng = np.random.default_rng(int(q * 10))
    cfg = RegularizerConfig(q=q, alpha=1.0)
    for _ in range(20):
        z = rng.uniform(-1, 1, size=rng.integers(2, 7))
        np.testing.assert_allclose(exact_tsallis_policy_oracle(z, cfg), tsallis_root_scalar(list(z), q), atol=1e-10)


def test_oracle_large_q_approaches_argmax():
    z = np.array([0.3, 1.0, 0.2, 0.9])
    pi = exact_tsallis_policy_oracle(z, RegularizerConfig(q=64.0, alpha=0.01))
    assert pi.argmax() == 1 and pi[1] > 0.99


@given(vectors(2, 10, 20.0), st.floats(1.05, 8.0), st.floats(0.01, 5.0))
@settings(max_examples=200)
def test_oracle_preserves_argmax(z, q, alpha):
    top2 = np.sort(z)[-2:]
    if top2[1] - top2[0] < 1e-6:
        return
    pi = exact_tsallis_policy_oracle(z, RegularizerConfig(q=q, alpha=alpha))
    assert_simplex(pi, 1e-12)
    assert pi.argmax() == z.argmax()


def test_oracle_rejects_shannon_route():
    with pytest.raises(ValueError):
        exact_tsallis_policy_oracle([1.0, 0.0], RegularizerConfig(q=1.0))


# --- approximate policy -----------------------------------------------------


def test_approx_q2_delegates_to_sparsemax():
    z = np.array([0.2, 0.1, -0.3, 0.15])
    pi, _, _ = approx_tsallis_policy(z, RegularizerConfig(q=2.0, alpha=0.3))
    np.testing.assert_allclose(pi, sparsemax_policy(z, 0.3)[0])


def test_approx_uniform_q_below_two():
    for q in (1.2, 1.5, 1.8):
        pi, support, _ = approx_tsallis_policy([0.4] * 5, RegularizerConfig(q=q, alpha=0.1))
        np.testing.assert_allclose(pi, 0.2)
        assert support.all()


def test_approx_uniform_above_two_collapses_to_first_action():
    # the prefix rule caps the support below (q-1)/(q-2) actions for q > 2
    pi, support, _ = approx_tsallis_policy([0.4] * 5, RegularizerConfig(q=3.0, alpha=0.1))
    np.testing.assert_array_equal(pi, [1, 0, 0, 0, 0])


@pytest.mark.parametrize("q", [1.5, 2.5, 3.0, 4.0])
def test_approx_peaked_is_onehot(q):
    z = np.array([0.0, 10.0, -1.0, 0.5])
    pi, _, _ = approx_tsallis_policy(z, RegularizerConfig(q=q, alpha=0.03))
    np.testing.assert_array_equal(pi, [0, 1, 0, 0])


def test_approx_vs_oracle_tv_is_finite_and_small():
    rng = np.random.default_rng(6)
    cfg = RegularizerConfig(q=3.0, alpha=0.03)
    tvs = []
    for _ in range(200):
        z = rng.uniform(-0.1, 0.1, 6)
        tvs.append(0.5 * np.abs(approx_tsallis_policy(z, cfg)[0] - exact_tsallis_policy_oracle(z, cfg)).sum())
    print(f"q=3 alpha=0.03: mean TV {np.mean(tvs):.4f}, max TV {np.max(tvs):.4f}")
    assert np.all(np.isfinite(tvs)) and np.mean(tvs) < 0.2


@given(vectors(1, 32), st.sampled_from([1.5, 2.5, 3.0, 4.0]), st.sampled_from(list(Normalization)))
def test_approx_simplex(z, q, variant):
    pi, support, _ = approx_tsallis_policy(z, RegularizerConfig(q=q, alpha=0.5, normalization=variant))
    assert_simplex(pi)
    assert support.any()


def test_approx_rejects_q_le_one():
    with pytest.raises(ValueError):
        approx_tsallis_policy([1.0, 0.0], RegularizerConfig(q=1.0))
    with pytest.raises(ValueError):
        approx_tsallis_policy([1.0, 0.0], RegularizerConfig(q=0.5))


def test_offsets():
    assert normalization_offset(3.0, 0.5, Normalization.APPENDIX) == pytest.approx(1.5 - 0.75)
    assert normalization_offset(3.0, 0.5, Normalization.MAIN_TEXT) == pytest.approx(1.5 - 3.0)


def test_default_normalization_matches_fixture():
    fixture = json.loads((FIXTURES / "normalization_arbitration.json").read_text())
    assert DEFAULT_NORMALIZATION.value == fixture["winner"]
    score = fixture["mean_residual"]
    assert score[fixture["winner"]] == min(score.values())


# --- dispatch, logs, gaps ---------------------------------------------------


@given(vectors(1, 32), st.sampled_from([1.0, 1.5, 2.0, 3.0, math.inf]))
def test_greedy_policy_simplex(z, q):
    assert_simplex(greedy_policy(z, RegularizerConfig(q=q, tau=0.5, alpha=0.5)))


def test_greedy_exact_vs_approx_switch():
    z = np.array([0.1, 0.05, 0.0])
    exact = greedy_policy(z, RegularizerConfig(q=3.0, alpha=0.1, policy="exact"))
    np.testing.assert_allclose(exact, exact_tsallis_policy_oracle(z, RegularizerConfig(q=3.0, alpha=0.1)))


def test_hardmax_first_max():
    np.testing.assert_array_equal(hardmax_policy([1.0, 3.0, 3.0]), [0, 1, 0])


def test_log_policy_floor():
    cfg = RegularizerConfig(q=2.0)
    lp = log_policy([1.0, -5.0], np.array([1.0, 0.0]), cfg, 1e-8)
    np.testing.assert_allclose(lp, [0.0, math.log(1e-8)])
    shannon = RegularizerConfig.shannon(1.0)
    z = np.array([0.0, -100.0])
    np.testing.assert_allclose(log_policy(z, softmax_policy(z, 1.0)[0], shannon, 1e-8), [0.0, math.log(1e-8)], atol=1e-12)


def test_action_gap_examples():
    assert action_gap([3.0, 1.0, 2.0]) == 1.0
    assert action_gap([2.0, 2.0]) == 0.0
    with pytest.raises(ValueError):
        action_gap([1.0])


@given(vectors(2, 32))
def test_action_gap_sort_oracle(z):
    s = np.sort(z)
    assert action_gap(z) == s[-1] - s[-2]
