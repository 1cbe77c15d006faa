"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the pytest terminal summary)
before asserting. The CartPole criteria read the harness outputs under
``results/``; missing cells are computed first (hours on one CPU).
"""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from tsallis_al.agent import Agent, AgentConfig, LearningCurve, mt_loss, tal_loss, train
from tsallis_al.envs import CartPole, chain_mdp
from tsallis_al.harness import Harness, load_spec, read_csv
from tsallis_al.operators import SchemeConfig, mdqn_sweep, regularized_sweep, soft_bellman_sweep, tal_sweep, tsallis_bellman_sweep
from tsallis_al.policy import RegularizerConfig, action_gap, exact_tsallis_policy_oracle, sparsemax_policy
from tsallis_al.tabular import MdpGeneratorConfig, iterate, kl_greedy_residual, kl_identity_residual, random_mdp, solve

from test_agent import directional_errors

ROOT = Path(__file__).resolve().parents[1]
RESULTS = ROOT / "results"


def mdps(n=20, seed0=0):
    return [random_mdp(MdpGeneratorConfig(n_states=10, n_actions=4, gamma=0.9, seed=seed0 + i)) for i in range(n)]


# 1 ----------------------------------------------------------------------------


def test_criterion_1_sparsemax_matches_oracle():
    rng = np.random.default_rng(1)
    sizes = rng.integers(2, 17, size=1000)
    vecs = [rng.uniform(-5, 5, size=int(n)) for n in sizes]
    t0 = time.perf_counter()
    worst_linf, worst_sum = 0.0, 0.0
    for alpha in (0.03, 1.0):
        cfg = RegularizerConfig(q=2.0, k=0.5, alpha=alpha)
        for n in np.unique(sizes):
            Z = np.stack([v for v in vecs if len(v) == n])
            pi = sparsemax_policy(Z, alpha)[0]
            ref = exact_tsallis_policy_oracle(Z, cfg)
            worst_linf = max(worst_linf, float(np.abs(pi - ref).max()))
            worst_sum = max(worst_sum, float(np.abs(pi.sum(-1) - 1).max()))
    elapsed = time.perf_counter() - t0
    ok = worst_linf < 1e-10 and worst_sum < 1e-12 and elapsed < 1.0
    record(1, ok, f"max Linf {worst_linf:.2e} (<1e-10), max |sum-1| {worst_sum:.2e} (<1e-12), {elapsed:.2f}s (<1s)")
    assert ok


# 2 / 3 ------------------------------------------------------------------------


def kl_residuals(reg, n_sweeps=200, delta=1e-8):
    scheme = SchemeConfig(regularizer=reg, method="mdqn", beta=1.0, munchausen_delta=delta)
    res, greedy = [], []
    c = reg.coefficient
    for m in mdps():
        for Qk, Q1, pk, p1 in iterate(m, scheme, n_sweeps):
            res.append(kl_identity_residual(Qk, Q1, pk, p1, m, c, delta))
            greedy.append(kl_greedy_residual(Qk, pk, p1, c, delta))
    return np.array(res), np.array(greedy)


def test_criterion_2_mdqn_kl_identity_q1():
    t0 = time.perf_counter()
    res, _ = kl_residuals(RegularizerConfig.shannon(1.0))
    elapsed = time.perf_counter() - t0
    ok = res.max() < 1e-8 and elapsed < 10
    record(2, ok, f"max residual {res.max():.2e} over {res.size} sweeps (<1e-8), {elapsed:.2f}s (<10s)")
    assert ok


def test_criterion_3_identity_fails_q2():
    t0 = time.perf_counter()
    res, greedy = kl_residuals(RegularizerConfig(q=2.0, alpha=1.0))
    elapsed = time.perf_counter() - t0
    frac = float(np.mean(res > 1e-3))
    ok = frac >= 0.9 and elapsed < 10
    record(
        3,
        ok,
        f"fraction of sweeps with residual >1e-3: {frac:.3f} (need >=0.9); max residual {res.max():.2e}; "
        f"KL-greedy TV residual >1e-3 on {np.mean(greedy > 1e-3):.3f} of sweeps (max {greedy.max():.3f}); {elapsed:.2f}s",
    )
    assert ok


# 4 ----------------------------------------------------------------------------


def test_criterion_4_reduction_lattice():
    reg1 = RegularizerConfig.shannon(1.0)
    reg2 = RegularizerConfig(q=2.0, alpha=1.0)
    worst_q1, exact_beta0 = 0.0, True
    for m in mdps():
        Q = m.zeros()
        for _ in range(100):
            a, _ = tal_sweep(m, Q, SchemeConfig(regularizer=reg1, beta=0.9))
            b, _ = mdqn_sweep(m, Q, SchemeConfig(regularizer=reg1, method="mdqn", beta=0.9))
            worst_q1 = max(worst_q1, float(np.abs(a - b).max()))
            Q = a
        Q = m.zeros()
        for _ in range(100):
            a, _ = tal_sweep(m, Q, SchemeConfig(regularizer=reg2, beta=0.0))
            exact_beta0 &= bool(np.array_equal(a, tsallis_bellman_sweep(m, Q, reg2)))
            Q = a
    ok = worst_q1 < 1e-8 and exact_beta0
    record(4, ok, f"max |TAL(q=1) - MDQN(q=1)| {worst_q1:.2e} (<1e-8); TAL(beta=0) == Tsallis sweep bitwise: {exact_beta0}")
    assert ok


# 5 ----------------------------------------------------------------------------


def test_criterion_5_action_gap_grows_with_beta():
    t0 = time.perf_counter()
    m = chain_mdp(15, slip=0.1, gamma=0.99)
    reg = RegularizerConfig(q=2.0, alpha=0.03)
    gaps, conv = [], []
    for beta in (0.0, 0.3, 0.6, 0.9):
        res = solve(m, SchemeConfig(regularizer=reg, beta=beta), max_sweeps=100_000, tol=1e-10)
        conv.append(res.converged)
        gaps.append(action_gap(res.q)[~m.terminal])
    gaps = np.array(gaps)
    elapsed = time.perf_counter() - t0
    increasing = bool(np.all(np.diff(gaps, axis=0) > 0))
    ok = increasing and all(conv) and elapsed < 5
    record(
        5,
        ok,
        f"strictly increasing at all {gaps.shape[1]} live states: {increasing}; mean gaps "
        f"{', '.join(f'{g:.4f}' for g in gaps.mean(1))}; converged {all(conv)}; {elapsed:.2f}s (<5s)",
    )
    assert ok


# 6 ----------------------------------------------------------------------------


def test_criterion_6_gradient_fidelity():
    cfg = AgentConfig(q=2.0, learning_starts=128)
    rng = np.random.default_rng(6)
    errs = {}
    agent = Agent.create(4, 2, cfg, seed=6)
    for t in range(cfg.batch_size):
        agent.buffer.add(rng.normal(scale=0.05, size=4), int(rng.integers(2)), 1.0, rng.normal(scale=0.05, size=4), t % 40 == 0)
    batch = agent.buffer.sample(cfg.batch_size, rng)
    for name, fn in (("tal", tal_loss), ("mt", mt_loss)):
        errs[f"{name}@init"] = max(directional_errors(fn, batch, agent.net, agent.target_net, cfg, seed=1))
    # 1000 gradient updates: warm-up plus 4 env steps per update
    box = {}
    train_cfg = AgentConfig(q=2.0, learning_starts=128, total_steps=128 + 3996, log_interval=4124)
    train(CartPole(), train_cfg, seed=6, callback=lambda t, a: box.__setitem__("agent", a))
    trained = box["agent"]
    batch = trained.buffer.sample(cfg.batch_size, rng)
    for name, fn in (("tal", tal_loss), ("mt", mt_loss)):
        errs[f"{name}@{trained.updates}"] = max(directional_errors(fn, batch, trained.net, trained.target_net, cfg, seed=2))
    ok = max(errs.values()) < 1e-4 and trained.updates == 1000
    record(6, ok, "max relative error over 10 probes: " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " (<1e-4)")
    assert ok


# 7 / 8 ------------------------------------------------------------------------


def cartpole_curves(name):
    """``{label: [(seed, max trailing-20 mean, final trailing-20 mean, reached dict)]}`` from harness outputs."""
    spec = load_spec(name)
    h = Harness(spec, out=RESULTS / name, resume=True)
    manifest = h.run()
    assert manifest["complete"], f"{name}: incomplete cells"
    out = {}
    for cell in h.cells:
        _, ep = read_csv(h.cell_path(cell, "_episodes.csv").read_text())
        curve = LearningCurve(episode_steps=list(ep[:, 0]), episode_returns=list(ep[:, 1]))
        r = np.asarray(curve.episode_returns)
        trailing = np.convolve(r, np.ones(20) / 20, mode="valid") if r.size >= 20 else np.array([r.mean()])
        out.setdefault(cell.label, []).append((cell.seed, float(trailing.max()), curve.trailing_mean(20), curve))
    return out


@pytest.mark.slow
def test_criterion_7_cartpole_q2():
    runs = cartpole_curves("fig2-cartpole-q2")
    tal = {s: (mx, fin, c) for s, mx, fin, c in runs["TAL"]}
    mt = {s: mx for s, mx, _, _ in runs["MT-DQN"]}
    ts = {s: fin for s, _, fin, _ in runs["Tsallis-DQN"]}
    n_tal = sum(c.reached(450) for _, _, c in tal.values())
    n_mt = sum(mx < 200 for mx in mt.values())
    n_ord = sum(ts[s] < tal[s][1] for s in tal)
    ok = n_tal >= 3 and n_mt >= 4 and n_ord >= 3
    record(
        7,
        ok,
        f"TAL reached 450 on {n_tal}/5 (>=3); MT-DQN max trailing mean <200 on {n_mt}/5 (>=4) "
        f"[{', '.join(f'{v:.0f}' for v in mt.values())}]; Tsallis-DQN final < TAL final on {n_ord}/5 (>=3) "
        f"[TAL {', '.join(f'{v[1]:.0f}' for v in tal.values())} | Tsallis {', '.join(f'{v:.0f}' for v in ts.values())}]",
    )
    assert ok


@pytest.mark.slow
def test_criterion_8_cartpole_q3():
    runs = cartpole_curves("fig2-cartpole-q3")
    tal = [(mx, c) for _, mx, _, c in runs["TAL"]]
    ts = [mx for _, mx, _, _ in runs["Tsallis-DQN"]]
    n_tal = sum(c.reached(300) for _, c in tal)
    n_ts = sum(mx < 200 for mx in ts)
    ok = n_tal >= 3 and n_ts == len(ts)
    record(
        8,
        ok,
        f"TAL(q=3) reached 300 on {n_tal}/5 (>=3) [max trailing {', '.join(f'{m:.0f}' for m, _ in tal)}]; "
        f"Tsallis-DQN(q=3) max trailing mean <200 on {n_ts}/{len(ts)} (all) [{', '.join(f'{m:.0f}' for m in ts)}]",
    )
    assert ok


# 9 ----------------------------------------------------------------------------


def test_criterion_9_contraction():
    ops = {
        "soft tau=0.5": lambda m, Q: soft_bellman_sweep(m, Q, 0.5),
        "tsallis q=2": lambda m, Q: regularized_sweep(m, Q, RegularizerConfig(q=2.0, alpha=0.5))[0],
        "tsallis q=3 exact": lambda m, Q: regularized_sweep(m, Q, RegularizerConfig(q=3.0, alpha=0.5, policy="exact"))[0],
        "tsallis q=3 approx": lambda m, Q: regularized_sweep(m, Q, RegularizerConfig(q=3.0, alpha=0.5))[0],
    }
    worst = {k: 0.0 for k in ops}
    ms = mdps(10, seed0=100)
    rng = np.random.default_rng(9)
    for i in range(200):
        m = ms[i % 10]
        Q1 = rng.normal(scale=rng.uniform(0.1, 10), size=(10, 4))
        Q2 = Q1 + rng.normal(scale=rng.uniform(0.01, 5), size=(10, 4))
        d = np.abs(Q1 - Q2).max()
        for k, f in ops.items():
            worst[k] = max(worst[k], float(np.abs(f(m, Q1) - f(m, Q2)).max() / d))
    ok = max(worst.values()) <= 0.9 + 1e-10
    record(9, ok, "max contraction ratio (gamma=0.9): " + ", ".join(f"{k} {v:.4f}" for k, v in worst.items()))
    assert ok
