"""Pick the default approximate-normalization offset by comparison to the bisection oracle.

For each offset variant, q and alpha, draws a fixed validation set of action
values and records the mean pre-renormalization residual ``|sum pi - 1|`` and
the mean total-variation distance of the renormalized policy to the exact
policy. The variant with the smaller overall residual wins. Writes
``tests/fixtures/normalization_arbitration.json``.

    python3 scripts/arbitrate_normalization.py [--out PATH] [--n 500]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from tsallis_al.policy import Normalization, RegularizerConfig, approx_tsallis_policy, exact_tsallis_policy_oracle

QS = (1.5, 2.5, 3.0, 4.0)
ALPHAS = (0.03, 1.0)


def pre_mass(q_vals, cfg):
    """Mass of ``[Q/alpha - psi~]_+^(1/(q-1))`` over the support, before renormalization."""
    _, support, psi = approx_tsallis_policy(q_vals, cfg)
    z = np.asarray(q_vals) / cfg.alpha
    base = np.where(support, np.maximum(z - psi[..., None], 0.0), 0.0)
    return (base ** (1.0 / (cfg.q - 1.0))).sum(-1)


def evaluate(n, seed):
    rng = np.random.default_rng(seed)
    rows = []
    for q in QS:
        for alpha in ALPHAS:
            sizes = rng.integers(2, 9, size=n)
            samples = [rng.uniform(-1.0, 1.0, size=int(m)) for m in sizes]
            for variant in Normalization:
                cfg = RegularizerConfig(q=q, alpha=alpha, normalization=variant)
                res, tv = [], []
                for z in samples:
                    res.append(abs(float(pre_mass(z, cfg)) - 1.0))
                    pi = approx_tsallis_policy(z, cfg)[0]
                    tv.append(0.5 * float(np.abs(pi - exact_tsallis_policy_oracle(z, cfg)).sum()))
                rows.append(
                    {"variant": variant.value, "q": q, "alpha": alpha, "residual": float(np.mean(res)), "tv": float(np.mean(tv))}
                )
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests/fixtures/normalization_arbitration.json"))
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args(argv)
    rows = evaluate(args.n, args.seed)
    score = {v.value: float(np.mean([r["residual"] for r in rows if r["variant"] == v.value])) for v in Normalization}
    winner = min(score, key=score.get)
    for r in rows:
        print(f"{r['variant']:9s} q={r['q']:<4} alpha={r['alpha']:<5} residual={r['residual']:.4f} tv={r['tv']:.4f}")
    print("winner:", winner, score)
    payload = {"seed": args.seed, "n_per_cell": args.n, "winner": winner, "mean_residual": score, "cells": rows}
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")


if __name__ == "__main__":
    main()
