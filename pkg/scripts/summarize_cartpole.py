"""Per-seed CartPole summary from harness outputs.

    python3 scripts/summarize_cartpole.py results/fig2-cartpole-q2 [more dirs]

For each cell prints the number of episodes, the best and final trailing
20-episode mean return.
"""

import json
import sys
from pathlib import Path

import numpy as np

from tsallis_al.harness import read_csv


def summarize(out: Path):
    manifest = json.loads((out / "manifest.json").read_text())
    print(f"{manifest['name']} (complete: {manifest['complete']})")
    for cell in manifest["cells"]:
        path = out / cell["csv"].replace(".csv", "_episodes.csv")
        if cell["status"] != "complete" or not path.exists():
            print(f"  {cell['label']:<12} seed {cell['seed']}: {cell['status']}")
            continue
        r = read_csv(path.read_text())[1][:, 1]
        trail = np.convolve(r, np.ones(20) / 20, mode="valid") if r.size >= 20 else r[-1:]
        print(f"  {cell['label']:<12} seed {cell['seed']}: {r.size:5d} episodes, best {trail.max():6.1f}, final {trail[-1]:6.1f}")


if __name__ == "__main__":
    for arg in sys.argv[1:] or ["results/fig2-cartpole-q2", "results/fig2-cartpole-q3"]:
        if Path(arg, "manifest.json").exists():
            summarize(Path(arg))
