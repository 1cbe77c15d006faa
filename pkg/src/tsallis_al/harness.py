"""Declarative experiment specs: parsing, strict validation and execution.

A spec is a YAML mapping::

    name: fig5-actiongap
    kind: figure-repro            # tabular-sweep | agent-run | figure-repro
    runner: tabular               # required for figure-repro, implied otherwise
    env: chain
    env_params: {n: 15, slip: 0.1, gamma: 0.99}
    seeds: [0]
    solver: {max_sweeps: 100000, tol: 1.0e-10}     # tabular only
    schemes:
      - {label: "beta=0", method: tal, q: 2, alpha: 0.03, beta: 0.0}

Every ``(scheme, seed)`` pair is a cell. Cells write their CSVs under
``<out>/cells``; ``aggregate.csv`` holds across-seed mean and std per
scheme, ``<metric>.svg`` the plots and ``manifest.json`` the cell status.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import tempfile
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .agent import AgentConfig, train
from .envs import AGENT_ENVS, chain_mdp, gridworld, make_env
from .operators import SchemeConfig
from .policy import RegularizerConfig, action_gap
from .tabular import MdpGeneratorConfig, random_mdp, solve
from .svg import line_plot

KINDS = ("tabular-sweep", "agent-run", "figure-repro")
RUNNERS = ("tabular", "agent")
TABULAR_ENVS = ("chain", "gridworld", "random-mdp")
TOP_KEYS = {"name", "kind", "runner", "description", "env", "env_params", "seeds", "schemes", "solver", "output", "plot_metrics"}
SOLVER_KEYS = {"max_sweeps", "tol"}
POLICY_NAMES = ("softmax", "sparsemax", "exact-tsallis", "approx-tsallis", "hardmax")
TABULAR_SCHEME_KEYS = {"label", "policy", "q", "k", "alpha", "tau", "normalization", "method", "beta", "sigma", "munchausen_delta", "cvi_value"}
AGENT_SCHEME_KEYS = {"label", "policy"} | {f.name for f in dataclasses.fields(AgentConfig)}
DEFAULT_METRICS = {"agent": ("episode_return_mean", "action_gap_mean"), "tabular": ("mean_gap", "residual")}
X_COLUMN = {"agent": "step", "tabular": "sweep"}


class SpecError(ValueError):
    """Validation failure; ``problems`` lists every issue found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class Cell:
    index: int
    scheme_index: int
    label: str
    seed: int
    cell_seed: int
    config: dict

    @property
    def stem(self) -> str:
        safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in self.label)
        return f"s{self.scheme_index:02d}_{safe}_seed{self.seed}"

    @property
    def config_hash(self) -> str:
        blob = json.dumps({"config": self.config, "seed": self.cell_seed}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ExperimentSpec:
    name: str
    kind: str
    runner: str
    env: str
    env_params: dict
    seeds: list
    schemes: list
    solver: dict = field(default_factory=dict)
    output: str | None = None
    description: str = ""
    plot_metrics: tuple = ()

    def cells(self) -> list[Cell]:
        out = []
        for i, sch in enumerate(self.schemes):
            for s in self.seeds:
                out.append(Cell(len(out), i, sch["label"], s, cell_seed(self.name, i, s), sch))
        return out


def cell_seed(name: str, scheme_index: int, seed: int) -> int:
    """Stable 63-bit seed from ``(experiment name, scheme index, seed)``."""
    h = hashlib.sha256(f"{name}\x1f{scheme_index}\x1f{seed}".encode()).digest()
    return int.from_bytes(h[:8], "big") >> 1


def _as_q(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return float(v)


def _policy_fields(sch, problems, where):
    """Map the ``policy`` name onto ``(q, policy)`` and check it against ``q``."""
    q = _as_q(sch.get("q", 2.0))
    name = sch.get("policy")
    if name is None:
        return q, "approx"
    if name not in POLICY_NAMES:
        problems.append(f"{where}: unknown policy {name!r}, expected one of {POLICY_NAMES}")
        return q, "approx"
    need = {"softmax": lambda x: x == 1.0, "sparsemax": lambda x: x == 2.0, "hardmax": math.isinf}
    tsallis = lambda x: x != 1.0 and not math.isinf(x)  # noqa: E731
    ok = need.get(name, tsallis)(q)
    if not ok:
        hint = "q=1 requires the Shannon route (policy: softmax)" if q == 1.0 else f"policy {name} is incompatible with q={q}"
        problems.append(f"{where}: {hint}")
    return q, "exact" if name == "exact-tsallis" else "approx"


def tabular_scheme(sch: dict) -> SchemeConfig:
    problems = []
    q, pol = _policy_fields(sch, problems, sch.get("label", "?"))
    if problems:
        raise SpecError(problems)
    reg = RegularizerConfig(
        q=q,
        k=float(sch.get("k", 0.5)),
        alpha=float(sch.get("alpha", 1.0)),
        tau=float(sch.get("tau", 1.0)),
        policy=pol,
        normalization=sch.get("normalization", "appendix"),
    )
    kw = {k: sch[k] for k in ("method", "beta", "sigma", "munchausen_delta", "cvi_value") if k in sch}
    return SchemeConfig(regularizer=reg, **kw)


def agent_config(sch: dict) -> AgentConfig:
    problems = []
    q, pol = _policy_fields(sch, problems, sch.get("label", "?"))
    if problems:
        raise SpecError(problems)
    kw = {k: v for k, v in sch.items() if k not in ("label", "policy", "q")}
    for key in ("hidden", "adam_betas"):
        if key in kw:
            kw[key] = tuple(kw[key])
    return AgentConfig(q=q, policy=pol, **kw)


def tabular_mdp(env: str, params: dict, seed: int):
    if env == "chain":
        return chain_mdp(**params)
    if env == "gridworld":
        return gridworld(**params)
    if env == "random-mdp":
        return random_mdp(MdpGeneratorConfig(seed=seed, **params))
    raise KeyError(f"unknown tabular environment {env!r}")


def parse_spec(text: str, source: str = "<spec>") -> ExperimentSpec:
    """Parse and validate; raises ``SpecError`` listing every problem."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpecError([f"{source}: YAML parse error: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise SpecError([f"{source}: top level must be a mapping"])
    problems = [f"unknown key {k!r}" for k in sorted(set(raw) - TOP_KEYS)]
    for k in ("name", "kind", "env", "seeds", "schemes"):
        if k not in raw:
            problems.append(f"missing required key {k!r}")
    if problems:
        raise SpecError(problems)

    kind = raw["kind"]
    if kind not in KINDS:
        problems.append(f"kind must be one of {KINDS}, got {kind!r}")
    runner = raw.get("runner")
    implied = {"tabular-sweep": "tabular", "agent-run": "agent"}.get(kind)
    if runner is None:
        runner = implied
        if runner is None:
            problems.append("figure-repro specs must set runner: tabular | agent")
    elif runner not in RUNNERS or (implied and runner != implied):
        problems.append(f"runner {runner!r} does not fit kind {kind!r}")

    seeds = raw["seeds"]
    if not isinstance(seeds, list) or not seeds:
        problems.append("seeds must be a non-empty list of integers")
        seeds = []
    elif not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        problems.append("seeds must be integers")
    elif len(set(seeds)) != len(seeds):
        problems.append("seeds must be distinct")

    env = raw["env"]
    env_params = raw.get("env_params") or {}
    if not isinstance(env_params, dict):
        problems.append("env_params must be a mapping")
        env_params = {}
    if runner == "agent" and env not in AGENT_ENVS:
        problems.append(f"unknown agent environment {env!r}, expected one of {AGENT_ENVS}")
    if runner == "tabular" and env not in TABULAR_ENVS:
        problems.append(f"unknown tabular environment {env!r}, expected one of {TABULAR_ENVS}")

    solver = raw.get("solver") or {}
    if runner != "tabular" and "solver" in raw:
        problems.append("solver is only valid for tabular runs")
    for k in sorted(set(solver) - SOLVER_KEYS):
        problems.append(f"solver: unknown key {k!r}")

    schemes = raw["schemes"]
    if not isinstance(schemes, list) or not schemes:
        problems.append("schemes must be a non-empty list")
        schemes = []
    allowed = AGENT_SCHEME_KEYS if runner == "agent" else TABULAR_SCHEME_KEYS
    labels = []
    for i, sch in enumerate(schemes):
        where = f"schemes[{i}]"
        if not isinstance(sch, dict):
            problems.append(f"{where}: must be a mapping")
            continue
        sch.setdefault("label", f"scheme{i}")
        labels.append(sch["label"])
        bad = sorted(set(sch) - allowed)
        if bad:
            problems.append(f"{where}: unknown keys {bad}")
            continue
        sub = []
        _policy_fields(sch, sub, where)
        problems.extend(sub)
        if sub or runner not in RUNNERS:
            continue
        try:
            (agent_config if runner == "agent" else tabular_scheme)(sch)
        except (ValueError, TypeError) as exc:
            problems.append(f"{where}: {exc}")
    if len(set(labels)) != len(labels):
        problems.append("scheme labels must be distinct")

    if not problems and runner in RUNNERS:
        try:
            if runner == "agent":
                make_env(env, **dict(env_params))
            else:
                tabular_mdp(env, dict(env_params), seeds[0])
        except (ValueError, TypeError, KeyError) as exc:
            problems.append(f"env_params: {exc}")

    metrics = tuple(raw.get("plot_metrics") or DEFAULT_METRICS.get(runner, ()))
    output = raw.get("output")
    if output is not None and not _writable(Path(output)):
        problems.append(f"output directory {output!r} is not writable")
    if problems:
        raise SpecError(problems)
    return ExperimentSpec(
        name=str(raw["name"]),
        kind=kind,
        runner=runner,
        env=env,
        env_params=dict(env_params),
        seeds=list(seeds),
        schemes=schemes,
        solver=dict(solver),
        output=output,
        description=str(raw.get("description", "")),
        plot_metrics=metrics,
    )


def _writable(path: Path) -> bool:
    p = path.resolve()
    while not p.exists():
        p = p.parent
    return p.is_dir() and os.access(p, os.W_OK)


def shipped_specs() -> dict[str, str]:
    """Shipped experiment name -> YAML text."""
    out = {}
    for entry in sorted(resources.files("tsallis_al").joinpath("experiments").iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".yaml"):
            out[entry.name[: -len(".yaml")]] = entry.read_text()
    return out


def load_spec(ref: str) -> ExperimentSpec:
    """Load a spec from a file path or by shipped experiment name."""
    path = Path(ref)
    if path.is_file():
        return parse_spec(path.read_text(), str(path))
    shipped = shipped_specs()
    if ref in shipped:
        return parse_spec(shipped[ref], ref)
    raise SpecError([f"no spec file or shipped experiment named {ref!r}"])


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_cell(spec: ExperimentSpec, cell: Cell) -> dict[str, str]:
    """Execute one cell; returns ``{file suffix: csv text}``."""
    if spec.runner == "agent":
        cfg = agent_config(cell.config)
        env = make_env(spec.env, **dict(spec.env_params))
        curve = train(env, cfg, seed=cell.cell_seed)
        return {".csv": curve.to_csv(), "_episodes.csv": curve.episodes_csv()}
    scheme = tabular_scheme(cell.config)
    mdp = tabular_mdp(spec.env, dict(spec.env_params), cell.seed)
    res = solve(mdp, scheme, **spec.solver)
    gaps = action_gap(res.q) if mdp.n_actions > 1 else np.zeros(mdp.n_states)
    final = "state,action_gap,terminal\n" + "".join(
        f"{s},{float(g)!r},{int(t)}\n" for s, (g, t) in enumerate(zip(gaps, mdp.terminal))
    )
    return {".csv": res.trace.to_csv(), "_final.csv": final}


def _run_cell_safe(spec, cell):
    try:
        return cell.index, run_cell(spec, cell), None
    except Exception as exc:  # reported in the manifest, never swallowed silently
        return cell.index, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=5)}"


def read_csv(text: str) -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in text.splitlines() if ln]
    header = lines[0].split(",")
    rows = [[float(x) for x in ln.split(",")] for ln in lines[1:]]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def aggregate(per_seed: list[str], x_col: str) -> tuple[list[str], np.ndarray]:
    """Mean and population std across seeds at the ``x_col`` values shared by all seeds."""
    tables = [read_csv(t) for t in per_seed]
    header = tables[0][0]
    xi = header.index(x_col)
    common = set(tables[0][1][:, xi])
    for _, data in tables[1:]:
        common &= set(data[:, xi])
    xs = np.array(sorted(common))
    metrics = [h for h in header if h != x_col]
    stacked = []
    for _, data in tables:
        pos = {v: i for i, v in enumerate(data[:, xi])}
        stacked.append(data[[pos[x] for x in xs]])
    arr = np.stack(stacked) if stacked else np.zeros((0, 0, len(header)))
    cols = [x_col, "n_seeds"]
    out = [xs, np.full(xs.shape, len(tables), float)]
    for m in metrics:
        j = header.index(m)
        cols += [f"{m}_mean", f"{m}_std"]
        out += [arr[:, :, j].mean(0), arr[:, :, j].std(0)]
    return cols, np.column_stack(out) if xs.size else np.zeros((0, len(cols)))


def _fmt(v):
    return str(int(v)) if float(v).is_integer() and abs(v) < 2**53 else repr(float(v))


class Harness:
    """Runs a validated spec into ``out`` with optional process-level parallelism."""

    def __init__(self, spec: ExperimentSpec, out: Path | None = None, jobs: int = 1, resume: bool = False, log=None):
        self.spec = spec
        self.out = Path(out or spec.output or Path("results") / spec.name)
        self.jobs = max(1, int(jobs))
        self.resume = resume
        self.log = log or (lambda msg: None)
        self.cells = spec.cells()
        self.status = {c.index: {"status": "pending"} for c in self.cells}

    def cell_path(self, cell: Cell, suffix=".csv") -> Path:
        return self.out / "cells" / f"{cell.stem}{suffix}"

    def manifest(self) -> dict:
        cells = []
        for c in self.cells:
            entry = {
                "index": c.index,
                "scheme_index": c.scheme_index,
                "label": c.label,
                "seed": c.seed,
                "cell_seed": c.cell_seed,
                "config_hash": c.config_hash,
                "csv": str(self.cell_path(c).relative_to(self.out)),
            }
            entry.update(self.status[c.index])
            cells.append(entry)
        return {
            "name": self.spec.name,
            "kind": self.spec.kind,
            "runner": self.spec.runner,
            "env": self.spec.env,
            "version": __version__,
            "complete": all(e["status"] == "complete" for e in cells),
            "cells": cells,
        }

    def _write_manifest(self):
        atomic_write(self.out / "manifest.json", json.dumps(self.manifest(), indent=2, default=str) + "\n")

    def _cached(self) -> set[int]:
        path = self.out / "manifest.json"
        if not self.resume or not path.exists():
            return set()
        try:
            old = {e["config_hash"]: e for e in json.loads(path.read_text())["cells"] if e.get("status") == "complete"}
        except (ValueError, KeyError):
            return set()
        return {c.index for c in self.cells if c.config_hash in old and self.cell_path(c).exists()}

    def run(self) -> dict:
        self.out.mkdir(parents=True, exist_ok=True)
        done = self._cached()
        for i in done:
            self.status[i] = {"status": "complete", "cached": True}
        todo = [c for c in self.cells if c.index not in done]
        self._write_manifest()
        self.log(f"{self.spec.name}: {len(todo)} cells to run, {len(done)} cached")
        if self.jobs == 1 or len(todo) <= 1:
            results = (_run_cell_safe(self.spec, c) for c in todo)
            self._collect(results)
        else:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                futures = [pool.submit(_run_cell_safe, self.spec, c) for c in todo]
                self._collect(f.result() for f in futures)
        self.write_summaries()
        return self.manifest()

    def _collect(self, results):
        for index, files, err in results:
            cell = self.cells[index]
            if err is None:
                for suffix, text in files.items():
                    atomic_write(self.cell_path(cell, suffix), text)
                self.status[index] = {"status": "complete"}
                self.log(f"  cell {cell.stem}: complete")
            else:
                self.status[index] = {"status": "failed", "error": err}
                self.log(f"  cell {cell.stem}: FAILED {err.splitlines()[0]}")
            self._write_manifest()

    def write_summaries(self):
        """Aggregate CSV and one SVG per plotted metric from the completed cells."""
        x_col = X_COLUMN[self.spec.runner]
        rows, header, series = [], None, {m: [] for m in self.spec.plot_metrics}
        for i, sch in enumerate(self.spec.schemes):
            cells = [c for c in self.cells if c.scheme_index == i and self.status[c.index]["status"] == "complete"]
            if not cells:
                continue
            cols, agg = aggregate([self.cell_path(c).read_text() for c in cells], x_col)
            header = ["scheme_index", "label", *cols]
            for r in agg:
                rows.append([str(i), sch["label"], *(_fmt(v) for v in r)])
            for m in self.spec.plot_metrics:
                if f"{m}_mean" in cols:
                    j = cols.index(f"{m}_mean")
                    series[m].append((sch["label"], agg[:, 0], agg[:, j], agg[:, j + 1]))
        if header is None:
            return
        text = ",".join(header) + "\n" + "".join(",".join(r) + "\n" for r in rows)
        atomic_write(self.out / "aggregate.csv", text)
        for m, ser in series.items():
            if ser:
                svg = line_plot(ser, title=f"{self.spec.name}: {m}", xlabel=x_col, ylabel=f"{m} (mean +- 1 std)")
                atomic_write(self.out / f"{m}.svg", svg)
