"""``tal-harness`` command line: run, validate, list and version.

Exit codes: 0 success, 2 validation failure, 3 runtime failure. Failures
print a JSON report to stderr.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys

import numpy as np

from . import __version__
from .harness import Harness, SpecError, load_spec, parse_spec, shipped_specs

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def _report(kind, message, details=(), **extra):
    payload = {"error": kind, "message": message, "details": list(details), **extra}
    print(json.dumps(payload, indent=2, default=str), file=sys.stderr)


def _seed_list(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seed list must be comma-separated integers: {text!r}") from exc
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tal-harness", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute every (scheme, seed) cell of a spec")
    run.add_argument("spec", help="spec file path or shipped experiment name")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    run.add_argument("--out", default=None, help="output directory (default results/<name>)")
    run.add_argument("--seed-override", type=_seed_list, default=None, help="comma-separated seeds replacing the spec's")
    run.add_argument("--resume", action="store_true", help="skip cells already complete with an identical config")
    run.add_argument("--quiet", action="store_true")
    val = sub.add_parser("validate", help="parse and validate a spec without running it")
    val.add_argument("spec")
    sub.add_parser("list", help="list shipped experiments")
    sub.add_parser("version", help="print build metadata")
    return p


def _load(ref, seeds=None):
    spec = load_spec(ref)
    if seeds is not None:
        spec.seeds = list(seeds)
    return spec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "version":
        print(json.dumps({"package": "tsallis_al", "version": __version__, "python": platform.python_version(), "numpy": np.__version__}))
        return EXIT_OK
    if args.command == "list":
        for name, text in shipped_specs().items():
            spec = parse_spec(text, name)
            print(f"{name}\t{spec.kind}\t{spec.runner}\t{len(spec.cells())} cells\t{spec.description}")
        return EXIT_OK
    try:
        spec = _load(args.spec, getattr(args, "seed_override", None))
    except SpecError as exc:
        _report("validation", f"invalid spec {args.spec!r}", exc.problems)
        return EXIT_INVALID
    if args.command == "validate":
        print(json.dumps({"valid": True, "name": spec.name, "cells": len(spec.cells())}))
        return EXIT_OK
    log = (lambda m: None) if args.quiet else (lambda m: print(m, file=sys.stderr, flush=True))
    harness = Harness(spec, out=args.out, jobs=args.jobs, resume=args.resume, log=log)
    try:
        manifest = harness.run()
    except Exception as exc:  # partial results stay on disk with the manifest
        _report("runtime", f"{type(exc).__name__}: {exc}", out=str(harness.out))
        return EXIT_RUNTIME
    failed = [c for c in manifest["cells"] if c["status"] != "complete"]
    if failed:
        _report(
            "runtime",
            f"{len(failed)} of {len(manifest['cells'])} cells failed",
            [f"{c['label']} seed {c['seed']}: {c.get('error', '').splitlines()[0]}" for c in failed],
            out=str(harness.out),
        )
        return EXIT_RUNTIME
    print(json.dumps({"name": spec.name, "out": str(harness.out), "cells": len(manifest["cells"])}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
