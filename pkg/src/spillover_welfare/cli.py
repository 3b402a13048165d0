"""Command-line entry point.

Exit codes: 0 success, 2 bad input or configuration, 3 solver or numerical
failure.  ``SPILLOVER_THREADS`` caps the threads used by the compiled belief
sweep; results do not depend on it.
"""

from __future__ import annotations

import argparse
import os
import sys

import yaml

from .errors import InputError, SpilloverError
from .io import WORKFLOWS, RunConfig, load_config

THREADS_ENV = "SPILLOVER_THREADS"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spillover-welfare",
                                description="Demand and welfare analysis with social spillovers.")
    p.add_argument("workflow", choices=WORKFLOWS)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--dataset", help="household CSV (otherwise data are simulated)")
    p.add_argument("--output-dir", "-o", help="directory for result files")
    p.add_argument("--no-spillover", action="store_true",
                   help="also fit and report the model without the belief term")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. --set scenario.tau=6000 (repeatable)")
    return p


def _overrides(args) -> dict:
    out = {"workflow": args.workflow}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.dataset is not None:
        out["dataset_path"] = args.dataset
    if args.output_dir is not None:
        out["output_dir"] = args.output_dir
    if args.no_spillover:
        out["no_spillover"] = True
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise InputError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = yaml.safe_load(value)
    return out


def _set_threads():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return
    try:
        k = int(n)
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer, got {n!r}") from None
    import numba
    numba.set_num_threads(max(1, min(k, numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        _set_threads()
        base = load_config(args.config) if args.config else RunConfig()
        cfg = base.override(_overrides(args))
        from .pipeline import run_pipeline
        bundle = run_pipeline(cfg)
    except SpilloverError as e:
        kind = "input error" if isinstance(e, InputError) else "solver error"
        print(f"{kind}: {e}", file=sys.stderr)
        return e.exit_code
    for name, path in sorted(bundle.files.items()):
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
