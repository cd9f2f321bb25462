"""Command line driver.

    bmvd <subcommand> [--config FILE] [--out DIR] [--seed N] [--workers N] [--strict]

Subcommands: ``simulate``, ``pde``, ``duhamel``, ``verify-bounds``,
``green`` and ``report``.  Each writes ``<subcommand>.json`` plus CSV
artifacts into the output directory.  Exit status is 0 on completion, 1 on a
module error, 2 on an invalid configuration and 3 when ``--strict`` is set
and a check fails.  Errors are reported as JSON on stderr and in
``error.json``.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

from . import experiments as ex
from .config import ConfigError, default_config, load_config

RUNNERS = {
    "simulate": ex.run_simulate,
    "pde": ex.run_pde,
    "duhamel": ex.run_duhamel,
    "verify-bounds": ex.run_bounds,
    "green": ex.run_green,
}


def _clean(obj):
    """Make a structure strict-JSON safe (non-finite floats become strings)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if hasattr(obj, "item"):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _fail(payload, out_dir, code):
    text = json.dumps(_clean(payload), sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir and os.path.isdir(out_dir):
        dump_json(payload, os.path.join(out_dir, "error.json"))
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="bmvd", description=__doc__.split("\n\n")[0])
    ap.add_argument("subcommand", choices=sorted(RUNNERS) + ["report"])
    ap.add_argument("--config", help="TOML configuration file")
    ap.add_argument("--out", help="output directory (overrides run.out)")
    ap.add_argument("--seed", type=int, help="base seed (overrides run.seed)")
    ap.add_argument("--workers", type=int, help="worker threads (overrides run.workers)")
    ap.add_argument("--strict", action="store_true", help="exit 3 when a check fails")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    out_dir = args.out
    try:
        cfg = load_config(args.config) if args.config else default_config()
    except ConfigError as exc:
        return _fail(exc.to_dict(), out_dir, 2)
    except OSError as exc:
        return _fail({"error": "ConfigError", "key": "<file>", "line": None, "message": str(exc)}, out_dir, 2)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            return _fail({"error": "ConfigError", "key": "--seed", "line": None,
                          "message": "seed must be an unsigned 64-bit integer"}, out_dir, 2)
        cfg["run"]["seed"] = args.seed
    if args.workers is not None:
        if args.workers < 1:
            return _fail({"error": "ConfigError", "key": "--workers", "line": None,
                          "message": "workers must be positive"}, out_dir, 2)
        cfg["run"]["workers"] = args.workers
    out_dir = out_dir or cfg["run"]["out"]
    os.makedirs(out_dir, exist_ok=True)
    stale = os.path.join(out_dir, "error.json")
    if os.path.exists(stale):
        os.remove(stale)
    try:
        if args.subcommand == "report":
            summary, artifacts = ex.run_report(cfg, out_dir)
        else:
            summary, artifacts = RUNNERS[args.subcommand](cfg)
    except (ValueError, ArithmeticError, MemoryError) as exc:
        return _fail({"error": type(exc).__name__, "subcommand": args.subcommand, "message": str(exc)}, out_dir, 1)
    summary = {"subcommand": args.subcommand, "config": cfg, **summary}
    for name, writer in artifacts.items():
        writer(os.path.join(out_dir, name))
    name = args.subcommand.replace("-", "_") + ".json"
    dump_json(summary, os.path.join(out_dir, name))
    checks = summary.get("checks", {})
    for k, v in checks.items():
        print(f"{'PASS' if v else 'FAIL'}  {args.subcommand}: {k}")
    if args.subcommand == "report":
        print(f"all_passed: {summary['all_passed']}")
        if args.strict and not summary["all_passed"]:
            return 3
    if args.strict and not all(checks.values()):
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
