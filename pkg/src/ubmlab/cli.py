"""Command line entry point: ``ubmlab <subcommand> --config FILE [--seed S] [--out DIR]``.

The exit status is 0 only if every verdict in the produced report passes;
1 means a verdict failed or was flagged, 2 means the configuration was rejected.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import jsonschema
import numpy as np

from . import __version__
from .dynamics import cue_phases, evolve_eigenphases, phase_path, write_trajectory
from .experiments import KINDS, ConfigError, ExperimentConfig, run_experiment
from .report import Report, emit, parse
from .seeding import SeedTree

SAMPLE_SCHEMA = {
    "type": "object", "required": ["parameters"],
    "properties": {"kind": {"const": "sample"}, "seed": {"type": "integer", "minimum": 0},
                   "output": {"type": "string"},
                   "parameters": {"type": "object", "required": ["n", "count"], "additionalProperties": False,
                                  "properties": {"n": {"type": "integer", "minimum": 1},
                                                 "count": {"type": "integer", "minimum": 1}}}},
}

EVOLVE_SCHEMA = {
    "type": "object", "required": ["parameters"],
    "properties": {"kind": {"const": "evolve"}, "seed": {"type": "integer", "minimum": 0},
                   "output": {"type": "string"},
                   "parameters": {"type": "object", "required": ["n", "times"], "additionalProperties": False,
                                  "properties": {"n": {"type": "integer", "minimum": 1},
                                                 "times": {"type": "array", "minItems": 1,
                                                           "items": {"type": "number", "minimum": 0}},
                                                 "dt": {"type": "number", "exclusiveMinimum": 0},
                                                 "beta": {"type": "number", "exclusiveMinimum": 0},
                                                 "format": {"enum": ["csv", "npz"]}}}},
}


def _load(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc


def _validated(d: dict, schema: dict) -> dict:
    try:
        jsonschema.validate(d, schema)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    return d


def cmd_sample(args) -> int:
    d = _validated(_load(args.config), SAMPLE_SCHEMA)
    p = d["parameters"]
    seed = SeedTree(args.seed if args.seed is not None else d.get("seed", 0)).child("sample")
    out = Path(args.out or d.get("output", "ubmlab-out"))
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# n={p['n']} seed_path={seed} version={__version__}",
             "sample," + ",".join(f"theta{k}" for k in range(p["n"]))]
    for i in range(p["count"]):
        ph = cue_phases(p["n"], seed.child("sample", i))
        lines.append(f"{i}," + ",".join(format(v, ".17g") for v in ph))
    path = out / "cue_samples.csv"
    path.write_text("\n".join(lines) + "\n")
    print(path)
    return 0


def cmd_evolve(args) -> int:
    d = _validated(_load(args.config), EVOLVE_SCHEMA)
    p = d["parameters"]
    seed = SeedTree(args.seed if args.seed is not None else d.get("seed", 0)).child("evolve")
    out = Path(args.out or d.get("output", "ubmlab-out"))
    out.mkdir(parents=True, exist_ok=True)
    traj = phase_path(p["n"], sorted(p["times"]), seed, p.get("dt"), p.get("beta", 2.0))
    traj.seed = str(seed)
    path = write_trajectory(traj, out / f"trajectory.{p.get('format', 'csv')}")
    print(path)
    return 0


def cmd_experiment(kind: str, args) -> int:
    d = _load(args.config)
    if d.get("kind", kind) != kind:
        raise ConfigError(f"config kind {d.get('kind')!r} does not match subcommand {kind!r}")
    d.setdefault("kind", kind)
    cfg = ExperimentConfig.from_dict(d, Path(args.config).parent)
    report, paths = run_experiment(cfg, args.seed, args.out)
    _summarize(report)
    for p in paths:
        print(p)
    return 0 if report.all_pass else 1


def cmd_report(args) -> int:
    report = parse(args.config)
    _summarize(report)
    if args.out:
        out = Path(args.out)
        for fmt in ("csv", "json"):
            print(emit(report, out / f"{report.kind}.{fmt}", fmt))
    return 0 if report.all_pass else 1


def _summarize(report: Report) -> None:
    print(f"ubmlab {report.version} {report.kind}: {len(report.rows)} row(s)")
    for r in report.rows:
        bits = [str(r.get("label", ""))]
        for key in ("empirical", "exact", "ratio", "predicted", "stderr"):
            if r.get(key) is not None:
                bits.append(f"{key}={r[key]:.6g}")
        bits.append(f"verdict={r.get('verdict') or '-'}")
        if r.get("error"):
            bits.append(f"error={r['error']} seed_path={r.get('seed_path', '')}")
        print("  " + " ".join(bits))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ubmlab", description="Unitary Brownian motion laboratory")
    ap.add_argument("--version", action="version", version=f"ubmlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("sample", "evolve", *KINDS, "report"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config (for 'report': a report file)")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", default=None, help="output directory")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sample":
            return cmd_sample(args)
        if args.command == "evolve":
            return cmd_evolve(args)
        if args.command == "report":
            return cmd_report(args)
        return cmd_experiment(args.command, args)
    except ConfigError as exc:
        print(f"ubmlab: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ubmlab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
