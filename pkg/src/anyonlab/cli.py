"""Command-line front end.

Subcommands: ``run`` executes a configured experiment over all its trials,
``analyze`` computes the closed-form locking analytics for the same config,
``verify`` runs the invariant suite on a named fixture, and ``list-fixtures``
prints what is available.  ``--config`` accepts either a path to a JSON file
or the name of a shipped preset.

Exit codes: 0 success, 2 configuration error, 3 numerical-validation error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import AnyonlabError, ConfigError
from .experiment import (
    analyze_experiment,
    load_config_or_preset,
    preset_names,
    run_experiment,
)
from .fixtures import list_fixtures, load_fixture, verify_fixture


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anyonlab",
        description="interference experiments with non-abelian anyons",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment over all trials")
    run_p.add_argument("--config", required=True,
                       help="path to a JSON experiment config, or a preset name")
    run_p.add_argument("--out", default="out", help="output directory (default: out)")
    run_p.add_argument("--threads", type=int, default=1, help="worker threads (default: 1)")
    run_p.add_argument("--format", action="append", choices=("json", "jsonl", "csv"),
                       dest="formats", help="output formats, repeatable (default: json, jsonl)")

    an_p = sub.add_parser("analyze", help="closed-form locking analytics for a config")
    an_p.add_argument("--config", required=True,
                      help="path to a JSON experiment config, or a preset name")
    an_p.add_argument("--out", default="out", help="output directory (default: out)")

    ver_p = sub.add_parser("verify", help="run the invariant suite on a fixture")
    ver_p.add_argument("fixture", help="fixture name")

    sub.add_parser("list-fixtures", help="list available fixtures and presets")
    return parser


def _cmd_run(args) -> int:
    exp = load_config_or_preset(args.config)
    summary = run_experiment(
        exp, Path(args.out), threads=args.threads, formats=args.formats
    )
    print(f"scheme={summary['scheme']} config_hash={summary['config_hash'][:12]}")
    if "aggregate_pattern" in summary:
        pat = summary["aggregate_pattern"]
        print(f"aggregate pattern: I[D1]={pat['i_d1']:.6f} I[D2]={pat['i_d2']:.6f}")
    if "lock" in summary:
        lock = summary["lock"]
        print(f"locked {lock['count_locked']} trials"
              f" (fraction {lock['fraction_locked']:.4f})")
        for entry in lock["frequencies"]:
            lam = complex(*entry["eigenvalue"])
            line = f"  eigenvalue {lam:.6g}: frequency {entry['frequency']:.6f}"
            if "post_lock_pattern" in entry:
                line += f", pattern I[D1]={entry['post_lock_pattern']['i_d1']:.6f}"
            print(line)
    if "stabilized_fraction" in summary:
        print(f"stabilized fraction: {summary['stabilized_fraction']:.4f}")
        if summary.get("max_distance_to_kappa") is not None:
            print(f"max distance to reference eigenvalues:"
                  f" {summary['max_distance_to_kappa']:.3e}")
    print(f"outputs written to {args.out}")
    return 0


def _cmd_analyze(args) -> int:
    exp = load_config_or_preset(args.config)
    doc = analyze_experiment(exp, Path(args.out))
    if doc.get("unresolvable"):
        print("warning: branches are indistinguishable; locking cannot discriminate",
              file=sys.stderr)
    if "locking_masses" in doc:
        lm = doc["locking_masses"]
        print(f"locking masses at n={doc['n']}, z_cut={doc['z_cut']}:"
              f" mid={lm['mid']:.3e} upper={lm['upper']:.9f} lower={lm['lower']:.9f}")
    print(f"outputs written to {args.out}")
    return 0


def _cmd_verify(args) -> int:
    fixture = load_fixture(args.fixture)
    rows = verify_fixture(fixture)
    width = max(len(r.name) for r in rows)
    print(f"fixture {fixture.name}: {fixture.description}")
    eigs = ", ".join(f"{v:.6g}" for v in fixture.monodromy.decomposition.eigenvalues)
    print(f"eigenvalues: {eigs}")
    failed = []
    for row in rows:
        status = "pass" if row.passed else "FAIL"
        print(f"  {row.name:<{width}}  residual {row.residual:.3e}  tol {row.tol:.1e}  {status}")
        if not row.passed:
            failed.append(row.name)
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return 3
    return 0


def _cmd_list(_args) -> int:
    print("fixtures:")
    for name in list_fixtures():
        print(f"  {name}")
    print("presets:")
    for name in preset_names():
        print(f"  {name}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "analyze": _cmd_analyze,
        "verify": _cmd_verify,
        "list-fixtures": _cmd_list,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AnyonlabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
