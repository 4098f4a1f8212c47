"""Command line: ``fraconc <subcommand> [--config F] [--override k=v] ...``.

Exit status is 0 when every pass flag holds, 1 when one fails and 2 on a
configuration error (with a JSON error object on stderr).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from threadpoolctl import threadpool_info, threadpool_limits

from .experiments import EXPERIMENTS, ConfigError, Session, load_config, summarize
from .io import write_csv, write_json

SUBCOMMANDS = tuple(EXPERIMENTS) + ("report",)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fraconc", description="Concentrating solutions of a fractional "
                                 "Dirichlet problem: numerical experiments.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="JSON config file (defaults when omitted)")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="dotted config key, value parsed as JSON (repeatable)")
    ap.add_argument("--threads", type=int, default=None, help="BLAS/FFT thread limit")
    ap.add_argument("--no-cache", action="store_true", help="recompute the ground state")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    return ap


def effective_threads(requested: int) -> int:
    """``requested`` capped at the size of the largest native pool at startup.

    OpenBLAS sizes its buffers when loaded; asking for more threads than that
    crashes some builds, so larger requests are clamped.
    """
    sizes = [d["num_threads"] for d in threadpool_info()]
    return min(requested, max(sizes)) if sizes else requested


def _fail(kind: str, msg: str) -> int:
    print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
    return 2


def run(subcommand: str, config, use_cache: bool = True, out_dir=None) -> int:
    """Run one subcommand, write its artifacts and return the exit code."""
    out_dir = Path(out_dir) if out_dir is not None else config.output_dir
    if subcommand == "report":
        outcome = summarize(out_dir)
        print(outcome.report["text"])
    else:
        outcome = EXPERIMENTS[subcommand](Session(config, use_cache))
        for name, (cols, rows) in outcome.tables.items():
            write_csv(out_dir / name, cols, rows)
        for k, v in sorted(outcome.pass_flags.items()):
            print(f"{'PASS' if v else 'FAIL'}  {subcommand}.{k}")
    write_json(out_dir / f"{subcommand}.json", outcome.report)
    return 0 if outcome.passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        return _fail("config", "--threads must be positive")
    try:
        cfg = load_config(args.config, args.override)
    except ConfigError as err:
        return _fail("config", str(err))
    try:
        if args.threads is not None:
            with threadpool_limits(limits=effective_threads(args.threads)):
                return run(args.subcommand, cfg, not args.no_cache, args.out)
        return run(args.subcommand, cfg, not args.no_cache, args.out)
    except ConfigError as err:
        return _fail("config", str(err))


if __name__ == "__main__":
    sys.exit(main())
