"""Command-line front end.

Exit codes: 0 on success, 2 on configuration or argument errors, 3 when a
scaling run hit its budget cap before reaching the fidelity target.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .bench import (
    ConfigError,
    cmd_convergence,
    cmd_optimize_set,
    cmd_reconstruct,
    cmd_scaling,
    cmd_trace_check,
    cmd_w2,
    parse_config,
)

_COMMANDS = {
    "scaling": (cmd_scaling, "shots needed to reach the target fidelity vs mode count"),
    "convergence": (cmd_convergence, "fidelity and self-distance vs measurement number"),
    "trace-check": (cmd_trace_check, "raw-trace self-consistency for full space and subspace"),
    "w2": (cmd_w2, "direct fidelity estimation series"),
    "reconstruct": (cmd_reconstruct, "single full tomography run with report output"),
    "optimize-set": (cmd_optimize_set, "build the linear-inversion displacement set"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="wigtomo",
        description="Multimode Wigner tomography benchmarks",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="INI run configuration")
        sp.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
        sp.add_argument("--out", default=".", help="output directory (default cwd)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad arguments and 0 on --help/--version
        return int(exc.code or 0)
    fn, _ = _COMMANDS[args.command]
    try:
        cfg = parse_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        result = fn(cfg, seed=args.seed, out_dir=args.out, threads=args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for key, value in result.items():
        print(f"{key}: {value}")
    if result.get("capped"):
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
