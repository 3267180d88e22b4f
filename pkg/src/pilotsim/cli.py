"""Command-line entry point: ``sim analytic|figure|table1|partition``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments
from .config import ConfigError, load_values

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _cell(value):
    """Render one CSV field; floats use the shortest round-trip representation."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    return str(value)


def render_csv(out: experiments.Output) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(out.header)
    for row in out.rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sim", description="Multi-cell massive MIMO pilot simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("analytic", "figure", "table1", "partition"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="flat JSON file of config values")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", type=Path, help="CSV destination (stdout when omitted)")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--threads", type=int, help="worker threads (defaults to SIM_THREADS)")
        if name == "figure":
            p.add_argument("--id", dest="fig", type=int, required=True, help="figure id, 3 to 14")
    return parser


def run(args: argparse.Namespace) -> experiments.Output:
    values = load_values(args.config, args.overrides)
    # an explicit --set seed=... wins over the flag default
    values.setdefault("seed", args.seed)
    if args.command == "analytic":
        return experiments.cmd_analytic(values)
    if args.command == "figure":
        return experiments.cmd_figure(args.fig, values, args.threads)
    if args.command == "table1":
        return experiments.cmd_table1(values, args.threads)
    return experiments.cmd_partition(values)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        out = run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any experiment failure maps to one exit code
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    text = render_csv(out)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text, newline="")
    summary = {"command": args.command, "rows": len(out.rows), "wall_time_s": round(time.perf_counter() - start, 3)}
    summary.update(out.summary)
    if args.out is not None:
        summary["out"] = str(args.out)
    print(json.dumps(summary, default=float), file=sys.stderr if args.out is None else sys.stdout)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
