"""``deformba`` command line.

Exit codes: 0 every check passed, 1 a check failed or the input had the
wrong shape, 2 usage or configuration error (nothing is written).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..tensor import ShapeError
from ..tensor.dtsr import DTSRError
from .config import COMMANDS, ConfigError, load_config, parse_config
from .report import Report, atomic_write
from .suites import run_bench, run_flops, run_forward, run_gradcheck, run_verify
from . import checks as ck

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deformba", description="Deformba verification harness")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    ap.add_argument("--input", help="DTSR input tensor for 'forward'")
    ap.add_argument("--out", help="output directory (default: config 'out' or ./deformba_out)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--quiet", action="store_true", help="print only the final status line")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        updates = {"command": args.command}
        if args.seed is not None:
            updates["seed"] = args.seed
        cfg = parse_config({**cfg.model_dump(), **updates})
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(args.out or cfg.out or "deformba_out")
    try:
        if cfg.command == "verify":
            report = run_verify(cfg)
        elif cfg.command == "gradcheck":
            report = run_gradcheck(cfg)
        elif cfg.command == "forward":
            report = run_forward(cfg, args.input, out_dir)
        elif cfg.command == "flops":
            report = run_flops(cfg, out_dir)
        else:
            report = run_bench(cfg)
    except (ShapeError, DTSRError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        report = Report(cfg.command, cfg.seed)
        report.add(ck._check("input_contract", False, str(e), "valid input"))

    atomic_write(out_dir / f"{cfg.command}_report.json", report.to_json())
    lines = report.summary_lines()
    print("\n".join(lines[-1:] if args.quiet else lines))
    if cfg.command == "forward":
        for row in report.extra.get("shape_trace", []):
            print(f"  {row['stage']:<7} {tuple(row['shape'])}")
    return EXIT_PASS if report.status == "pass" else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
