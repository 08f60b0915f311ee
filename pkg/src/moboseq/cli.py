"""Command-line entry point.

Exit codes: 0 success, 1 other package error, 2 configuration error,
3 oracle failure, 4 budget-zero no-op, 5 space too large to enumerate.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_benchmark, load_config, read_yaml
from .engine import read_reference, run, run_benchmark, write_derived
from .errors import ConfigError, MoboSeqError, OracleFailure, SpaceTooLarge
from .oracle import OracleSpec, brute_force_front, build_oracle, check_external
from .runlog import RunLog, rows_to_csv, write_atomic

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_ORACLE = 3
EXIT_NOOP = 4
EXIT_TOO_LARGE = 5

log = logging.getLogger("moboseq")


def cmd_run(args) -> int:
    config = load_config(args.config, args.overrides)
    out = Path(args.out) if args.out else Path(f"run_{config.method}_seed{config.seed}")
    if config.total_budget == 0:
        print("budget is zero; nothing to do", file=sys.stderr)
        return EXIT_NOOP
    result = run(config, out, resume=args.resume)
    log.info("%s: %d oracle calls, status %s", out, len(result), result.status)
    print(out)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    bench = load_benchmark(args.config, args.overrides)
    out = Path(args.out) if args.out else Path("benchmark_out")
    report = run_benchmark(bench, out)
    for flag in report.flags:
        print(f"FLAG: {flag}", file=sys.stderr)
    print(out)
    return EXIT_OK


def cmd_enumerate(args) -> int:
    config = load_config(args.config, args.overrides)
    out = Path(args.out) if args.out else Path("ground_truth")
    oracles = [build_oracle(s, config.space) for s in config.oracles]
    try:
        ref = None if isinstance(config.reference, str) else config.reference
        gt = brute_force_front(config.space, oracles, reference=ref)
    finally:
        for o in oracles:
            o.close()
    cols = [f"score_{j + 1}" for j in range(config.k)]
    order = np.lexsort(tuple(-gt.front.points[:, j] for j in reversed(range(config.k))))
    rows = [[gt.front.ids[i]] + [float(v) for v in gt.front.points[i]] for i in order]
    write_atomic(out / "ground_truth_front.csv", rows_to_csv(["sequence"] + cols, rows))
    write_atomic(out / "ground_truth_hv.txt", f"{gt.hypervolume!r}\n")
    write_atomic(out / "ground_truth_reference.txt", ",".join(repr(float(v)) for v in gt.reference) + "\n")
    write_atomic(out / "space_count.txt", f"{gt.count}\n")
    print(out)
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    path = run_dir / "runlog.csv"
    if not path.exists():
        raise ConfigError(f"{path} does not exist")
    runlog = RunLog.from_csv(path)
    ref = np.asarray(args.reference, dtype=float) if args.reference else read_reference(run_dir)
    if ref is None:
        raise ConfigError("no reference point: pass --reference or keep config.snapshot next to runlog.csv")
    write_derived(run_dir, runlog, ref, args.window)
    print(run_dir)
    return EXIT_OK


def _oracle_specs(args) -> list[OracleSpec]:
    if args.command:
        return [OracleSpec(name=args.name, kind="external", direction=args.direction, command=args.command)]
    if not args.config:
        raise ConfigError("oracle-check needs a configuration file or --command")
    data = read_yaml(args.config)
    entries = data["oracles"] if "oracles" in data else [data]
    specs = [OracleSpec.from_dict(e) for e in entries]
    specs = [s for s in specs if s.kind == "external"]
    if not specs:
        raise ConfigError("no external oracle to check")
    return specs


def cmd_oracle_check(args) -> int:
    ok = True
    for spec in _oracle_specs(args):
        for r in check_external(spec):
            ok &= r.passed
            print(f"{spec.name}\t{r.name}\t{'PASS' if r.passed else 'FAIL'}\t{r.detail}")
    return EXIT_OK if ok else EXIT_ORACLE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="moboseq", description="Multi-objective sequence optimization runs and reports.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("run", help="execute one run")
    p.add_argument("config")
    p.add_argument("overrides", nargs="*", help="dotted key=value overrides")
    p.add_argument("-o", "--out")
    p.add_argument("--resume", action="store_true", help="replay results already in the run directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("benchmark", help="run methods x seeds and aggregate")
    p.add_argument("config")
    p.add_argument("overrides", nargs="*")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("enumerate", help="score the whole space and write the exact front")
    p.add_argument("config")
    p.add_argument("overrides", nargs="*")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("report", help="regenerate derived files from runlog.csv")
    p.add_argument("run_dir")
    p.add_argument("--reference", type=float, nargs="+")
    p.add_argument("--window", type=int, default=100)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("oracle-check", help="protocol conformance checks for external oracles")
    p.add_argument("config", nargs="?")
    p.add_argument("--command", nargs=argparse.REMAINDER, help="oracle command line (consumes the rest)")
    p.add_argument("--name", default="external")
    p.add_argument("--direction", default="maximize", choices=["maximize", "minimize"])
    p.set_defaults(func=cmd_oracle_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleFailure as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except SpaceTooLarge as exc:
        print(f"space too large: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE
    except MoboSeqError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
