"""Command-line entry point.

Exit codes: 0 success, 1 failed validation, 2 configuration error,
3 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import build_options, load_config, output_root
from .errors import ConfigError, SolverError
from .harness import (METHODS, compare, dqmom_sweep, load_run, read_meta, run_case, write_report,
                      write_run)

log = logging.getLogger("spraycoal")

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def _kv(items: list[str] | None) -> dict[str, dict[str, str]]:
    """``section.key=value`` pairs into nested dictionaries."""
    out: dict[str, dict[str, str]] = {}
    for item in items or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        out.setdefault(section, {})[key] = value
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spraycoal", description="Spray moment, sectional and parcel solvers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="solve one case with one method")
    r.add_argument("--config", help="INI file with [run] and method sections")
    r.add_argument("--case")
    r.add_argument("--method", choices=METHODS)
    r.add_argument("--N", type=int, help="nodes (dqmom) or sections (multifluid)")
    r.add_argument("--seed", type=int, help="random seed (lagrangian)")
    r.add_argument("--output", help="output directory")
    r.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")

    c = sub.add_parser("compare", help="compare run directories against a reference run")
    c.add_argument("reference")
    c.add_argument("candidates", nargs="+")
    c.add_argument("--output", help="report file (default: <root>/compare_<case>/report.csv)")

    s = sub.add_parser("sweep", help="DQMOM runs for several node counts")
    s.add_argument("--case", default="mono_noevap_coal")
    s.add_argument("--Ns", default="2,4,6,8")
    s.add_argument("--reference", help="reference run directory for the error table")
    s.add_argument("--output", help="directory for the sweep runs")
    s.add_argument("--set", action="append", metavar="dqmom.KEY=VALUE")

    v = sub.add_parser("validate", help="run the invariant checks and print pass/fail")
    v.add_argument("--seed", type=int, help="seed for the parcel checks (required unless --no-lagrangian)")
    v.add_argument("--no-lagrangian", action="store_true", help="skip the parcel-solver checks")
    return p


def _cmd_run(args) -> int:
    overrides = _kv(args.set)
    run = overrides.setdefault("run", {})
    if args.case:
        run["case"] = args.case
    if args.method:
        run["method"] = args.method
    if args.output:
        run["output"] = args.output
    cfg = load_config(args.config, overrides)
    opts = cfg.options
    if args.N is not None:
        if cfg.method == "lagrangian":
            raise ConfigError("--N applies to dqmom and multifluid only")
        opts = replace(opts, N=args.N)
    if args.seed is not None:
        if cfg.method != "lagrangian":
            raise ConfigError("--seed applies to lagrangian runs only")
        opts = replace(opts, seed=args.seed)
    out = run_case(cfg.case_id, cfg.method, opts, n_points=cfg.n_points, stations=cfg.stations)
    directory = write_run(cfg.output, out, {f"config_{k}": v for k, v in cfg.resolved().items()})
    print(f"{cfg.case_id} {cfg.method}: wrote {directory}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    ref = load_run(Path(args.reference))
    cands = {}
    for d in args.candidates:
        meta = read_meta(Path(d))["run"]
        name = meta.get("method", Path(d).name)
        if name in cands:
            name = Path(d).name
        cands[name] = load_run(Path(d))
    report = compare(ref, cands)
    path = Path(args.output) if args.output else output_root() / f"compare_{ref.case_id}" / "report.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_report(path, report)
    for row in report.summary_rows():
        print(f"{row['candidate']}: max m1 err {row['max_norm_m1']:.3%}, max u_d err {row['max_norm_ud']:.3%}"
              f"{' (resampled)' if row['resampled'] else ''}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    try:
        Ns = tuple(int(x) for x in args.Ns.split(","))
    except ValueError:
        raise ConfigError(f"--Ns: cannot interpret {args.Ns!r}") from None
    base = build_options("dqmom", _kv(args.set).get("dqmom", {}))
    root = Path(args.output) if args.output else output_root() / f"sweep_{args.case}"
    if args.reference:
        ref = load_run(Path(args.reference))
        rows, _ = dqmom_sweep(args.case, ref, Ns, base)
        for r in rows:
            print(f"N={r['N']}: max m1 err {r['max_norm_m1']:.3%}, max u_d err {r['max_norm_ud']:.3%}")
        report = compare(ref, {})
        report.sweep = rows
        root.mkdir(parents=True, exist_ok=True)
        write_report(root / "sweep.csv", report)
    for N in Ns:
        out = run_case(args.case, "dqmom", replace(base, N=N))
        write_run(root / f"N{N}", out)
    print(f"wrote {root}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .checks import all_checks
    if args.seed is None and not args.no_lagrangian:
        raise ConfigError("validate needs --seed for the parcel checks (or --no-lagrangian)")
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    failed = 0
    for name, check in all_checks(None if args.no_lagrangian else args.seed):
        ok, detail = check(rng)
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if failed == 0 else EXIT_INVALID


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "compare": _cmd_compare, "sweep": _cmd_sweep, "validate": _cmd_validate}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
