"""Command-line surface: validate, run, report.

Exit codes: 0 all checks pass, 1 error, 2 bound violation.  The worker
count is capped by the MONOTONE_SDI_THREADS environment variable (0 or
unset = auto).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .ensemble import read_manifest, run_ensemble, write_report_tree
from .errors import MonotoneSDIError, ParseError, ValidationError
from .scenario import load_scenario


def _summary_lines(rows, header=True):
    cols = ("check", "quantity", "t", "observed", "bound", "verdict")
    table = []
    if header:
        table.append(cols)
    for r in rows:
        table.append((r[0], r[1], f"{float(r[2]):.6g}", f"{float(r[3]):.6g}",
                      f"{float(r[4]):.6g}", r[5]))
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    return ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row))
            for row in table]


def _print_summary(rows):
    if not rows:
        print("no checks configured")
        return
    for line in _summary_lines(rows):
        print(line)


def _cmd_validate(args):
    scn = load_scenario(args.scenario)
    print(f"scenario OK: digest {scn.digest[:16]}..., "
          f"{scn.n_paths} paths, {len(scn.metrics)} metrics, "
          f"{len(scn.checks)} checks")
    return 0


def _cmd_run(args):
    scn = load_scenario(args.scenario)
    scn = scn.with_overrides(n_paths=args.paths, master_seed=args.seed,
                             output_dir=args.out)
    result = run_ensemble(scn)
    write_report_tree(result, scn.output_dir)
    rows = [(r.check, r.quantity, r.time, r.observed, r.bound,
             "pass" if r.passed else "FAIL") for r in result.all_rows()]
    _print_summary(rows)
    print(f"report written to {scn.output_dir}")
    return 0 if result.passed else 2


def _cmd_report(args):
    indir = getattr(args, "in")
    manifest = read_manifest(indir)
    checks_file = os.path.join(indir, "checks.csv")
    rows = []
    if os.path.exists(checks_file):
        with open(checks_file, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append((rec["check"], rec["quantity"], rec["time"],
                             rec["observed"], rec["bound"], rec["verdict"]))
    print(f"run digest {manifest['digest'][:16]}... "
          f"(seed {manifest['master_seed']}, version {manifest['version']})")
    _print_summary(rows)
    if args.plot_data:
        _write_plot_data(indir)
    return 2 if any(r[5] == "FAIL" for r in rows) else 0


def _write_plot_data(indir):
    src = os.path.join(indir, "ensemble.csv")
    series = {}
    if os.path.exists(src):
        with open(src, newline="") as fh:
            for rec in csv.DictReader(fh):
                series.setdefault(rec["metric"], []).append(
                    (rec["t"], rec["mean"]))
    plot_dir = os.path.join(indir, "plot")
    os.makedirs(plot_dir, exist_ok=True)
    for name, pairs in series.items():
        safe = name.replace("/", "_").replace(":", "_").replace("#", "_")
        target = os.path.join(plot_dir, f"{safe}.csv")
        with open(target, "w", newline="\n") as fh:
            fh.write("t,value\n")
            for t, v in pairs:
                fh.write(f"{t},{v}\n")
    print(f"plot data written to {plot_dir}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="monotone-sdi",
        description="simulate stochastic monotone inclusions and verify "
                    "their convergence bounds")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="validate a scenario file")
    p_val.add_argument("--scenario", required=True)
    p_val.set_defaults(func=_cmd_validate)

    p_run = sub.add_parser("run", help="run an ensemble with its checks")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--seed", type=int, default=None,
                       help="override ensemble.master_seed")
    p_run.add_argument("--paths", type=int, default=None,
                       help="override ensemble.n_paths")
    p_run.add_argument("--out", default=None,
                       help="override the output directory")
    p_run.set_defaults(func=_cmd_run)

    p_rep = sub.add_parser("report", help="re-emit the summary of a past run")
    p_rep.add_argument("--in", required=True)
    p_rep.add_argument("--plot-data", action="store_true")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        loc = f" (line {exc.line}, col {exc.col})" if exc.line else ""
        print(f"parse error{loc}: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except MonotoneSDIError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
