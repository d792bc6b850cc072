"""Benchmark command line: runs an experiment sweep, writes the CSV report
and optionally renders SVG figures next to it."""

from __future__ import annotations

import argparse
import sys

from .bench import (
    CSV_HEADER,
    default_deltas,
    fit_slope,
    run_convergence,
    run_robustness,
)
from .enrich import VARIANT_TAGS
from .experiments import define_experiment
from .quadrature import QuadOptions

DEFAULT_NS = "5,10,20,40,80"
DEFAULT_METHODS = "iga,giga-star,sgiga2"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cutiga",
                                description="Unfitted interface benchmarks for "
                                            "quadratic isogeometric analysis")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment sweep")
    run.add_argument("--example", required=True,
                     choices=["line", "circle", "arc", "robustness"])
    run.add_argument("--methods", default=DEFAULT_METHODS,
                     help=f"comma list from {','.join(VARIANT_TAGS)}")
    run.add_argument("--n", default=DEFAULT_NS,
                     help="comma list of mesh sizes (robustness uses the first)")
    run.add_argument("--a0", type=float, default=10.0)
    run.add_argument("--a1", type=float, default=1.0)
    run.add_argument("--deltas", default="auto",
                     help="'auto' for 0.05*2^-j, j=1..20, or a comma list")
    run.add_argument("--quad-depth", type=int, default=5)
    run.add_argument("--gauss", type=int, default=3)
    run.add_argument("--include-coarsest", action="store_true",
                     help="keep the coarsest mesh in the slope fits")
    run.add_argument("--no-scn", action="store_true",
                     help="skip eigenvalue computations")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", default="results.csv")
    run.add_argument("--svg", default=None, metavar="DIR",
                     help="also render SVG figures into DIR")
    return p


def _parse_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _slope_summary(records, methods, include_coarsest: bool) -> list[str]:
    lines = []
    for m in methods:
        recs = [r for r in records if r.method == m and not r.failed]
        for quantity in ("l2_error", "h1_error", "scn"):
            try:
                slope, _, r2 = fit_slope(recs, quantity,
                                         exclude_coarsest=not include_coarsest)
            except (ValueError, KeyError):
                continue
            lines.append(f"{m:12s} {quantity:9s} slope {slope:+.3f}  (R^2 {r2:.4f})")
    return lines


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in VARIANT_TAGS:
            print(f"unknown method {m!r}", file=sys.stderr)
            return 2
    quad = QuadOptions(gauss=args.gauss, depth=args.quad_depth)

    rows_out = []

    def stream(record):
        rows_out.append(record)
        print(record.csv_row())

    print(CSV_HEADER)
    if args.example == "robustness":
        deltas = default_deltas() if args.deltas == "auto" else _parse_floats(args.deltas)
        n = int(args.n.split(",")[0]) if args.n else 20
        records = run_robustness(args.a0, args.a1, methods, deltas, N=n,
                                 quad=quad, workers=args.workers, on_record=stream)
    else:
        exp = define_experiment(args.example, args.a0, args.a1)
        Ns = sorted(int(x) for x in args.n.split(",") if x.strip())
        records = run_convergence(exp, methods, Ns, quad=quad,
                                  compute_scn=not args.no_scn,
                                  workers=args.workers, on_record=stream)
        for line in _slope_summary(records, methods, args.include_coarsest):
            print("# " + line)

    from .bench import write_csv

    write_csv(records, args.out)
    if args.svg:
        from .plots import render_report

        for path in render_report(records, args.example, args.svg):
            print(f"# wrote {path}")
    failed = [r for r in records if r.failed]
    if failed:
        print(f"# {len(failed)} cell(s) failed", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
