"""Command line for rendering run outputs to image files."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .io import SchemaError
from .plots import FigureSpec, plot_convergence, plot_field, plot_timeseries


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="thermalsw-figures")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ts = sub.add_parser("timeseries", help="conservation-error time series")
    p_ts.add_argument("inputs", nargs="+", help="diagnostics CSV files")
    p_ts.add_argument("--column", default="tracer_variance")
    p_ts.add_argument("--absolute", action="store_true",
                      help="plot raw values instead of normalised drift")
    p_ts.add_argument("--out", required=True)

    p_cv = sub.add_parser("convergence", help="log-log error plot with slopes")
    p_cv.add_argument("inputs", nargs=1, help="convergence.csv from the solver")
    p_cv.add_argument("--out", required=True)

    p_fd = sub.add_parser("field", help="filled-contour snapshot panels")
    p_fd.add_argument("inputs", nargs="+", help="snapshot files")
    p_fd.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "timeseries":
            spec = FigureSpec(args.inputs, Path(args.out), column=args.column,
                              relative=not args.absolute)
            plot_timeseries(spec)
        elif args.command == "convergence":
            spec = FigureSpec(args.inputs, Path(args.out))
            slopes = plot_convergence(spec)
            for name, slope in slopes.items():
                print(f"{name}: slope {slope:.17g}")
        elif args.command == "field":
            plot_field(FigureSpec(args.inputs, Path(args.out)))
    except (SchemaError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
