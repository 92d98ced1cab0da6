"""Command line entry points: ``odefilt-plots convergence|surface``."""

from __future__ import annotations

import argparse
import sys

from odefilt_plots.render import (
    DEFAULT_THINNING,
    METRICS,
    PlotJob,
    SchemaError,
    plot_convergence,
    plot_likelihood_surface,
)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="odefilt-plots",
        description="Render figures from odefilt CSV outputs",
    )
    sub = p.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("convergence", help="metric-vs-iteration overlay")
    conv.add_argument("traces", nargs="+", help="trace CSVs from `odefilt infer`")
    conv.add_argument("--labels", help="comma-separated series labels "
                                       "(default: file stems)")
    conv.add_argument("--metrics", default=",".join(METRICS),
                      help="comma-separated subset of E,rel_err")
    conv.add_argument("--linear-e", action="store_true",
                      help="linear (not log) E axis")
    conv.add_argument("--linear-rel-err", action="store_true",
                      help="linear (not log) rel_err axis")
    conv.add_argument("--thinning", type=int, default=DEFAULT_THINNING,
                      help="marker every k-th iteration (default %(default)s)")
    conv.add_argument("--title", default="")
    conv.add_argument("--output", required=True, help="PNG/SVG path")

    surf = sub.add_parser("surface", help="aware/unaware contour pair")
    surf.add_argument("csv", help="surface CSV from `odefilt sweep surface`")
    surf.add_argument("--truth", help="a,b coordinates for the cross marker")
    surf.add_argument("--output", required=True, help="PNG/SVG path")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "convergence":
            if args.labels:
                labels = tuple(args.labels.split(","))
            else:
                labels = tuple(t.rsplit("/", 1)[-1].rsplit(".", 1)[0]
                               for t in args.traces)
            job = PlotJob(
                traces=tuple(args.traces),
                labels=labels,
                output=args.output,
                metrics=tuple(args.metrics.split(",")),
                log_E=not args.linear_e,
                log_rel_err=not args.linear_rel_err,
                thinning=args.thinning,
                title=args.title,
            )
            print(plot_convergence(job))
        else:
            truth = None
            if args.truth:
                a, b = args.truth.split(",")
                truth = (float(a), float(b))
            print(plot_likelihood_surface(args.csv, args.output, truth=truth))
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
