"""Command line entry point: soibag-viz plot <kind> <log> -o <file>."""

import argparse
import json
import sys

from .errors import MissingRecords, UnknownPlotKind, VizError
from .plots import PLOT_KINDS, PlotJob, render


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="soibag-viz", description="Render figures from soibag run logs."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    plot = sub.add_parser("plot", help="render one figure from a run log")
    plot.add_argument("kind", choices=PLOT_KINDS, help="figure kind")
    plot.add_argument("log", help="path to run.log.jsonl")
    plot.add_argument("-o", "--out", required=True, help="output image path")
    plot.add_argument("--dpi", type=int, default=150)
    plot.add_argument("--title", default=None)
    return parser


def _fail(exc, code):
    json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None):
    args = _build_parser().parse_args(argv)
    style = {"dpi": args.dpi}
    if args.title is not None:
        style["title"] = args.title
    try:
        job = PlotJob(log_path=args.log, kind=args.kind, out_path=args.out,
                      style=style)
        out = render(job)
    except UnknownPlotKind as exc:
        return _fail(exc, 2)
    except MissingRecords as exc:
        return _fail(exc, 4)
    except VizError as exc:
        return _fail(exc, 5)
    print(json.dumps({"out": str(out), "kind": args.kind}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
