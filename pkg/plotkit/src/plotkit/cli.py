"""Command-line figure rendering: ``plotkit --kind tsd --in tsd_road.csv --out tsd.svg``."""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_KINDS, FigureSpec, load_color_map, render

KIND_ALIASES = {
    "tsd": "tsd_stack",
    "tsd_stack": "tsd_stack",
    "scatter": "scatter",
    "heatmap": "heatmap",
    "loss": "loss_curves",
    "loss_curves": "loss_curves",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plotkit", description=__doc__)
    parser.add_argument("--kind", required=True, choices=sorted(KIND_ALIASES))
    parser.add_argument("--in", dest="inputs", required=True, nargs="+",
                        help="input CSV file(s)")
    parser.add_argument("--out", required=True, help="output image (svg/pdf/png)")
    parser.add_argument("--colors", default=None,
                        help="class-table YAML providing the class color map")
    parser.add_argument("--x-col", default=None)
    parser.add_argument("--y-col", default=None)
    parser.add_argument("--where", default=None, metavar="COL=VALUE",
                        help="keep only rows where a column equals a value")
    parser.add_argument("--reference", type=float, default=0.7,
                        help="dotted reference line position (scatter)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    where = {}
    if args.where:
        key, _, value = args.where.partition("=")
        where[key] = value
    spec = FigureSpec(
        kind=KIND_ALIASES[args.kind],
        out=args.out,
        colors=load_color_map(args.colors) if args.colors else None,
        x_col=args.x_col,
        y_col=args.y_col,
        where=where,
        reference=args.reference,
    )
    result = render(spec, args.inputs)
    print(f"wrote {result.path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
