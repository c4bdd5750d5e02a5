"""Batch figure renderer: svid-figs --kind <kind> --in <csv> --out <image>."""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, FigureSpec, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="svid-figs", description="Regenerate study figures from CSV logs")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="input_path", required=True,
                        help="input CSV (trace_run*.csv, rates.csv, or ensemble.csv)")
    parser.add_argument("--out", dest="output_path", required=True,
                        help="output image path (png/pdf/svg)")
    args = parser.parse_args(argv)
    try:
        result = render(FigureSpec(kind=args.kind, input_path=args.input_path,
                                   output_path=args.output_path))
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {result.output_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
