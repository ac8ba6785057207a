"""CLI: plots render --spec <json>."""

from __future__ import annotations

import argparse
import sys

from .render import PlotSpec, render
from .schema import SchemaError


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plots", description="Render figures from ampcc CSV artifacts.")
    subs = parser.add_subparsers(dest="command", required=True)
    r = subs.add_parser("render")
    r.add_argument("--spec", required=True, help="plot spec JSON file")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = PlotSpec.from_json(args.spec)
        out = render(spec)
    except (SchemaError, OSError, KeyError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
