"""Command-line entry point: render one or more FigureSpec JSON files."""

import argparse
import json
import sys

from .render import SchemaError, render_figure
from . import __version__


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="clg-figures",
        description="Render figures from FigureSpec JSON files "
                    "(as emitted by `clg plot-data`)")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("specs", nargs="+", metavar="SPEC.json",
                   help="FigureSpec JSON file")
    p.add_argument("--out", help="override the spec's output image path "
                                 "(single spec only)")
    args = p.parse_args(argv)
    if args.out and len(args.specs) > 1:
        print("error: --out only applies to a single spec", file=sys.stderr)
        return 2
    status = 0
    for spec_path in args.specs:
        try:
            spec = json.loads(open(spec_path).read())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: {spec_path}: {exc}", file=sys.stderr)
            status = 1
            continue
        if args.out:
            spec["output"] = args.out
        try:
            print(render_figure(spec))
        except SchemaError as exc:
            print(f"error: {exc}", file=sys.stderr)
            status = 1
    return status


if __name__ == "__main__":
    sys.exit(main())
