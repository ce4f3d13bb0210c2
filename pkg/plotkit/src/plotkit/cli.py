"""CLI: render figures from a JSON spec (``plot --spec fig.json``)."""

from __future__ import annotations

import argparse
import sys

from .figures import render
from .io import PlotError, load_spec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot", description="Render figures from wolfpack metrics JSONL.")
    parser.add_argument("command", nargs="?", default="plot",
                        choices=["plot"], help=argparse.SUPPRESS)
    parser.add_argument("--spec", required=True,
                        help="JSON figure spec (inputs, grouping, output)")
    args = parser.parse_args(argv)
    try:
        spec = load_spec(args.spec)
        written = render(spec)
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
