"""Command line: ntkadv-plots render --spec <figure-spec.json>."""

from __future__ import annotations

import argparse
import sys

from .render import render
from .spec import SchemaError, load_spec


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ntkadv-plots",
        description="Render figures from ntkadv experiment outputs")
    sub = parser.add_subparsers(dest="command", required=True)
    render_cmd = sub.add_parser("render", help="render one figure spec")
    render_cmd.add_argument("--spec", required=True,
                            help="JSON figure specification")
    args = parser.parse_args(argv)
    try:
        spec = load_spec(args.spec)
        render(spec)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
