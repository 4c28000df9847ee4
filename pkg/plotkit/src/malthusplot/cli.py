"""malthus-plot: render benchmark CSV results into figures."""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .charts import render_fairness_panel, render_throughput_chart


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="malthus-plot",
        description="Render malthus-bench CSV results into charts "
                    "(plus a sidecar dump of the plotted values).",
    )
    parser.add_argument("--csv", required=True, help="benchmark results CSV")
    parser.add_argument("--benchmark", required=True)
    parser.add_argument("--kind", required=True,
                        choices=["throughput", "fairness"])
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--threads", type=int, default=None,
                        help="thread count for the fairness panel "
                             "(default: highest present)")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.kind == "throughput":
            sidecar = render_throughput_chart(args.csv, args.benchmark, args.out)
        else:
            sidecar = render_fairness_panel(args.csv, args.benchmark, args.out,
                                            threads=args.threads)
    except (OSError, ValueError) as exc:
        print(f"malthus-plot: error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} and {sidecar}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
