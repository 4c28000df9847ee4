"""Command-line entry point for the benchmark harness.

Exit codes: 0 success, 1 configuration error, 2 runtime error,
3 invariant violation.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .bench import (
    BENCHMARKS,
    PAPER_ARRAY_ELEMS,
    PAPER_BUFFER_SLOTS,
    PAPER_DURATION,
    BenchConfig,
    ConfigError,
    InvariantViolation,
    run_suite,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # config errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="malthus-bench",
        description="Contended-lock benchmark harness with fairness metrics.",
    )
    parser.add_argument("--benchmark", default="randarray",
                        choices=sorted(BENCHMARKS))
    parser.add_argument("--lock", default="mcs-stp",
                        help="lock name with optional -s/-stp/-p policy suffix")
    parser.add_argument("--threads", type=int, default=4)
    parser.add_argument("--duration", type=float, default=None,
                        help="seconds per run (desk default 2, paper scale 10)")
    parser.add_argument("--runs", type=int, default=7,
                        help="odd run count; the median by total ops is kept")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--window", type=int, default=1000,
                        help="admission window for average LWSS")
    parser.add_argument("--fairness-denom", type=int, default=1000,
                        help="1-in-D fairness trials for the CR locks")
    parser.add_argument("--cv-append-denom", type=int, default=1,
                        help="wait-queue append denominator: 1 FIFO, 0 pure "
                             "LIFO, 1000 mostly-LIFO")
    parser.add_argument("--csv", default=None, help="append result row here")
    parser.add_argument("--dump-history", default=None,
                        help="write the kept run's admission history here")
    parser.add_argument("--array-elems", type=int, default=None)
    parser.add_argument("--ring-elems", type=int, default=50)
    parser.add_argument("--key-range", type=int, default=None)
    parser.add_argument("--pool-size", type=int, default=5)
    parser.add_argument("--queue-bound", type=int, default=10_000)
    parser.add_argument("--buffer-slots", type=int, default=None)
    parser.add_argument("--lru-capacity", type=int, default=10_000)
    parser.add_argument("--paper-scale", action="store_true",
                        help="use the full-size durations and footprints")
    return parser


def config_from_args(args: argparse.Namespace) -> BenchConfig:
    paper = args.paper_scale
    cfg = BenchConfig(
        benchmark=args.benchmark,
        lock=args.lock,
        threads=args.threads,
        duration=args.duration if args.duration is not None
        else (PAPER_DURATION if paper else BenchConfig.duration),
        runs=args.runs,
        seed=args.seed,
        window=args.window,
        fairness_denom=args.fairness_denom,
        cv_append_denom=args.cv_append_denom,
        array_elems=args.array_elems if args.array_elems is not None
        else (PAPER_ARRAY_ELEMS if paper else BenchConfig.array_elems),
        ring_elems=args.ring_elems,
        key_range=args.key_range,
        pool_size=args.pool_size,
        queue_bound=args.queue_bound,
        buffer_slots=args.buffer_slots if args.buffer_slots is not None
        else (PAPER_BUFFER_SLOTS if paper else BenchConfig.buffer_slots),
        lru_capacity=args.lru_capacity,
        paper_scale=paper,
        csv_path=args.csv,
        dump_history_path=args.dump_history,
    )
    cfg.validate()
    return cfg


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = config_from_args(args)
    except SystemExit as exc:
        return exc.code or 0
    except ConfigError as exc:
        print(f"malthus-bench: config error: {exc}", file=sys.stderr)
        return 1
    try:
        result = run_suite(cfg)
    except InvariantViolation as exc:
        print(f"malthus-bench: invariant violation: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"malthus-bench: runtime error: {exc}", file=sys.stderr)
        return 2
    fairness = result.fairness
    parts = [
        f"benchmark={result.benchmark}", f"lock={result.lock}",
        f"threads={result.threads}", f"total_ops={result.total_ops}",
    ]
    if fairness is not None:
        parts += [
            f"avg_lwss={fairness.avg_lwss:.2f}", f"mttr={fairness.mttr:.1f}",
            f"gini={fairness.gini:.4f}", f"rstddev={fairness.rstddev:.4f}",
        ]
    if result.locks_per_message is not None:
        parts.append(f"locks_per_message={result.locks_per_message:.3f}")
    if result.lru_miss_rate is not None:
        parts.append(f"lru_miss_rate={result.lru_miss_rate:.4f}")
    if result.handover_ns is not None:
        parts.append(f"handover_ns={result.handover_ns:.0f}")
    print(" ".join(parts))
    if cfg.csv_path:
        print(f"csv row appended to {cfg.csv_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
