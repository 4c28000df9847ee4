"""Parsing and shaping of malthus-bench CSV result files."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

NUMERIC_FIELDS = [
    "threads", "duration_s", "runs", "total_ops", "avg_lwss", "mttr", "gini",
    "rstddev", "park_count", "locks_per_message", "lru_miss_rate",
    "lru_other_evictions", "handover_ns",
]

INT_FIELDS = {"threads", "runs", "total_ops", "park_count"}


@dataclass
class Row:
    benchmark: str
    lock: str
    threads: int
    total_ops: float
    values: Dict[str, Optional[float]]


class SeriesTable:
    """Rows grouped by (benchmark, lock) and sorted by thread count.

    Duplicate (benchmark, lock, threads) rows collapse to the row carrying
    their median total_ops, so re-running a configuration refines rather
    than distorts the chart.
    """

    def __init__(self, rows: List[Row]) -> None:
        grouped: Dict[Tuple[str, str, int], List[Row]] = {}
        for row in rows:
            grouped.setdefault((row.benchmark, row.lock, row.threads),
                               []).append(row)
        collapsed = []
        for dupes in grouped.values():
            dupes.sort(key=lambda r: r.total_ops)
            collapsed.append(dupes[len(dupes) // 2])
        collapsed.sort(key=lambda r: (r.benchmark, r.lock, r.threads))
        self.rows = collapsed

    @classmethod
    def from_csv(cls, path: str) -> "SeriesTable":
        rows = []
        with open(path, newline="") as fh:
            for record in csv.DictReader(fh):
                values: Dict[str, Optional[float]] = {}
                for field in NUMERIC_FIELDS:
                    raw = (record.get(field) or "").strip()
                    if raw == "":
                        values[field] = None
                        continue
                    values[field] = float(raw)  # raises on malformed input
                if values["threads"] is None or values["total_ops"] is None:
                    raise ValueError(f"row missing threads/total_ops: {record}")
                rows.append(Row(
                    benchmark=record["benchmark"],
                    lock=record["lock"],
                    threads=int(values["threads"]),
                    total_ops=values["total_ops"],
                    values=values,
                ))
        return cls(rows)

    def benchmarks(self) -> List[str]:
        return sorted({r.benchmark for r in self.rows})

    def for_benchmark(self, benchmark: str) -> List[Row]:
        rows = [r for r in self.rows if r.benchmark == benchmark]
        if not rows:
            known = ", ".join(self.benchmarks()) or "(none)"
            raise ValueError(
                f"no rows for benchmark {benchmark!r}; available: {known}")
        return rows

    def series(self, benchmark: str) -> Dict[str, List[Row]]:
        """lock -> rows sorted by threads."""
        result: Dict[str, List[Row]] = {}
        for row in self.for_benchmark(benchmark):
            result.setdefault(row.lock, []).append(row)
        return result
