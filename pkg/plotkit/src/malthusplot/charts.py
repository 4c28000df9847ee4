"""Chart rendering: throughput curves and fairness panels.

Every render also writes a sidecar text dump of the plotted values next to
the image (out_path + ".points.txt").  The dump, not the image bytes, is the
golden-test surface: it is a pure function of the CSV content.
"""

from __future__ import annotations

from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .tables import SeriesTable  # noqa: E402

FAIRNESS_METRICS = ["avg_lwss", "mttr", "gini"]


def _fmt(value) -> str:
    return f"{value:.6g}"


def _sidecar_path(out_path: str) -> str:
    return out_path + ".points.txt"


def render_throughput_chart(csv_path: str, benchmark: str, out_path: str) -> str:
    """Total throughput vs thread count (log-2 X), one series per lock."""
    table = SeriesTable.from_csv(csv_path)
    series = table.series(benchmark)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    dump_lines = [f"# throughput {benchmark}"]
    for lock in sorted(series):
        rows = series[lock]
        xs = [r.threads for r in rows]
        ys = [r.total_ops for r in rows]
        ax.plot(xs, ys, marker="o", label=lock)
        dump_lines.append(f"series {lock}")
        dump_lines.extend(f"{x} {_fmt(y)}" for x, y in zip(xs, ys))
    ax.set_xscale("log", base=2)
    ax.set_xlabel("threads")
    ax.set_ylabel("total ops")
    ax.set_title(f"{benchmark}: aggregate throughput")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)

    sidecar = _sidecar_path(out_path)
    with open(sidecar, "w") as fh:
        fh.write("\n".join(dump_lines) + "\n")
    return sidecar


def render_fairness_panel(csv_path: str, benchmark: str, out_path: str,
                          threads: Optional[int] = None) -> str:
    """Bar panel of avg LWSS, MTTR and Gini per lock at one thread count
    (the highest available when not specified)."""
    table = SeriesTable.from_csv(csv_path)
    rows = table.for_benchmark(benchmark)
    available = sorted({r.threads for r in rows})
    chosen = threads if threads is not None else available[-1]
    at_count = [r for r in rows if r.threads == chosen]
    if not at_count:
        raise ValueError(
            f"no rows for benchmark {benchmark!r} at {chosen} threads; "
            f"available thread counts: {available}")
    at_count.sort(key=lambda r: r.lock)

    fig, axes = plt.subplots(1, len(FAIRNESS_METRICS), figsize=(10, 3.6))
    dump_lines = [f"# fairness {benchmark} threads={chosen}"]
    locks = [r.lock for r in at_count]
    for ax, metric in zip(axes, FAIRNESS_METRICS):
        heights = [r.values.get(metric) or 0.0 for r in at_count]
        ax.bar(range(len(locks)), heights)
        ax.set_xticks(range(len(locks)))
        ax.set_xticklabels(locks, rotation=30, ha="right")
        ax.set_title(metric)
        if metric == "gini":
            ax.set_ylim(0.0, 1.0)
    for row in at_count:
        for metric in FAIRNESS_METRICS:
            value = row.values.get(metric)
            dump_lines.append(
                f"{row.lock} {metric} "
                f"{_fmt(value) if value is not None else 'NA'}")
    fig.suptitle(f"{benchmark}: fairness at {chosen} threads")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)

    sidecar = _sidecar_path(out_path)
    with open(sidecar, "w") as fh:
        fh.write("\n".join(dump_lines) + "\n")
    return sidecar
