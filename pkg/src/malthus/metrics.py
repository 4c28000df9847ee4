"""Admission-history recording and fairness/throughput metrics.

The short-term fairness measures operate on the admission history of a lock:
the sequence of thread ids in ordinal acquisition order.  avg_lwss is the
mean number of distinct threads per fixed-size window of admissions; mttr is
the median count of intervening admissions between a thread's consecutive
acquisitions.  Long-term fairness uses the Gini coefficient and relative
standard deviation of per-thread completed-operation counts.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import List, Sequence


class CorruptHistoryError(ValueError):
    """Merged per-thread buffers do not form a contiguous admission order."""


@dataclass
class AdmissionHistory:
    """Thread ids in admission order; index == global admission ordinal."""

    thread_ids: List[int]
    thread_count: int

    def __len__(self) -> int:
        return len(self.thread_ids)

    def records(self):
        """(ordinal, thread_id) pairs, ordinal-ascending."""
        return enumerate(self.thread_ids)

    def per_thread_counts(self) -> List[int]:
        counts = [0] * self.thread_count
        for tid in self.thread_ids:
            counts[tid] += 1
        return counts


class AdmissionRecorder:
    """Collects (thread, ordinal) admissions with minimal probe effect.

    record() must be called while holding the lock being measured: the lock
    itself serializes the ordinal counter, and each thread appends to its own
    buffer.  When max_records is exceeded, recording stops (the run itself
    continues) and the disabled flag is set.
    """

    def __init__(self, thread_count: int, max_records: int = 5_000_000) -> None:
        if thread_count < 1:
            raise ValueError("thread_count must be >= 1")
        self._buffers: List[List[int]] = [[] for _ in range(thread_count)]
        self._next = 0
        self._max = max_records
        self.disabled = False

    def record(self, thread_id: int) -> int:
        ordinal = self._next
        self._next = ordinal + 1
        if not self.disabled:
            if ordinal < self._max:
                self._buffers[thread_id].append(ordinal)
            else:
                self.disabled = True
        return ordinal

    def total(self) -> int:
        return self._next

    def buffers(self) -> List[List[int]]:
        return self._buffers

    def history(self) -> AdmissionHistory:
        return merge(self._buffers)


def merge(buffers: Sequence[Sequence[int]]) -> AdmissionHistory:
    """Merge per-thread ordinal buffers into one history, sorted by ordinal.

    All threads must be quiesced.  Raises CorruptHistoryError on duplicate or
    missing ordinals.
    """
    total = sum(len(b) for b in buffers)
    ids = [-1] * total
    for tid, buf in enumerate(buffers):
        for ordinal in buf:
            if not 0 <= ordinal < total:
                raise CorruptHistoryError(
                    f"ordinal {ordinal} outside contiguous range 0..{total - 1}")
            if ids[ordinal] != -1:
                raise CorruptHistoryError(f"duplicate ordinal {ordinal}")
            ids[ordinal] = tid
    # total slots and total records match, so no slot can remain unset
    return AdmissionHistory(ids, len(buffers))


def avg_lwss(history: AdmissionHistory, window: int) -> float:
    """Mean distinct-thread count over disjoint abutting admission windows.

    A trailing partial window is dropped unless it is the only window.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    ids = history.thread_ids
    n = len(ids)
    if n == 0:
        raise ValueError("empty history")
    if n < window:
        return float(len(set(ids)))
    sizes = [len(set(ids[i:i + window])) for i in range(0, n - window + 1, window)]
    return sum(sizes) / len(sizes)


def mttr(history: AdmissionHistory) -> float:
    """Median time to reacquire, in intervening admissions by other threads.

    Each admission by a thread with a prior admission contributes one sample
    (exclusive count: a round-robin over n threads yields n-1).  Raises if no
    thread ever reacquires.
    """
    samples = []
    last_seen: dict = {}
    for i, tid in enumerate(history.thread_ids):
        prev = last_seen.get(tid)
        if prev is not None:
            samples.append(i - prev - 1)
        last_seen[tid] = i
    if not samples:
        raise ValueError("no thread reacquired; median undefined")
    return statistics.median(samples)


def gini(per_thread_counts: Sequence[int]) -> float:
    """Gini coefficient of per-thread counts: 0 is ideally fair, 1 maximally
    unfair.  G = sum_ij |x_i - x_j| / (2 * n * sum x)."""
    n = len(per_thread_counts)
    if any(c < 0 for c in per_thread_counts):
        raise ValueError("counts must be non-negative")
    total = sum(per_thread_counts)
    if n <= 1 or total == 0:
        return 0.0
    xs = sorted(per_thread_counts)
    pairwise = 2 * sum((2 * k - n + 1) * x for k, x in enumerate(xs))
    return pairwise / (2 * n * total)


def rstddev(per_thread_counts: Sequence[int]) -> float:
    """Population standard deviation of the counts divided by their mean."""
    n = len(per_thread_counts)
    total = sum(per_thread_counts)
    if n == 0 or total == 0:
        raise ValueError("rstddev undefined for zero mean")
    # sqrt(n*sum(x^2) - S^2) / S is pstdev/mean with one exact radicand
    radicand = n * sum(x * x for x in per_thread_counts) - total * total
    return math.sqrt(radicand) / total


def saturation_threads(ncs_cost: float, cs_cost: float) -> int:
    """Minimum thread count that keeps the critical section continuously
    occupied under the idealized model: floor((ncs + cs) / cs)."""
    if cs_cost <= 0:
        raise ValueError("cs_cost must be positive")
    return math.floor((ncs_cost + cs_cost) / cs_cost)


def absence_gaps(history: AdmissionHistory) -> List[int]:
    """Longest run of admissions each thread is absent from (leading and
    trailing runs included).  A thread misses some W-window iff its gap >= W."""
    n = len(history.thread_ids)
    first = [None] * history.thread_count
    last = [None] * history.thread_count
    gaps = [0] * history.thread_count
    for i, tid in enumerate(history.thread_ids):
        if first[tid] is None:
            first[tid] = i
        else:
            gaps[tid] = max(gaps[tid], i - last[tid] - 1)
        last[tid] = i
    for tid in range(history.thread_count):
        if first[tid] is None:
            gaps[tid] = n
        else:
            gaps[tid] = max(gaps[tid], first[tid], n - 1 - last[tid])
    return gaps


@dataclass
class FairnessReport:
    """Fairness metrics for one run."""

    avg_lwss: float
    mttr: float
    gini: float
    rstddev: float
    per_thread_counts: List[int] = field(default_factory=list)


def fairness_report(history: AdmissionHistory, window: int,
                    per_thread_counts: Sequence[int] | None = None) -> FairnessReport:
    """Assemble the standard report; counts default to per-thread admissions."""
    counts = list(per_thread_counts) if per_thread_counts is not None \
        else history.per_thread_counts()
    return FairnessReport(
        avg_lwss=avg_lwss(history, window),
        mttr=mttr(history),
        gini=gini(counts),
        rstddev=rstddev(counts),
        per_thread_counts=counts,
    )


def dump_history(history: AdmissionHistory, path: str) -> None:
    """Write one "ordinal,thread_id" line per admission."""
    with open(path, "w") as fh:
        for ordinal, tid in history.records():
            fh.write(f"{ordinal},{tid}\n")
