"""Closed-loop contention benchmarks and the fixed-time measurement harness.

Methodology: all worker threads start behind a barrier, run concurrently for
the configured duration (fixed-time, report-work), and check a shared stop
flag once per outer iteration.  Admissions are recorded inside the critical
section; per-thread buffers are merged after quiesce into the fairness
report.  A watchdog bounds every run at duration plus a grace period.
"""

from __future__ import annotations

import csv
import os
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import platform
from .coordination import CondVar, CRSemaphore
from .locks import make_lock
from .metrics import (
    AdmissionHistory,
    AdmissionRecorder,
    FairnessReport,
    dump_history,
    fairness_report,
)
from .platform import XorShift64, current_parker, set_thread_index, splitmix64
from .softlru import SoftLRUCache


class ConfigError(ValueError):
    """Invalid benchmark configuration (CLI exit code 1)."""


class BenchTimeout(RuntimeError):
    """A run failed to quiesce within duration + grace (exit code 2)."""


class InvariantViolation(AssertionError):
    """A workload conservation or exclusion check failed (exit code 3)."""


CONSUMER_THREADS = 3          # fixed consumer count for producer-consumer
DELAY_CS_ITERS = 200          # delay-stress critical section iterations
DELAY_NCS_ITERS = 5000        # delay-stress non-critical iterations
RING_PAGE_BYTES = 8192
KEYSET_SIZE = 1000
KEYMAP_REPLACE_DENOM = 10     # fresh key 1-in-10 (reuse probability 0.9)
LRU_REPLACE_DENOM = 100       # fresh key 1-in-100
LRU_KEY_RANGE = 1_000_000

DESK_DURATION, PAPER_DURATION = 2.0, 10.0
DESK_ARRAY_ELEMS, PAPER_ARRAY_ELEMS = 16_384, 262_144
DESK_KEYMAP_RANGE, PAPER_KEYMAP_RANGE = 100_000, 10_000_000
DESK_BUFFER_SLOTS, PAPER_BUFFER_SLOTS = 16_384, 262_144


@dataclass
class BenchConfig:
    benchmark: str = "randarray"
    lock: str = "mcs-stp"
    threads: int = 4
    duration: float = DESK_DURATION
    runs: int = 7
    seed: int = 42
    window: int = 1000
    fairness_denom: int = 1000
    cv_append_denom: int = 1
    array_elems: int = DESK_ARRAY_ELEMS
    ring_elems: int = 50
    key_range: Optional[int] = None   # per-benchmark default when None
    pool_size: int = 5
    queue_bound: int = 10_000
    buffer_slots: int = DESK_BUFFER_SLOTS
    lru_capacity: int = 10_000
    paper_scale: bool = False
    csv_path: Optional[str] = None
    dump_history_path: Optional[str] = None

    def validate(self) -> None:
        if self.benchmark not in BENCHMARKS:
            known = ", ".join(sorted(BENCHMARKS))
            raise ConfigError(f"unknown benchmark {self.benchmark!r}; known: {known}")
        try:
            make_lock(self.lock, self.fairness_denom)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.runs < 1 or self.runs % 2 == 0:
            raise ConfigError("runs must be a positive odd count")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.fairness_denom < 1:
            raise ConfigError("fairness denominator must be >= 1")
        if self.cv_append_denom < 0:
            raise ConfigError("cv append denominator must be >= 0")
        for name in ("array_elems", "ring_elems", "pool_size", "queue_bound",
                     "buffer_slots", "lru_capacity"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.key_range is not None and self.key_range < 1:
            raise ConfigError("key_range must be >= 1")

    def keymap_key_range(self) -> int:
        if self.key_range is not None:
            return self.key_range
        return PAPER_KEYMAP_RANGE if self.paper_scale else DESK_KEYMAP_RANGE

    def lru_key_range(self) -> int:
        return self.key_range if self.key_range is not None else LRU_KEY_RANGE


@dataclass
class BenchResult:
    benchmark: str
    lock: str
    threads: int
    duration: float
    runs: int = 1
    total_ops: int = 0
    per_thread_ops: List[int] = field(default_factory=list)
    fairness: Optional[FairnessReport] = None
    park_count: int = 0
    locks_per_message: Optional[float] = None
    lru_miss_rate: Optional[float] = None
    lru_other_evictions: Optional[float] = None
    handover_ns: Optional[float] = None
    history: Optional[AdmissionHistory] = None
    extras: dict = field(default_factory=dict)


def worker_rng(seed: int, index: int) -> XorShift64:
    """Deterministic per-worker xorshift stream for a configured seed."""
    return XorShift64(splitmix64(seed) ^ splitmix64(index + 1))


def _numpy_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng((seed, index))


_WORKER_SWITCH_INTERVAL = 0.0002


def _run_workers(bodies: List[Callable], duration: float, grace: float = 10.0,
                 drain: Optional[Callable[[], None]] = None) -> None:
    """Start one thread per body behind a barrier, run for duration, then
    stop and join; `drain` is invoked repeatedly while stragglers quiesce.

    The interpreter switch interval is tightened for the run: the default
    5 ms quantum would serialize GIL-bound workers into long batches on a
    small host, while the methodology wants all threads running concurrently
    throughout the interval.
    """
    barrier = threading.Barrier(len(bodies) + 1)
    stop = threading.Event()
    errors: List[BaseException] = []
    old_interval = sys.getswitchinterval()

    def wrap(body):
        def run():
            try:
                barrier.wait()
                body(stop)
            except BaseException as exc:  # noqa: BLE001 - propagated below
                errors.append(exc)
                stop.set()
        return run

    threads = [threading.Thread(target=wrap(b), daemon=True) for b in bodies]
    sys.setswitchinterval(min(old_interval, _WORKER_SWITCH_INTERVAL))
    try:
        for t in threads:
            t.start()
        barrier.wait()
        stop.wait(duration)
        stop.set()
        deadline = time.perf_counter() + grace
        for t in threads:
            while t.is_alive():
                if drain is not None:
                    drain()
                t.join(timeout=0.01)
                if time.perf_counter() > deadline:
                    raise BenchTimeout(
                        "workers failed to quiesce within grace period")
    finally:
        sys.setswitchinterval(old_interval)
    if errors:
        raise errors[0]


def _assemble(cfg: BenchConfig, recorder: AdmissionRecorder, ops: List[int],
              parks: List[int], **aux) -> BenchResult:
    history = recorder.history()
    report = None
    if len(history):
        try:
            report = fairness_report(history, cfg.window, ops)
        except ValueError:
            report = None  # degenerate run: nothing reacquired
    return BenchResult(
        benchmark=cfg.benchmark,
        lock=cfg.lock,
        threads=cfg.threads,
        duration=cfg.duration,
        total_ops=sum(ops),
        per_thread_ops=list(ops),
        fairness=report,
        park_count=sum(parks),
        history=history,
        **aux,
    )


def _closed_loop(cfg: BenchConfig, setup: Callable[[int], tuple]) -> BenchResult:
    """Generic acquire/CS/release/NCS loop.  `setup(i)` returns (cs, ncs)
    callables built over thread-private state."""
    lock = make_lock(cfg.lock, cfg.fairness_denom)
    recorder = AdmissionRecorder(cfg.threads)
    ops = [0] * cfg.threads
    parks = [0] * cfg.threads

    def make_body(i):
        def body(stop):
            set_thread_index(i)
            platform.seed_thread_rng(cfg.seed, i)
            cs, ncs = setup(i)
            parker = current_parker()
            parks_before = parker.park_count
            acquire, release, record = lock.acquire, lock.release, recorder.record
            stopped = stop.is_set
            count = 0
            while not stopped():
                acquire()
                record(i)
                cs()
                release()
                ncs()
                count += 1
            ops[i] = count
            parks[i] = parker.park_count - parks_before
        return body

    _run_workers([make_body(i) for i in range(cfg.threads)], cfg.duration)
    return _assemble(cfg, recorder, ops, parks)


def run_randarray(cfg: BenchConfig) -> BenchResult:
    """CS: 100 random fetches from a shared array; NCS: 400 from a private
    array.  Loads only, uniformly random indices, thread-local generators."""
    n = cfg.array_elems
    shared = np.zeros(n, dtype=np.int32)

    def setup(i):
        rng = _numpy_rng(cfg.seed, i)
        private = np.zeros(n, dtype=np.int32)
        integers = rng.integers

        def cs():
            shared.take(integers(0, n, 100))

        def ncs():
            private.take(integers(0, n, 400))

        return cs, ncs

    return _closed_loop(cfg, setup)


class _RingElem:
    __slots__ = ("next_elem", "page", "offset")


def _build_ring(elems: int, rng: np.random.Generator):
    ring = []
    for _ in range(elems):
        e = _RingElem()
        e.page = bytes(RING_PAGE_BYTES)
        e.offset = int(rng.integers(0, RING_PAGE_BYTES))
        ring.append(e)
    for a, b in zip(ring, ring[1:] + ring[:1]):
        a.next_elem = b
    return ring[0]


def run_ringwalker(cfg: BenchConfig) -> BenchResult:
    """Pointer-chase over page-sized ring elements: 50 private steps in the
    NCS, 10 shared steps in the CS; cursors persist across iterations."""
    shared_cursor = [_build_ring(cfg.ring_elems, _numpy_rng(cfg.seed, 10_000))]

    def setup(i):
        private_cursor = [_build_ring(cfg.ring_elems, _numpy_rng(cfg.seed, i))]

        def cs():
            cur = shared_cursor[0]
            acc = 0
            for _ in range(10):
                acc += cur.page[cur.offset]
                cur = cur.next_elem
            shared_cursor[0] = cur

        def ncs():
            cur = private_cursor[0]
            acc = 0
            for _ in range(50):
                acc += cur.page[cur.offset]
                cur = cur.next_elem
            private_cursor[0] = cur

        return cs, ncs

    return _closed_loop(cfg, setup)


def _delay(iterations: int, x: int = 1) -> int:
    for _ in range(iterations):
        x = (x * 1103515245 + 12345) & 0xFFFFFFFF
    return x


def run_delaystress(cfg: BenchConfig) -> BenchResult:
    """Cycle-bound stress: CS runs 200 delay iterations, NCS 5000 (1:25)."""

    def setup(i):
        return (lambda: _delay(DELAY_CS_ITERS), lambda: _delay(DELAY_NCS_ITERS))

    return _closed_loop(cfg, setup)


class KeyedDraw:
    """Keyset-backed key source: mostly reuse a stored key, occasionally
    (1 in replace_denom) replace the slot with a fresh uniform key."""

    def __init__(self, rng: XorShift64, key_range: int, replace_denom: int,
                 keyset_size: int = KEYSET_SIZE) -> None:
        self._rng = rng
        self.key_range = key_range
        self.replace_denom = replace_denom
        self.keyset = [rng.next() % key_range for _ in range(keyset_size)]
        self.draws = 0
        self.fresh_draws = 0

    def next_key(self) -> int:
        rng = self._rng
        slot = rng.next() % len(self.keyset)
        self.draws += 1
        if rng.next() % self.replace_denom == 0:
            self.fresh_draws += 1
            key = self.keyset[slot] = rng.next() % self.key_range
        else:
            key = self.keyset[slot]
        return key


def _keyed_cs(cfg: BenchConfig, i: int, key_range: int, replace_denom: int,
              sink: Callable[[int, int], None]):
    draw = KeyedDraw(worker_rng(cfg.seed, i), key_range, replace_denom)

    def cs():
        sink(draw.next_key(), i)

    return cs


def run_keymap(cfg: BenchConfig) -> BenchResult:
    """CS updates a prefilled shared map at a mostly-reused key (P=0.9);
    NCS advances the thread-local generator 1000 times."""
    key_range = cfg.keymap_key_range()
    shared_map = dict.fromkeys(range(key_range), 0)

    def sink(key, tid):
        shared_map[key] = tid

    def setup(i):
        nrng = _numpy_rng(cfg.seed, i)
        cs = _keyed_cs(cfg, i, key_range, KEYMAP_REPLACE_DENOM, sink)
        return cs, lambda: nrng.random(KEYSET_SIZE)

    result = _closed_loop(cfg, setup)
    if len(shared_map) != key_range:
        raise InvariantViolation("update-only map grew beyond its prefill")
    return result


def run_lrucache(cfg: BenchConfig) -> BenchResult:
    """Keymap-shaped workload whose CS hits a shared software LRU cache,
    attributing evictions to installer threads."""
    key_range = cfg.lru_key_range()
    cache = SoftLRUCache(cfg.lru_capacity)

    def sink(key, tid):
        cache.lookup_or_install(key, tid)

    def setup(i):
        nrng = _numpy_rng(cfg.seed, i)
        cs = _keyed_cs(cfg, i, key_range, LRU_REPLACE_DENOM, sink)
        return cs, lambda: nrng.random(KEYSET_SIZE)

    result = _closed_loop(cfg, setup)
    stats = cache.displacement_stats()
    result.lru_miss_rate = stats.miss_rate
    # destructive interference per unit work: fraction of operations whose
    # install displaced another thread's entry
    result.lru_other_evictions = stats.other_evictions / max(result.total_ops, 1)
    result.extras["lru_stats"] = stats
    return result


def run_producer_consumer(cfg: BenchConfig) -> BenchResult:
    """Bounded blocking queue built from one mutex and two condition
    variables; cfg.threads producers feed 3 consumers.  Reports lock
    acquisitions per conveyed message."""
    producers = cfg.threads
    total = producers + CONSUMER_THREADS
    lock = make_lock(cfg.lock, cfg.fairness_denom)
    not_empty = CondVar(cfg.cv_append_denom)
    not_full = CondVar(cfg.cv_append_denom)
    queue: deque = deque()
    bound = cfg.queue_bound
    recorder = AdmissionRecorder(total)
    handled = [0] * total
    parks = [0] * total

    def make_producer(i):
        def body(stop):
            set_thread_index(i)
            platform.seed_thread_rng(cfg.seed, i)
            parker = current_parker()
            parks_before = parker.park_count
            stopped = stop.is_set
            while not stopped():
                lock.acquire()
                recorder.record(i)
                while len(queue) >= bound and not stopped():
                    not_full.wait(lock)
                if len(queue) >= bound:
                    lock.release()
                    break
                queue.append(i)
                handled[i] += 1
                not_empty.signal()
                lock.release()
            parks[i] = parker.park_count - parks_before
        return body

    def make_consumer(i):
        def body(stop):
            set_thread_index(i)
            platform.seed_thread_rng(cfg.seed, i)
            parker = current_parker()
            parks_before = parker.park_count
            stopped = stop.is_set
            while True:
                lock.acquire()
                recorder.record(i)
                while not queue and not stopped():
                    not_empty.wait(lock)
                if not queue:
                    lock.release()
                    break
                queue.popleft()
                handled[i] += 1
                not_full.signal()
                lock.release()
            parks[i] = parker.park_count - parks_before
        return body

    bodies = [make_producer(i) for i in range(producers)]
    bodies += [make_consumer(producers + k) for k in range(CONSUMER_THREADS)]

    def drain():
        not_empty.broadcast()
        not_full.broadcast()

    _run_workers(bodies, cfg.duration, drain=drain)

    produced = sum(handled[:producers])
    consumed = sum(handled[producers:])
    if produced - consumed != len(queue):
        raise InvariantViolation(
            f"message conservation broken: produced={produced} "
            f"consumed={consumed} queued={len(queue)}")
    result = _assemble(cfg, recorder, handled, parks)
    result.locks_per_message = (lock.acquire_count / consumed) if consumed else None
    result.total_ops = consumed
    result.extras["produced"] = produced
    result.extras["consumed"] = consumed
    return result


def run_bufferpool(cfg: BenchConfig, use_semaphore: bool = False) -> BenchResult:
    """Workers cycle buffers through a shared pool (take, exchange 500 slots,
    return, then 5000 private updates).  Waiting for a buffer goes through a
    NotEmpty condition variable, or a CR semaphore in semaphore mode."""
    slots = cfg.buffer_slots
    pool: deque = deque([0] * slots for _ in range(cfg.pool_size))
    lock = make_lock(cfg.lock, cfg.fairness_denom)
    recorder = AdmissionRecorder(cfg.threads)
    ops = [0] * cfg.threads
    parks = [0] * cfg.threads
    sem = CRSemaphore(cfg.pool_size, cfg.cv_append_denom, record_grants=True) \
        if use_semaphore else None
    not_empty = None if use_semaphore else \
        CondVar(cfg.cv_append_denom, record_grants=True)

    def make_body(i):
        def body(stop):
            set_thread_index(i)
            platform.seed_thread_rng(cfg.seed, i)
            rng = _numpy_rng(cfg.seed, i)
            private = np.zeros(slots, dtype=np.int32)
            parker = current_parker()
            parks_before = parker.park_count
            stopped = stop.is_set
            while not stopped():
                if sem is not None:
                    sem.wait()
                    lock.acquire()
                    recorder.record(i)
                    buf = pool.popleft() if pool else None
                    lock.release()
                else:
                    lock.acquire()
                    recorder.record(i)
                    while not pool and not stopped():
                        not_empty.wait(lock)
                    buf = pool.popleft() if pool else None
                    lock.release()
                if buf is None:
                    break  # stopped while the pool was dry
                for k in rng.integers(0, slots, 500):
                    buf[k], private[k] = int(private[k]), buf[k]
                lock.acquire()
                recorder.record(i)
                pool.append(buf)
                if len(pool) > cfg.pool_size:
                    raise InvariantViolation("more buffers returned than exist")
                if sem is not None:
                    lock.release()
                    sem.post()
                else:
                    not_empty.signal()
                    lock.release()
                private[rng.integers(0, slots, 5000)] = i
                ops[i] += 1
            parks[i] = parker.park_count - parks_before
        return body

    def drain():
        if sem is not None:
            sem.post()
        else:
            not_empty.broadcast()

    _run_workers([make_body(i) for i in range(cfg.threads)], cfg.duration,
                 drain=drain)
    result = _assemble(cfg, recorder, ops, parks)
    log = (sem.queue if sem is not None else not_empty.queue).grant_log
    result.extras["grant_log"] = list(log)
    result.extras["grant_distinct_per_100"] = grant_window_distinct(log, 100)
    return result


def run_bufferpool_sem(cfg: BenchConfig) -> BenchResult:
    return run_bufferpool(cfg, use_semaphore=True)


def grant_window_distinct(grant_log: List[int], window: int) -> Optional[float]:
    """Mean distinct grantees per abutting window of condvar/semaphore grants."""
    if not grant_log:
        return None
    if len(grant_log) < window:
        return float(len(set(grant_log)))
    sizes = [len(set(grant_log[i:i + window]))
             for i in range(0, len(grant_log) - window + 1, window)]
    return sum(sizes) / len(sizes)


def measure_handover(cfg: BenchConfig) -> BenchResult:
    """Median lock handover latency: the time from the owner's release entry
    to the successor's return from acquire, sampled over a saturated loop."""
    if cfg.threads < 2:
        raise ConfigError("handover measurement needs at least 2 threads")
    lock = make_lock(cfg.lock, cfg.fairness_denom)
    stamp = [0]
    sample_lists: List[List[int]] = [[] for _ in range(cfg.threads)]
    parks = [0] * cfg.threads
    clock = time.perf_counter_ns

    def make_body(i):
        def body(stop):
            set_thread_index(i)
            platform.seed_thread_rng(cfg.seed, i)
            parker = current_parker()
            parks_before = parker.park_count
            samples = sample_lists[i]
            stopped = stop.is_set
            while not stopped():
                lock.acquire()
                now = clock()
                prev = stamp[0]
                if prev:
                    samples.append(now - prev)
                stamp[0] = clock()
                lock.release()
            parks[i] = parker.park_count - parks_before
        return body

    _run_workers([make_body(i) for i in range(cfg.threads)], cfg.duration)
    merged = [v for lst in sample_lists for v in lst]
    merged = merged[len(merged) // 10:]  # shed warm-up jitter
    if not merged:
        raise RuntimeError("no handover samples collected")
    merged.sort()
    median = float(merged[len(merged) // 2])
    ops = [len(lst) for lst in sample_lists]
    return BenchResult(
        benchmark=cfg.benchmark, lock=cfg.lock, threads=cfg.threads,
        duration=cfg.duration, total_ops=sum(ops), per_thread_ops=ops,
        park_count=sum(parks), handover_ns=median,
        extras={"samples": len(merged)},
    )


BENCHMARKS = {
    "randarray": run_randarray,
    "ringwalker": run_ringwalker,
    "delaystress": run_delaystress,
    "producer-consumer": run_producer_consumer,
    "keymap": run_keymap,
    "lrucache": run_lrucache,
    "bufferpool": run_bufferpool,
    "bufferpool-sem": run_bufferpool_sem,
    "handover": measure_handover,
}


def run_benchmark(cfg: BenchConfig) -> BenchResult:
    """One run of the configured benchmark."""
    cfg.validate()
    return BENCHMARKS[cfg.benchmark](cfg)


def run_suite(cfg: BenchConfig) -> BenchResult:
    """Run the benchmark cfg.runs times, keep the median-by-total-ops run,
    and append it to the CSV (plus optional history dump)."""
    cfg.validate()
    results = [run_benchmark(cfg) for _ in range(cfg.runs)]
    results.sort(key=lambda r: r.total_ops)
    median = results[len(results) // 2]
    median.runs = cfg.runs
    if cfg.csv_path:
        emit_csv(median, cfg.csv_path)
    if cfg.dump_history_path and median.history is not None:
        dump_history(median.history, cfg.dump_history_path)
    return median


CSV_COLUMNS = [
    "benchmark", "lock", "threads", "duration_s", "runs", "total_ops",
    "avg_lwss", "mttr", "gini", "rstddev", "park_count", "locks_per_message",
    "lru_miss_rate", "lru_other_evictions", "handover_ns",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def emit_csv(result: BenchResult, path: str) -> None:
    """Append one row (writing the header first on a fresh file)."""
    fairness = result.fairness
    row = [
        result.benchmark, result.lock, result.threads, result.duration,
        result.runs, result.total_ops,
        fairness.avg_lwss if fairness else None,
        fairness.mttr if fairness else None,
        fairness.gini if fairness else None,
        fairness.rstddev if fairness else None,
        result.park_count, result.locks_per_message, result.lru_miss_rate,
        result.lru_other_evictions, result.handover_ns,
    ]
    try:
        fresh = not os.path.exists(path) or os.path.getsize(path) == 0
        with open(path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if fresh:
                writer.writerow(CSV_COLUMNS)
            writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise RuntimeError(f"cannot write csv {path!r}: {exc}") from exc
