"""Thread parking, waiting policies, and the per-thread PRNG.

Everything here assumes CPython: attribute loads/stores on shared objects are
made atomic and sequentially visible by the GIL, and lock round trips give the
release/acquire ordering that the lock algorithms in this package rely on.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

DEFAULT_BASE_SEED = 42


class Parker:
    """One-permit suspend/resume channel for a single owner thread.

    The permit is a restricted-range token: repeated unpark calls saturate at
    one pending permit, and the owner's next park consumes it without
    blocking.  Callers must treat returns from park as possibly spurious and
    re-check their wait condition in a loop.
    """

    __slots__ = ("_permit_lock", "park_count")

    def __init__(self) -> None:
        # The lock is held exactly when no permit is pending, so park() is a
        # plain acquire and unpark() a release; a second release (permit
        # already pending) raises and is swallowed, which caps the permit at 1.
        self._permit_lock = threading.Lock()
        self._permit_lock.acquire()
        self.park_count = 0

    def park(self) -> None:
        """Block until a permit is available, then consume it (owner only)."""
        self.park_count += 1
        self._permit_lock.acquire()

    def unpark(self) -> None:
        """Make a permit available and wake the owner if it is parked.

        Callable from any thread; idempotent while a permit is pending.
        Writes made before unpark are visible to the owner after its park
        returns.
        """
        try:
            self._permit_lock.release()
        except RuntimeError:
            pass  # permit already pending


class WaitKind(Enum):
    SPIN_UNBOUNDED = "spin-unbounded"
    SPIN_POLITE = "spin-polite"
    PARK_IMMEDIATE = "park-immediate"
    SPIN_THEN_PARK = "spin-then-park"


@dataclass(frozen=True)
class WaitPolicy:
    """How a thread waits for a grant flag.

    spin_budget is the pause-loop iteration count used by SPIN_THEN_PARK
    before reverting to parking; None means "use the calibrated default".
    """

    kind: WaitKind
    spin_budget: Optional[int] = None

    @property
    def parks(self) -> bool:
        return self.kind in (WaitKind.PARK_IMMEDIATE, WaitKind.SPIN_THEN_PARK)

    def budget(self) -> int:
        if self.kind is WaitKind.PARK_IMMEDIATE:
            return 0
        if self.spin_budget is not None:
            return self.spin_budget
        return default_spin_budget()


SPIN_UNBOUNDED = WaitPolicy(WaitKind.SPIN_UNBOUNDED)
SPIN_POLITE = WaitPolicy(WaitKind.SPIN_POLITE)
PARK_IMMEDIATE = WaitPolicy(WaitKind.PARK_IMMEDIATE)


def spin_then_park(spin_budget: Optional[int] = None) -> WaitPolicy:
    if spin_budget is not None and spin_budget < 0:
        raise ValueError("spin_budget must be non-negative")
    return WaitPolicy(WaitKind.SPIN_THEN_PARK, spin_budget)


class WaitOutcome(Enum):
    GRANTED_SPINNING = "spinning"
    GRANTED_PARKED = "parked"


# Best-effort politeness hint.  On CPython the useful analogue of ceding
# pipeline resources is ceding the CPU (and with it the GIL) for one
# scheduler round; without OS support this degrades to a plain yield-to-GIL.
if hasattr(os, "sched_yield"):
    pause_hint = os.sched_yield
else:  # pragma: no cover - exercised only on platforms without sched_yield
    def pause_hint() -> None:
        time.sleep(0)


_spin_budget_cache: Optional[int] = None


def _calibrate_spin_budget() -> int:
    """Size the spin phase to one park/unpark round trip (the 2-competitive
    rule): spinning longer than a context switch can never pay off."""
    rounds = 400
    here, there = Parker(), Parker()

    def echo() -> None:
        for _ in range(rounds):
            there.park()
            here.unpark()

    t = threading.Thread(target=echo, daemon=True)
    t.start()
    t0 = time.perf_counter_ns()
    for _ in range(rounds):
        there.unpark()
        here.park()
    round_trip_ns = (time.perf_counter_ns() - t0) / rounds / 2
    t.join()

    t0 = time.perf_counter_ns()
    for _ in range(2000):
        pause_hint()
    pause_ns = max((time.perf_counter_ns() - t0) / 2000, 1.0)
    return max(int(round_trip_ns / pause_ns), 4)


def default_spin_budget() -> int:
    """Spin-then-park budget: MALTHUS_SPIN_BUDGET if set, else calibrated."""
    global _spin_budget_cache
    if _spin_budget_cache is None:
        env = os.environ.get("MALTHUS_SPIN_BUDGET")
        if env is not None:
            budget = int(env)
            if budget < 0:
                raise ValueError("MALTHUS_SPIN_BUDGET must be non-negative")
            _spin_budget_cache = budget
        else:
            _spin_budget_cache = _calibrate_spin_budget()
    return _spin_budget_cache


def wait_until(parker: Parker, policy: WaitPolicy,
               is_granted: Callable[[], bool]) -> WaitOutcome:
    """Wait until is_granted() observes True, per the given policy.

    The granting thread must set the condition exactly once and, for parking
    policies, follow it with parker.unpark().  Never returns before the
    condition is observed true.
    """
    if is_granted():
        return WaitOutcome.GRANTED_SPINNING
    kind = policy.kind
    pause = pause_hint
    if kind is WaitKind.SPIN_UNBOUNDED:
        while not is_granted():
            pass
        return WaitOutcome.GRANTED_SPINNING
    if kind is WaitKind.SPIN_POLITE:
        while not is_granted():
            pause()
        return WaitOutcome.GRANTED_SPINNING
    if kind is WaitKind.SPIN_THEN_PARK:
        for _ in range(policy.budget()):
            pause()
            if is_granted():
                return WaitOutcome.GRANTED_SPINNING
    while True:
        parker.park()
        if is_granted():
            return WaitOutcome.GRANTED_PARKED


def splitmix64(x: int) -> int:
    """One splitmix64 output step; used to whiten seeds."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class XorShift64:
    """Marsaglia xorshift with 64-bit state (shifts 13, 7, 17).

    State is never zero; the stream is a deterministic function of the seed.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int) -> None:
        s = splitmix64(seed & _MASK64)
        self.state = s if s else _GOLDEN

    def next(self) -> int:
        x = self.state
        x ^= (x << 13) & _MASK64
        x ^= x >> 7
        x ^= (x << 17) & _MASK64
        self.state = x
        return x


def bernoulli_hit(rng: XorShift64, denominator: int) -> bool:
    """One trial that succeeds with probability 1/denominator.

    Advances the generator by exactly one step.
    """
    if denominator < 1:
        raise ValueError("denominator must be >= 1")
    return rng.next() % denominator == 0


_tls = threading.local()
_auto_index_lock = threading.Lock()
_auto_index = 0


def set_thread_index(index: int) -> None:
    """Pin this thread's small integer identity (seeds its PRNG stream)."""
    _tls.index = index
    _tls.rng = None


def thread_index() -> int:
    """This thread's identity; auto-assigned on first use if never pinned."""
    idx = getattr(_tls, "index", None)
    if idx is None:
        global _auto_index
        with _auto_index_lock:
            idx = _auto_index
            _auto_index += 1
        _tls.index = idx
    return idx


def base_seed() -> int:
    env = os.environ.get("MALTHUS_SEED")
    return int(env) if env is not None else DEFAULT_BASE_SEED


def thread_rng() -> XorShift64:
    """Thread-local generator seeded from the base seed and thread index."""
    rng = getattr(_tls, "rng", None)
    if rng is None:
        seed = base_seed() ^ splitmix64(thread_index() + 1)
        rng = _tls.rng = XorShift64(seed)
    return rng


def seed_thread_rng(base: int, index: Optional[int] = None) -> XorShift64:
    """Re-seed this thread's generator from an explicit base seed."""
    if index is None:
        index = thread_index()
    rng = _tls.rng = XorShift64(base ^ splitmix64(index + 1))
    return rng


def current_parker() -> Parker:
    """The calling thread's parker (created on first use)."""
    parker = getattr(_tls, "parker", None)
    if parker is None:
        parker = _tls.parker = Parker()
    return parker
