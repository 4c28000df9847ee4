"""Mutual-exclusion lock family with concurrency-restriction variants.

Five locks share one waiting substrate (QueueNode + Parker):

* TASLock    - test-and-set word, competitive succession, randomized backoff.
* MCSLock    - strict-FIFO queue lock with local waiting and direct handoff.
* MCSCRLock  - MCS plus an explicit passive list; the unlock path culls
               surplus waiters out of circulation, reprovisions when the
               queue would underflow, and periodically grafts the eldest
               passive thread back in for long-term fairness.
* LIFOCRLock - explicit stack of waiters, mostly-LIFO admission, periodic
               grant to the eldest (stack tail).
* LOITERLock - outer test-and-set fast path over an inner MCS lock; the
               inner owner is the single "standby" thread and gets a direct
               handoff once it has waited too long.

None of the locks are re-entrant, and a node must not be shared by two
in-flight acquisitions.  All cross-thread state transitions happen through
plain attribute writes (GIL-visible) plus the small guard locks below, so a
release happens-before the successor's acquire return.
"""

from __future__ import annotations

import os
import threading
import time
from collections import deque
from typing import Optional

from .platform import (
    PARK_IMMEDIATE,
    SPIN_POLITE,
    Parker,
    WaitPolicy,
    bernoulli_hit,
    current_parker,
    pause_hint,
    spin_then_park,
    thread_rng,
    wait_until,
)

DEFAULT_FAIRNESS_DENOMINATOR = 1000


class QueueNode:
    """Per-waiter record linkable into an MCS chain, passive list, or stack.

    A node belongs to at most one structure at a time, and its grant flag
    goes False -> True exactly once per wait episode.
    """

    __slots__ = ("next", "grant", "parker", "arrival_ordinal", "tag", "mode")

    def __init__(self, parker: Optional[Parker] = None) -> None:
        self.next: Optional[QueueNode] = None
        self.grant = False
        self.parker = parker if parker is not None else current_parker()
        self.arrival_ordinal = -1
        self.tag = None
        self.mode = None


def grant(node: QueueNode, policy: WaitPolicy) -> None:
    """Pass ownership to a waiting node.

    The grant flag alone wakes spinners; an unpark is issued only when the
    policy can park, so pure-spin handoffs stay syscall-free.
    """
    node.grant = True
    if policy.parks:
        node.parker.unpark()


def _spin_for_next(node: QueueNode) -> QueueNode:
    # Successor swapped the tail but has not linked itself yet.
    while node.next is None:
        pause_hint()
    return node.next


class _LockBase:
    """Shared plumbing: implicit per-thread nodes, owner bookkeeping."""

    def __init__(self, policy: WaitPolicy) -> None:
        self.policy = policy
        self.acquire_count = 0  # owner-maintained diagnostic
        self._owner_ident: Optional[int] = None
        self._tls = threading.local()

    def _thread_node(self, node: Optional[QueueNode]) -> QueueNode:
        if node is not None:
            return node
        cached = getattr(self._tls, "node", None)
        if cached is None:
            cached = self._tls.node = QueueNode()
        return cached

    def acquire(self, node: Optional[QueueNode] = None) -> None:
        node = self._thread_node(node)
        self._acquire(node)
        self._tls.current = node
        self._owner_ident = threading.get_ident()
        self.acquire_count += 1

    def release(self, node: Optional[QueueNode] = None) -> None:
        if node is None:
            node = self._tls.current
        self._owner_ident = None
        self._release(node)

    def held_by_current(self) -> bool:
        return self._owner_ident == threading.get_ident()

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, *exc):
        self.release()

    def _acquire(self, node: QueueNode) -> None:
        raise NotImplementedError

    def _release(self, node: QueueNode) -> None:
        raise NotImplementedError


class TASLock(_LockBase):
    """Test-and-set lock with randomized bounded exponential backoff.

    Succession is competitive: release marks the word free and newly arriving
    threads may bypass waiters.  Parking policies register waiting parkers so
    that release can enable one heir presumptive to re-contend.
    """

    def __init__(self, policy: WaitPolicy = SPIN_POLITE,
                 backoff_min: int = 1, backoff_max: int = 1024) -> None:
        super().__init__(policy)
        if not (1 <= backoff_min <= backoff_max):
            raise ValueError("need 1 <= backoff_min <= backoff_max")
        self.backoff_min = backoff_min
        self.backoff_max = backoff_max
        self._word = threading.Lock()  # held <=> lock owned
        self._waiting_parkers: deque[Parker] = deque()

    def _acquire(self, node: QueueNode) -> None:
        word = self._word
        if word.acquire(False):
            return
        rng = thread_rng()
        parks = self.policy.parks
        budget = self.policy.budget() if parks else 0
        window = self.backoff_min
        spun = 0
        parker = node.parker
        while True:
            if word.acquire(False):
                return
            if parks and spun >= budget:
                self._waiting_parkers.append(parker)
                # Re-check after registering so a release that just happened
                # cannot strand us; a racing pop just leaves a sticky permit.
                if word.acquire(False):
                    self._unregister(parker)
                    return
                parker.park()
                self._unregister(parker)
                spun = 0
                window = self.backoff_min
                continue
            steps = 1 + rng.next() % window
            for _ in range(steps):
                pause_hint()
                spun += 1
                if not word.locked():
                    break
            window = min(window * 2, self.backoff_max)

    def _unregister(self, parker: Parker) -> None:
        try:
            self._waiting_parkers.remove(parker)
        except ValueError:
            pass  # a releaser popped us

    def _release(self, node: QueueNode) -> None:
        self._word.release()
        if self._waiting_parkers:
            try:
                heir = self._waiting_parkers.popleft()
            except IndexError:
                return
            heir.unpark()


class MCSLock(_LockBase):
    """Classic MCS queue lock: strict FIFO admission by tail-swap order,
    local waiting on the node's grant flag, direct handoff on release."""

    def __init__(self, policy: WaitPolicy = SPIN_POLITE) -> None:
        super().__init__(policy)
        self._tail: Optional[QueueNode] = None
        self._tail_guard = threading.Lock()
        self._arrivals = 0

    def _swap_tail(self, node: QueueNode) -> Optional[QueueNode]:
        with self._tail_guard:
            node.arrival_ordinal = self._arrivals
            self._arrivals += 1
            prev = self._tail
            self._tail = node
            return prev

    def _cas_tail(self, expected: Optional[QueueNode],
                  new: Optional[QueueNode]) -> bool:
        with self._tail_guard:
            if self._tail is expected:
                self._tail = new
                return True
            return False

    def _acquire(self, node: QueueNode) -> None:
        node.next = None
        node.grant = False
        prev = self._swap_tail(node)
        if prev is None:
            return
        prev.next = node
        wait_until(node.parker, self.policy, lambda: node.grant)

    def _release(self, node: QueueNode) -> None:
        succ = node.next
        if succ is None:
            if self._cas_tail(node, None):
                return
            succ = _spin_for_next(node)
        grant(succ, self.policy)


class MCSCRLock(MCSLock):
    """MCS with concurrency restriction.

    The acquire path is untouched MCS; all editing happens in release, under
    ownership, so the passive list needs no extra synchronization:

    1. fairness graft: with probability 1/D and a non-empty passive list,
       splice the passive tail (the eldest) in as the next owner;
    2. cull: when a waiter sits strictly between the owner and the tail,
       unlink the one nearest the owner onto the passive-list head;
    3. reprovision: when the chain would empty but passivated threads exist,
       re-queue the passive head so the lock is never left idle;
    4. otherwise plain MCS release.
    """

    def __init__(self, policy: WaitPolicy = SPIN_POLITE,
                 fairness_denominator: int = DEFAULT_FAIRNESS_DENOMINATOR) -> None:
        super().__init__(policy)
        if fairness_denominator < 1:
            raise ValueError("fairness_denominator must be >= 1")
        self.fairness_denominator = fairness_denominator
        self._passive: deque[QueueNode] = deque()  # left=head, right=eldest
        self.culls = 0
        self.reprovisions = 0
        self.grafts = 0

    def passive_len(self) -> int:
        return len(self._passive)

    def _release(self, node: QueueNode) -> None:
        passive = self._passive
        policy = self.policy

        if passive and bernoulli_hit(thread_rng(), self.fairness_denominator):
            eldest = passive.pop()
            succ = node.next
            if succ is None and not self._cas_tail(node, eldest):
                succ = _spin_for_next(node)
            eldest.next = succ
            self.grafts += 1
            grant(eldest, policy)
            return

        succ = node.next
        if succ is None:
            if passive:
                candidate = passive.popleft()
                if self._cas_tail(node, candidate):
                    self.reprovisions += 1
                    grant(candidate, policy)
                    return
                passive.appendleft(candidate)  # an arrival beat us to the tail
            elif self._cas_tail(node, None):
                return
            succ = _spin_for_next(node)
            grant(succ, policy)
            return

        if self._tail is not succ:
            # succ has a follower (possibly still linking): cull succ.
            follower = succ.next
            if follower is None:
                follower = _spin_for_next(succ)
            succ.next = None
            passive.appendleft(succ)
            self.culls += 1
            grant(follower, policy)
            return

        grant(succ, policy)


_HELD_EMPTY = object()  # stack designator: owned, no waiters (free is None)


class LIFOCRLock(_LockBase):
    """Lock with an explicit waiter stack and mostly-LIFO admission.

    Arrivals push; only the owner pops, so node identity cannot be recycled
    under a racing pop (single consumer).  Release normally grants the stack
    head (most recent arrival); with probability 1/D it walks to the tail and
    grants the eldest instead, bounding long-term unfairness.
    """

    def __init__(self, policy: WaitPolicy = SPIN_POLITE,
                 fairness_denominator: int = DEFAULT_FAIRNESS_DENOMINATOR) -> None:
        super().__init__(policy)
        if fairness_denominator < 1:
            raise ValueError("fairness_denominator must be >= 1")
        self.fairness_denominator = fairness_denominator
        self._top = None  # None=free, _HELD_EMPTY, or head QueueNode
        self._top_guard = threading.Lock()
        self._arrivals = 0
        self.fairness_grants = 0

    def _cas_top(self, expected, new) -> bool:
        with self._top_guard:
            if self._top is expected:
                if isinstance(new, QueueNode):
                    new.arrival_ordinal = self._arrivals
                    self._arrivals += 1
                self._top = new
                return True
            return False

    def _acquire(self, node: QueueNode) -> None:
        node.grant = False
        while True:
            cur = self._top
            if cur is None:
                if self._cas_top(None, _HELD_EMPTY):
                    return
                continue
            node.next = cur if cur is not _HELD_EMPTY else None
            if self._cas_top(cur, node):
                break
        wait_until(node.parker, self.policy, lambda: node.grant)

    def _release(self, node: Optional[QueueNode] = None) -> None:
        cur = self._top
        if cur is _HELD_EMPTY:
            if self._cas_top(_HELD_EMPTY, None):
                return
            cur = self._top  # waiters pushed while we tried to free

        # cur is the stack head; the stack can only grow under the owner.
        if cur.next is not None and \
                bernoulli_hit(thread_rng(), self.fairness_denominator):
            pred = cur
            while pred.next.next is not None:
                pred = pred.next
            eldest = pred.next
            pred.next = None
            self.fairness_grants += 1
            grant(eldest, self.policy)
            return

        rest = cur.next if cur.next is not None else _HELD_EMPTY
        if self._cas_top(cur, rest):
            cur.next = None
            grant(cur, self.policy)
            return
        # Arrivals raced the pop: there are now >= 2 stacked nodes.  Grant
        # the node following the new head, constant-time, plausibly LIFO.
        head = self._top
        victim = head.next
        head.next = victim.next
        victim.next = None
        grant(victim, self.policy)


_OUTER_FREE = 0
_OUTER_HELD = 1
_OUTER_HANDOFF = 2


class LOITERLock(_LockBase):
    """Outer-inner lock with throttling.

    Arrivals spin briefly on the outer test-and-set word (bounded, randomized
    backoff, at most max_spinners concurrently, abandoning early when the
    atomic fails too often).  Losers acquire the inner MCS lock; the inner
    owner is the single standby thread and keeps contending for the outer
    word.  Release uses competitive succession, unparking the standby as heir
    presumptive, except that an impatient standby (too many failed attempts)
    is given the lock by direct handoff: the word goes HELD -> HANDOFF and is
    never observed free in between.
    """

    def __init__(self, policy: WaitPolicy = SPIN_POLITE,
                 max_spinners: Optional[int] = None,
                 impatience_threshold: int = 1000,
                 backoff_min: int = 1, backoff_max: int = 1024,
                 fast_spin_limit: int = 256,
                 fast_fail_limit: int = 5,
                 defer_unpark_ns: int = 1000) -> None:
        super().__init__(policy)
        self._outer = _OUTER_FREE
        self._outer_guard = threading.Lock()
        self._inner = MCSLock(policy)
        self._standby: Optional[QueueNode] = None
        self._standby_impatient = False
        self.max_spinners = max_spinners if max_spinners is not None \
            else (os.cpu_count() or 1)
        self.impatience_threshold = impatience_threshold
        self.backoff_min = backoff_min
        self.backoff_max = backoff_max
        self.fast_spin_limit = fast_spin_limit
        self.fast_fail_limit = fast_fail_limit
        self.defer_unpark_ns = defer_unpark_ns
        self._spinners = 0
        self.fast_acquires = 0
        self.slow_acquires = 0
        self.handoffs = 0

    def _cas_outer(self, expected: int, new: int) -> bool:
        with self._outer_guard:
            if self._outer == expected:
                self._outer = new
                return True
            return False

    def _try_fast(self) -> bool:
        with self._outer_guard:
            if self._spinners >= self.max_spinners:
                return False
            self._spinners += 1
        try:
            rng = thread_rng()
            window = self.backoff_min
            fails = 0
            spun = 0
            while spun < self.fast_spin_limit:
                if self._outer == _OUTER_FREE:
                    if self._cas_outer(_OUTER_FREE, _OUTER_HELD):
                        return True
                    fails += 1
                    if fails >= self.fast_fail_limit:
                        return False  # heavy flow over the lock: self-cull
                steps = 1 + rng.next() % window
                for _ in range(steps):
                    pause_hint()
                    spun += 1
                    if self._outer == _OUTER_FREE:
                        break
                window = min(window * 2, self.backoff_max)
            return False
        finally:
            with self._outer_guard:
                self._spinners -= 1

    def _acquire(self, node: QueueNode) -> None:
        if self._try_fast():
            node.mode = "fast"
            self.fast_acquires += 1
            return
        # Slow path: become the standby via the inner lock, then contend.
        self._inner.acquire(node)
        self._standby_impatient = False
        self._standby = node
        parker = node.parker
        parks = self.policy.parks
        budget = self.policy.budget() if parks else 0
        attempts = 0
        spun = 0
        while True:
            cur = self._outer
            if cur == _OUTER_FREE and self._cas_outer(_OUTER_FREE, _OUTER_HELD):
                break
            if cur == _OUTER_HANDOFF:
                # Only the standby may claim a handoff; there is one standby.
                with self._outer_guard:
                    self._outer = _OUTER_HELD
                break
            attempts += 1
            if attempts == self.impatience_threshold:
                self._standby_impatient = True
            if parks and spun >= budget:
                parker.park()
                spun = 0
            else:
                pause_hint()
                spun += 1
        self._standby = None
        self._standby_impatient = False
        node.mode = "slow"
        self.slow_acquires += 1

    def _release(self, node: QueueNode) -> None:
        if node.mode == "slow":
            with self._outer_guard:
                self._outer = _OUTER_FREE
            # The next inner waiter (if any) is promoted to standby.
            self._inner.release(node)
            return
        standby = self._standby
        if standby is not None and self._standby_impatient:
            with self._outer_guard:
                self._outer = _OUTER_HANDOFF
            self.handoffs += 1
            standby.parker.unpark()
            return
        with self._outer_guard:
            self._outer = _OUTER_FREE
        standby = self._standby
        if standby is not None:
            if self.defer_unpark_ns > 0:
                # Brief defer-and-avoid: skip the wake if somebody else takes
                # the lock right away.
                deadline = time.perf_counter_ns() + self.defer_unpark_ns
                while time.perf_counter_ns() < deadline:
                    if self._outer != _OUTER_FREE:
                        return
            standby.parker.unpark()


_LOCK_CLASSES = {
    "tas": TASLock,
    "mcs": MCSLock,
    "mcscr": MCSCRLock,
    "lifocr": LIFOCRLock,
    "loiter": LOITERLock,
}

_POLICY_SUFFIXES = {
    "": lambda: SPIN_POLITE,
    "s": lambda: SPIN_POLITE,
    "stp": spin_then_park,
    "p": lambda: PARK_IMMEDIATE,
}


def make_lock(name: str, fairness_denominator: int = DEFAULT_FAIRNESS_DENOMINATOR,
              **kwargs):
    """Build a lock from its name string, e.g. "mcs", "mcscr-stp", "tas-s".

    Suffixes select the waiting policy: -s polite spin (the default),
    -stp spin-then-park, -p park immediately.
    """
    base, _, suffix = name.partition("-")
    cls = _LOCK_CLASSES.get(base)
    policy_factory = _POLICY_SUFFIXES.get(suffix)
    if cls is None or policy_factory is None:
        known = ", ".join(sorted(_LOCK_CLASSES))
        raise ValueError(
            f"unknown lock {name!r}: expected one of {known} with optional "
            f"-s/-stp/-p waiting-policy suffix")
    if cls in (MCSCRLock, LIFOCRLock):
        kwargs.setdefault("fairness_denominator", fairness_denominator)
    return cls(policy_factory(), **kwargs)


LOCK_NAMES = tuple(sorted(_LOCK_CLASSES))
