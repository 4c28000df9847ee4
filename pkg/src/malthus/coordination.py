"""Condition variable and counting semaphore with a tunable wait-queue
discipline.

Both are built on one explicit wait queue whose enqueue side is a Bernoulli
mix: a waiter is appended to the tail with probability 1/A and prepended to
the head otherwise, while dequeue always takes the head.  A=1 is pure FIFO;
A=0 never appends (pure LIFO); large A is mostly-LIFO, e.g. A=1000 keeps
admission concentrated on recent waiters yet still cycles the eldest back in
for long-term fairness.
"""

from __future__ import annotations

import threading
from collections import deque
from typing import List, Optional

from .locks import QueueNode, grant
from .platform import (
    WaitPolicy,
    bernoulli_hit,
    spin_then_park,
    thread_index,
    thread_rng,
    wait_until,
)


class WaitQueue:
    """Explicit list of waiting nodes with head-or-tail Bernoulli enqueue.

    Operations are constant-time critical sections under a short internal
    lock, which may be shared with an embedding structure.
    """

    def __init__(self, p_append_denominator: int = 1,
                 lock: Optional[threading.Lock] = None,
                 record_grants: bool = False) -> None:
        if p_append_denominator < 0:
            raise ValueError("p_append_denominator must be >= 0")
        self.p_append_denominator = p_append_denominator
        self.lock = lock if lock is not None else threading.Lock()
        self._nodes: deque[QueueNode] = deque()
        self.grant_log: Optional[List] = [] if record_grants else None

    def __len__(self) -> int:
        return len(self._nodes)

    def enqueue_locked(self, node: QueueNode) -> None:
        a = self.p_append_denominator
        if a == 1 or (a > 1 and bernoulli_hit(thread_rng(), a)):
            self._nodes.append(node)
        else:
            self._nodes.appendleft(node)

    def dequeue_locked(self) -> Optional[QueueNode]:
        if not self._nodes:
            return None
        node = self._nodes.popleft()
        if self.grant_log is not None:
            self.grant_log.append(node.tag)
        return node

    def enqueue(self, node: QueueNode) -> None:
        with self.lock:
            self.enqueue_locked(node)

    def dequeue(self) -> Optional[QueueNode]:
        with self.lock:
            return self.dequeue_locked()

    def drain(self) -> List[QueueNode]:
        with self.lock:
            nodes = []
            while self._nodes:
                nodes.append(self.dequeue_locked())
            return nodes


def _fresh_node() -> QueueNode:
    node = QueueNode()
    node.tag = thread_index()
    return node


class CondVar:
    """Condition variable over a WaitQueue.

    wait() must be called with the associated mutex held; it enqueues the
    caller, releases the mutex, waits for a grant, and reacquires the mutex
    through the normal acquire path before returning.  Wakeups may be
    spurious from the caller's point of view: re-check the predicate in a
    loop.
    """

    def __init__(self, p_append_denominator: int = 1,
                 policy: WaitPolicy | None = None,
                 record_grants: bool = False) -> None:
        self.queue = WaitQueue(p_append_denominator, record_grants=record_grants)
        self.policy = policy if policy is not None else spin_then_park()

    def wait(self, mutex) -> None:
        if not mutex.held_by_current():
            raise RuntimeError("cv wait requires the associated mutex held")
        node = _fresh_node()
        self.queue.enqueue(node)
        mutex.release()
        wait_until(node.parker, self.policy, lambda: node.grant)
        mutex.acquire()

    def signal(self) -> None:
        node = self.queue.dequeue()
        if node is not None:
            grant(node, self.policy)

    def broadcast(self) -> None:
        for node in self.queue.drain():
            grant(node, self.policy)


class CRSemaphore:
    """Counting semaphore whose waiters line up in a WaitQueue.

    post() hands the unit directly to the dequeued head when anyone is
    waiting (the count never rises while a waiter exists), so count > 0
    implies an empty queue.
    """

    def __init__(self, initial: int = 0, p_append_denominator: int = 1,
                 policy: WaitPolicy | None = None,
                 record_grants: bool = False) -> None:
        if initial < 0:
            raise ValueError("initial count must be >= 0")
        self._count = initial
        self._guard = threading.Lock()
        self.queue = WaitQueue(p_append_denominator, lock=self._guard,
                               record_grants=record_grants)
        self.policy = policy if policy is not None else spin_then_park()

    @property
    def count(self) -> int:
        return self._count

    def wait(self) -> None:
        with self._guard:
            if self._count > 0:
                self._count -= 1
                return
            node = _fresh_node()
            self.queue.enqueue_locked(node)
        wait_until(node.parker, self.policy, lambda: node.grant)

    def post(self) -> None:
        with self._guard:
            node = self.queue.dequeue_locked()
            if node is None:
                self._count += 1
                return
        grant(node, self.policy)
