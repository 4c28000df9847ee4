import math
import threading
import time

import pytest

from malthus.coordination import CondVar, CRSemaphore, WaitQueue
from malthus.locks import QueueNode, make_lock
from malthus.platform import (
    seed_thread_rng,
    set_thread_index,
    spin_then_park,
)


def spawn(fn, *args):
    t = threading.Thread(target=fn, args=args, daemon=True)
    t.start()
    return t


def wait_for(cond, timeout=10.0, msg="condition"):
    deadline = time.perf_counter() + timeout
    while not cond():
        if time.perf_counter() > deadline:
            pytest.fail(f"timed out waiting for {msg}")
        time.sleep(0.001)


class TestWaitQueue:
    def test_fifo_discipline(self):
        q = WaitQueue(p_append_denominator=1)
        nodes = [QueueNode() for _ in range(3)]
        for n in nodes:
            q.enqueue(n)
        assert [q.dequeue() for _ in range(3)] == nodes
        assert q.dequeue() is None

    def test_pure_prepend_discipline(self):
        q = WaitQueue(p_append_denominator=0)
        nodes = [QueueNode() for _ in range(3)]
        for n in nodes:
            q.enqueue(n)
        assert [q.dequeue() for _ in range(3)] == nodes[::-1]

    def test_append_fraction_matches_denominator(self):
        seed_thread_rng(77)
        q = WaitQueue(p_append_denominator=1000)
        marker = QueueNode()
        q.enqueue(marker)  # probe: appended nodes land behind this marker?
        appends = 0
        trials = 100_000
        for _ in range(trials):
            node = QueueNode()
            q.enqueue(node)
            head = q._nodes[0]
            if head is marker or head is not node:
                appends += 1
                q._nodes.remove(node)
            else:
                q.dequeue()
        p = 1 / 1000
        sigma = math.sqrt(p * (1 - p) / trials)
        assert abs(appends / trials - p) <= 6 * sigma
        assert 0.0007 <= appends / trials <= 0.0013

    def test_grant_log_records_tags(self):
        q = WaitQueue(record_grants=True)
        a, b = QueueNode(), QueueNode()
        a.tag, b.tag = 10, 20
        q.enqueue(a)
        q.enqueue(b)
        q.dequeue()
        q.dequeue()
        assert q.grant_log == [10, 20]


class TestCondVar:
    def test_wait_requires_mutex_held(self):
        cv = CondVar()
        mutex = make_lock("tas")
        with pytest.raises(RuntimeError):
            cv.wait(mutex)

    def test_signal_on_empty_is_noop(self):
        cv = CondVar()
        cv.signal()
        cv.broadcast()

    def _run_wakeup_order(self, append_denom):
        cv = CondVar(p_append_denominator=append_denom,
                     policy=spin_then_park(8), record_grants=True)
        mutex = make_lock("mcs-stp")

        def waiter(i):
            set_thread_index(i)
            mutex.acquire()
            cv.wait(mutex)
            mutex.release()

        ts = []
        for i in range(3):
            ts.append(spawn(waiter, i))
            wait_for(lambda n=i + 1: len(cv.queue) == n, msg="waiter enqueued")
        for _ in range(3):
            cv.signal()
        for t in ts:
            t.join(timeout=10)
            assert not t.is_alive()
        return cv.queue.grant_log

    def test_fifo_signals_in_arrival_order(self):
        assert self._run_wakeup_order(1) == [0, 1, 2]

    def test_pure_prepend_signals_last_waiter_first(self):
        assert self._run_wakeup_order(0) == [2, 1, 0]

    def test_no_lost_signal_with_waiter_enqueued(self):
        cv = CondVar(policy=spin_then_park(4))
        mutex = make_lock("mcs-stp")
        state = {"ready": False}
        done = []

        def waiter():
            set_thread_index(50)
            mutex.acquire()
            while not state["ready"]:
                cv.wait(mutex)
            done.append(True)
            mutex.release()

        t = spawn(waiter)
        wait_for(lambda: len(cv.queue) == 1, msg="waiter parked on cv")
        mutex.acquire()
        state["ready"] = True
        cv.signal()
        mutex.release()
        t.join(timeout=10)
        assert done

    def test_broadcast_drains_all(self):
        cv = CondVar(policy=spin_then_park(4))
        mutex = make_lock("mcs-stp")
        woken = []

        def waiter(i):
            set_thread_index(60 + i)
            mutex.acquire()
            cv.wait(mutex)
            woken.append(i)
            mutex.release()

        ts = [spawn(waiter, i) for i in range(4)]
        wait_for(lambda: len(cv.queue) == 4, msg="all waiting")
        cv.broadcast()
        for t in ts:
            t.join(timeout=10)
            assert not t.is_alive()
        assert sorted(woken) == [0, 1, 2, 3]


class TestCRSemaphore:
    def test_immediate_decrement(self):
        sem = CRSemaphore(1)
        sem.wait()
        assert sem.count == 0

    def test_direct_handoff_keeps_count_zero(self):
        sem = CRSemaphore(0, policy=spin_then_park(4))
        resumed = []

        def waiter():
            set_thread_index(70)
            sem.wait()
            resumed.append(True)

        t = spawn(waiter)
        wait_for(lambda: len(sem.queue) == 1, msg="waiter queued")
        sem.post()
        t.join(timeout=10)
        assert resumed
        assert sem.count == 0  # the unit went straight to the waiter

    def test_post_without_waiters_increments(self):
        sem = CRSemaphore(0)
        sem.post()
        sem.post()
        assert sem.count == 2

    def test_conservation_under_stress(self):
        sem = CRSemaphore(0, policy=spin_then_park(16))
        completed = [0] * 4
        posts = 2000

        def waiter(i):
            set_thread_index(80 + i)
            for _ in range(posts // 4):
                sem.wait()
                completed[i] += 1

        ts = [spawn(waiter, i) for i in range(4)]
        for _ in range(posts):
            sem.post()
        for t in ts:
            t.join(timeout=30)
            assert not t.is_alive()
        assert sum(completed) == posts
        assert sem.count == 0
        assert len(sem.queue) == 0

    def test_count_positive_implies_queue_empty(self):
        sem = CRSemaphore(0, policy=spin_then_park(4))
        seen = []

        def waiter():
            set_thread_index(90)
            sem.wait()
            seen.append(True)

        t = spawn(waiter)
        wait_for(lambda: len(sem.queue) == 1)
        for _ in range(5):
            sem.post()
        t.join(timeout=10)
        # one unit consumed by handoff, the rest accumulated with no waiters
        assert sem.count == 4
        assert len(sem.queue) == 0


class TestMostlyLifoConcentration:
    def test_small_grant_working_set_vs_fifo(self):
        # 5-unit semaphore, 16 closed-loop threads: mostly-LIFO grants visit
        # fewer distinct threads per window than FIFO grants
        def run(denom):
            sem = CRSemaphore(5, p_append_denominator=denom,
                              policy=spin_then_park(16), record_grants=True)
            stop = threading.Event()

            def body(i):
                set_thread_index(i)
                seed_thread_rng(99, i)
                while not stop.is_set():
                    sem.wait()
                    sem.post()

            ts = [spawn(body, i) for i in range(16)]
            time.sleep(1.0)
            stop.set()
            for t in ts:
                sem.post()  # nudge stragglers out of wait
            for t in ts:
                t.join(timeout=20)
                assert not t.is_alive()
            log = sem.queue.grant_log
            assert len(log) > 500
            window = 100
            chunks = [log[i:i + window]
                      for i in range(0, len(log) - window + 1, window)]
            return sum(len(set(c)) for c in chunks) / len(chunks)

        fifo = run(1)
        lifo_ish = run(1000)
        assert lifo_ish < fifo
