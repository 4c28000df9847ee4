import threading
import time

import pytest

from malthus import metrics
from malthus.locks import (
    _HELD_EMPTY,
    LIFOCRLock,
    LOITERLock,
    MCSCRLock,
    MCSLock,
    QueueNode,
    TASLock,
    make_lock,
)
from malthus.platform import set_thread_index, spin_then_park

NEVER = 2 ** 61  # fairness denominator that never hits in a short test

ALL_LOCK_NAMES = [
    f"{base}-{suffix}"
    for base in ("tas", "mcs", "mcscr", "lifocr", "loiter")
    for suffix in ("s", "stp")
]


def wait_for(cond, timeout=10.0, msg="condition"):
    deadline = time.perf_counter() + timeout
    while not cond():
        if time.perf_counter() > deadline:
            pytest.fail(f"timed out waiting for {msg}")
        time.sleep(0.001)


class Participant:
    """One scripted acquisition on its own thread: acquire, hold until told,
    release."""

    def __init__(self, lock, index=0):
        self.lock = lock
        self.index = index
        self.node = None
        self.acquired = threading.Event()
        self.release_requested = threading.Event()
        self.done = threading.Event()
        self.thread = threading.Thread(target=self._run, daemon=True)

    def _run(self):
        set_thread_index(self.index)
        self.node = QueueNode()
        self.lock.acquire(self.node)
        self.acquired.set()
        self.release_requested.wait()
        self.lock.release(self.node)
        self.done.set()

    def start(self):
        self.thread.start()
        return self

    def release(self):
        self.release_requested.set()
        self.done.wait(timeout=10)
        assert self.done.is_set()


def run_counter_stress(lock, threads, per_thread, ncs_work=0):
    """Closed-loop increments; returns (total, overlap_violations)."""
    counter = [0]
    owner_cell = [0]
    violations = []
    barrier = threading.Barrier(threads)

    def body(i):
        set_thread_index(i)
        me = threading.get_ident()
        barrier.wait()
        for _ in range(per_thread):
            lock.acquire()
            if owner_cell[0] != 0:
                violations.append((me, owner_cell[0]))
            owner_cell[0] = me
            counter[0] += 1
            owner_cell[0] = 0
            lock.release()
            for _ in range(ncs_work):
                pass

    ts = [threading.Thread(target=body, args=(i,), daemon=True)
          for i in range(threads)]
    for t in ts:
        t.start()
    for t in ts:
        t.join(timeout=120)
        assert not t.is_alive(), "stress worker hung"
    return counter[0], violations


@pytest.mark.parametrize("name", ALL_LOCK_NAMES)
def test_mutual_exclusion_quick(name):
    lock = make_lock(name, fairness_denominator=100)
    total, violations = run_counter_stress(lock, threads=4, per_thread=5000)
    assert total == 4 * 5000
    assert not violations


def test_make_lock_rejects_unknown():
    with pytest.raises(ValueError, match="unknown lock"):
        make_lock("speedy")
    with pytest.raises(ValueError, match="unknown lock"):
        make_lock("mcs-warp")


def test_lock_name_selects_class_and_policy():
    lock = make_lock("mcscr-stp", fairness_denominator=50)
    assert isinstance(lock, MCSCRLock)
    assert lock.policy.parks
    assert lock.fairness_denominator == 50
    lock = make_lock("lifocr")
    assert isinstance(lock, LIFOCRLock)
    assert not lock.policy.parks
    lock = make_lock("mcs-p")
    assert lock.policy.budget() == 0 and lock.policy.parks


def test_context_manager_and_owner_tracking():
    lock = make_lock("mcs")
    assert not lock.held_by_current()
    with lock:
        assert lock.held_by_current()
    assert not lock.held_by_current()


class TestTAS:
    def test_uncontended_roundtrip(self):
        lock = TASLock()
        lock.acquire()
        assert lock._word.locked()
        lock.release()
        assert not lock._word.locked()
        lock.acquire()
        lock.release()

    def test_admission_deviates_from_arrival_order(self):
        # competitive succession permits bypass: over 10^4 closed-loop
        # acquisitions some admission must overtake an earlier arrival
        from malthus.platform import pause_hint

        lock = TASLock(spin_then_park(16))
        arrivals = [0]
        arrival_guard = threading.Lock()
        admitted = []
        per_thread = 2500
        barrier = threading.Barrier(4)

        def body(i):
            set_thread_index(i)
            barrier.wait()
            for _ in range(per_thread):
                with arrival_guard:
                    my_arrival = arrivals[0]
                    arrivals[0] += 1
                lock.acquire()
                pause_hint()  # hold across a scheduler round so rivals queue up
                admitted.append(my_arrival)
                lock.release()

        ts = [threading.Thread(target=body, args=(i,), daemon=True)
              for i in range(4)]
        for t in ts:
            t.start()
        for t in ts:
            t.join(timeout=60)
        assert len(admitted) == 4 * per_thread
        assert admitted != sorted(admitted), "no bypass in 10^4 acquisitions"


class TestMCS:
    def test_empty_tail_immediate_ownership(self):
        lock = MCSLock()
        node = QueueNode()
        lock.acquire(node)
        assert lock._tail is node
        lock.release(node)
        assert lock._tail is None

    def test_arrival_order_is_admission_order(self):
        lock = MCSLock()
        owner = Participant(lock, 0).start()
        wait_for(owner.acquired.is_set, msg="owner acquired")
        a = Participant(lock, 1).start()
        wait_for(lambda: owner.node.next is a.node, msg="A linked")
        b = Participant(lock, 2).start()
        wait_for(lambda: a.node.next is b.node, msg="B linked")
        owner.release()
        wait_for(a.acquired.is_set, msg="A admitted")
        assert not b.acquired.is_set()
        a.release()
        wait_for(b.acquired.is_set, msg="B admitted")
        b.release()
        assert lock._tail is None

    def test_fifo_exactness_stress(self):
        # admission sequence must equal tail-swap arrival sequence exactly
        lock = MCSLock()
        admitted = []
        per_thread = 12_500
        barrier = threading.Barrier(8)

        def body(i):
            set_thread_index(i)
            node = QueueNode()
            barrier.wait()
            for _ in range(per_thread):
                lock.acquire(node)
                admitted.append(node.arrival_ordinal)
                lock.release(node)

        ts = [threading.Thread(target=body, args=(i,), daemon=True)
              for i in range(8)]
        for t in ts:
            t.start()
        for t in ts:
            t.join(timeout=120)
            assert not t.is_alive()
        assert len(admitted) == 8 * per_thread
        assert admitted == sorted(admitted)
        assert admitted[-1] == len(admitted) - 1


class TestMCSCR:
    def test_sole_owner_release_frees(self):
        lock = MCSCRLock(fairness_denominator=NEVER)
        node = QueueNode()
        lock.acquire(node)
        lock.release(node)
        assert lock._tail is None
        assert lock.passive_len() == 0

    def test_cull_moves_eldest_waiter_to_passive_head(self):
        lock = MCSCRLock(fairness_denominator=NEVER)
        owner = Participant(lock, 0).start()
        wait_for(owner.acquired.is_set)
        w1 = Participant(lock, 1).start()
        wait_for(lambda: owner.node.next is w1.node, msg="w1 linked")
        w2 = Participant(lock, 2).start()
        wait_for(lambda: w1.node.next is w2.node, msg="w2 linked")

        owner.release()
        wait_for(w2.acquired.is_set, msg="w2 granted over culled w1")
        assert not w1.acquired.is_set()
        assert lock.culls == 1
        assert lock.passive_len() == 1
        assert lock._passive[0] is w1.node

        # chain is now owner-only with a non-empty passive list: the next
        # release must reprovision (work conservation)
        w2.release()
        wait_for(w1.acquired.is_set, msg="w1 reprovisioned")
        assert lock.reprovisions == 1
        assert lock.passive_len() == 0
        w1.release()
        assert lock._tail is None

    def test_fairness_graft_grants_eldest_passive(self):
        lock = MCSCRLock(fairness_denominator=NEVER)
        parts = [Participant(lock, i) for i in range(6)]
        owner = parts[0].start()
        wait_for(owner.acquired.is_set)
        prev = owner
        for p in parts[1:5]:
            p.start()
            wait_for(lambda p=p, prev=prev: prev.node.next is p.node,
                     msg="chain linked")
            prev = p
        w1, w2, w3, w4 = parts[1:5]

        owner.release()  # culls w1, grants w2
        wait_for(w2.acquired.is_set)
        w2.release()     # culls w3 (nearest the new owner), grants w4
        wait_for(w4.acquired.is_set)
        assert lock.culls == 2
        assert [n is w3.node for n in lock._passive] == [True, False]
        assert lock._passive[-1] is w1.node  # eldest at the tail

        lock.fairness_denominator = 1  # force a graft on the next release
        w4.release()
        wait_for(w1.acquired.is_set, msg="eldest passive grafted")
        assert lock.grafts == 1
        assert not w3.acquired.is_set()
        w1.release()     # passive still holds w3: grafts again (D=1)
        wait_for(w3.acquired.is_set)
        assert lock.grafts == 2
        assert lock.passive_len() == 0
        w3.release()
        assert lock._tail is None

    def test_graft_preserves_existing_successor(self):
        # a graft splices ahead of the waiting successor without losing it
        lock = MCSCRLock(fairness_denominator=NEVER)
        owner = Participant(lock, 0).start()
        wait_for(owner.acquired.is_set)
        w1 = Participant(lock, 1).start()
        wait_for(lambda: owner.node.next is w1.node)
        w2 = Participant(lock, 2).start()
        wait_for(lambda: w1.node.next is w2.node)
        owner.release()  # cull w1 -> passive, grant w2
        wait_for(w2.acquired.is_set)

        w3 = Participant(lock, 3).start()
        wait_for(lambda: w2.node.next is w3.node)
        lock.fairness_denominator = 1
        w2.release()     # graft w1 ahead of w3
        wait_for(w1.acquired.is_set)
        assert not w3.acquired.is_set()
        assert w1.node.next is w3.node
        lock.fairness_denominator = NEVER
        w1.release()
        wait_for(w3.acquired.is_set)
        w3.release()
        assert lock._tail is None
        assert lock.passive_len() == 0

    def test_node_conservation_under_stress(self):
        lock = MCSCRLock(spin_then_park(), fairness_denominator=200)
        total, violations = run_counter_stress(lock, threads=8,
                                               per_thread=10_000, ncs_work=5)
        assert total == 80_000
        assert not violations
        assert lock.passive_len() == 0, "a node was stranded in the passive list"
        assert lock.culls == lock.grafts + lock.reprovisions

    def test_steady_state_restriction(self):
        # beyond saturation the working set and reacquire distance shrink
        lock = MCSCRLock(spin_then_park(), fairness_denominator=1000)
        recorder = metrics.AdmissionRecorder(8)
        stop = threading.Event()
        barrier = threading.Barrier(8)

        def body(i):
            set_thread_index(i)
            barrier.wait()
            while not stop.is_set():
                lock.acquire()
                recorder.record(i)
                lock.release()
                for _ in range(20):
                    pass

        ts = [threading.Thread(target=body, args=(i,), daemon=True)
              for i in range(8)]
        for t in ts:
            t.start()
        time.sleep(1.5)
        stop.set()
        for t in ts:
            t.join(timeout=30)
        history = recorder.history()
        assert len(history) > 20_000
        assert metrics.avg_lwss(history, 100) < 8
        assert metrics.mttr(history) < 7


@pytest.mark.parametrize("name", ["mcscr-stp", "lifocr-s"])
def test_long_term_fairness_window(name):
    # with denominator D every thread gets admitted within any 50*D window
    denom = 100
    lock = make_lock(name, fairness_denominator=denom)
    threads = 8
    recorder = metrics.AdmissionRecorder(threads)
    stop = threading.Event()
    barrier = threading.Barrier(threads)
    target = 120_000

    def body(i):
        set_thread_index(i)
        barrier.wait()
        while not stop.is_set():
            lock.acquire()
            if recorder.record(i) >= target:
                stop.set()
            lock.release()

    ts = [threading.Thread(target=body, args=(i,), daemon=True)
          for i in range(threads)]
    for t in ts:
        t.start()
    for t in ts:
        t.join(timeout=120)
        assert not t.is_alive()
    history = recorder.history()
    assert len(history) >= target
    # judge steady state: the bound applies once every thread contends, so
    # skip the startup ramp where late starters cannot have been admitted
    ids = history.thread_ids
    seen = set()
    start = 0
    for i, tid in enumerate(ids):
        seen.add(tid)
        if len(seen) == threads:
            start = i
            break
    steady = metrics.AdmissionHistory(ids[start:], threads)
    gaps = metrics.absence_gaps(steady)
    assert max(gaps) < 50 * denom, f"starvation window exceeded: {gaps}"


class TestLIFOCR:
    def test_free_fast_acquire_sets_held_empty(self):
        lock = LIFOCRLock()
        node = QueueNode()
        lock.acquire(node)
        assert lock._top is _HELD_EMPTY
        lock.release(node)
        assert lock._top is None

    def test_push_order_and_lifo_admission(self):
        lock = LIFOCRLock(fairness_denominator=NEVER)
        owner = Participant(lock, 0).start()
        wait_for(owner.acquired.is_set)
        a = Participant(lock, 1).start()
        wait_for(lambda: lock._top is a.node, msg="A pushed")
        b = Participant(lock, 2).start()
        wait_for(lambda: lock._top is b.node, msg="B pushed on top")
        assert b.node.next is a.node

        owner.release()
        wait_for(b.acquired.is_set, msg="most recent arrival admitted")
        assert not a.acquired.is_set()
        b.release()
        wait_for(a.acquired.is_set)
        a.release()
        assert lock._top is None

    def test_fairness_hit_grants_eldest(self):
        lock = LIFOCRLock(fairness_denominator=NEVER)
        owner = Participant(lock, 0).start()
        wait_for(owner.acquired.is_set)
        a = Participant(lock, 1).start()
        wait_for(lambda: lock._top is a.node)
        b = Participant(lock, 2).start()
        wait_for(lambda: lock._top is b.node)
        c = Participant(lock, 3).start()
        wait_for(lambda: lock._top is c.node)

        lock.fairness_denominator = 1
        owner.release()  # stack [C, B, A]: eldest A granted
        wait_for(a.acquired.is_set)
        assert not b.acquired.is_set() and not c.acquired.is_set()
        assert lock.fairness_grants == 1
        a.release()      # stack [C, B]: eldest B granted
        wait_for(b.acquired.is_set)
        assert lock.fairness_grants == 2
        b.release()      # single waiter C: plain pop
        wait_for(c.acquired.is_set)
        c.release()
        assert lock._top is None

    def test_mostly_lifo_working_set_is_small(self):
        lock = LIFOCRLock(spin_then_park(), fairness_denominator=1000)
        threads = 4
        recorder = metrics.AdmissionRecorder(threads)
        stop = threading.Event()
        barrier = threading.Barrier(threads)

        def body(i):
            set_thread_index(i)
            barrier.wait()
            while not stop.is_set():
                lock.acquire()
                recorder.record(i)
                lock.release()
                for _ in range(10):
                    pass

        ts = [threading.Thread(target=body, args=(i,), daemon=True)
              for i in range(threads)]
        for t in ts:
            t.start()
        time.sleep(1.0)
        stop.set()
        for t in ts:
            t.join(timeout=30)
        history = recorder.history()
        assert len(history) > 10_000
        assert metrics.avg_lwss(history, 50) <= 3.5

    def test_node_reuse_poisoning_stress(self):
        # per-thread nodes are recycled (and scribbled on) between
        # acquisitions; single-consumer popping must never misbehave
        lock = LIFOCRLock(fairness_denominator=50)
        counter = [0]
        per_thread = 30_000
        barrier = threading.Barrier(3)

        def body(i):
            set_thread_index(i)
            node = QueueNode()
            poison = QueueNode()
            barrier.wait()
            for _ in range(per_thread):
                lock.acquire(node)
                counter[0] += 1
                lock.release(node)
                node.next = poison  # stale garbage a fresh reuse must clear
                node.grant = True

        ts = [threading.Thread(target=body, args=(i,), daemon=True)
              for i in range(3)]
        for t in ts:
            t.start()
        for t in ts:
            t.join(timeout=120)
            assert not t.is_alive()
        assert counter[0] == 3 * per_thread
        assert lock._top is None


class TestLOITER:
    def make(self, **kw):
        kw.setdefault("max_spinners", 1)
        kw.setdefault("fast_spin_limit", 8)
        kw.setdefault("defer_unpark_ns", 0)
        return LOITERLock(spin_then_park(32), **kw)

    def test_uncontended_fast_path(self):
        lock = self.make()
        lock.acquire()
        assert lock.fast_acquires == 1
        assert lock._inner._tail is None  # inner untouched
        lock.release()
        assert lock._outer == 0

    def test_fast_spin_exhausted_becomes_standby(self):
        lock = self.make(impatience_threshold=10 ** 9)
        owner = Participant(lock, 0).start()
        wait_for(owner.acquired.is_set)
        s = Participant(lock, 1).start()
        wait_for(lambda: lock._standby is not None, msg="standby installed")
        assert not s.acquired.is_set()
        owner.release()  # patient standby unparked as heir presumptive
        wait_for(s.acquired.is_set, msg="standby eventually wins the lock")
        assert s.node.mode == "slow"
        assert lock.slow_acquires == 1
        s.release()
        assert lock._outer == 0
        assert lock._inner._tail is None

    def test_impatient_standby_gets_direct_handoff(self):
        lock = self.make(impatience_threshold=1)
        owner = Participant(lock, 0).start()
        wait_for(owner.acquired.is_set)
        s = Participant(lock, 1).start()
        wait_for(lambda: lock._standby_impatient, msg="standby impatience")
        owner.release()
        wait_for(s.acquired.is_set)
        assert lock.handoffs == 1
        s.release()

    def test_slow_release_promotes_next_inner_waiter(self):
        lock = self.make(impatience_threshold=10 ** 9)
        owner = Participant(lock, 0).start()
        wait_for(owner.acquired.is_set)
        s1 = Participant(lock, 1).start()
        wait_for(lambda: lock._standby is not None)
        s2 = Participant(lock, 2).start()
        wait_for(lambda: lock._inner._tail is s2.node, msg="s2 queued on inner")
        owner.release()
        wait_for(s1.acquired.is_set)
        assert lock._standby is None or lock._standby is s2.node
        s1.release()  # releases outer and inner: s2 becomes standby
        wait_for(s2.acquired.is_set)
        s2.release()
        assert lock._outer == 0
        assert lock._inner._tail is None

    def test_fast_path_respects_spinner_bound(self):
        lock = self.make()
        lock._spinners = lock.max_spinners  # pretend the bound is reached
        assert lock._try_fast() is False
        lock._spinners = 0
