"""Concurrency-restriction locks, CR coordination primitives, and a
contention benchmark harness with short- and long-term fairness metrics."""

from .coordination import CondVar, CRSemaphore, WaitQueue
from .locks import (
    LIFOCRLock,
    LOITERLock,
    MCSCRLock,
    MCSLock,
    QueueNode,
    TASLock,
    make_lock,
)
from .metrics import (
    AdmissionHistory,
    AdmissionRecorder,
    FairnessReport,
    avg_lwss,
    gini,
    merge,
    mttr,
    rstddev,
    saturation_threads,
)
from .platform import (
    PARK_IMMEDIATE,
    SPIN_POLITE,
    SPIN_UNBOUNDED,
    Parker,
    WaitOutcome,
    WaitPolicy,
    XorShift64,
    bernoulli_hit,
    pause_hint,
    spin_then_park,
    wait_until,
)
from .softlru import CacheStats, SoftLRUCache

__version__ = "0.1.0"

__all__ = [
    "AdmissionHistory", "AdmissionRecorder", "CacheStats", "CondVar",
    "CRSemaphore", "FairnessReport", "LIFOCRLock", "LOITERLock", "MCSCRLock",
    "MCSLock", "PARK_IMMEDIATE", "Parker", "QueueNode", "SoftLRUCache",
    "SPIN_POLITE", "SPIN_UNBOUNDED", "TASLock", "WaitOutcome", "WaitPolicy",
    "WaitQueue", "XorShift64", "avg_lwss", "bernoulli_hit", "gini",
    "make_lock", "merge", "mttr", "pause_hint", "rstddev",
    "saturation_threads", "spin_then_park", "wait_until",
]
