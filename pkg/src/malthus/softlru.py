"""Software LRU cache with eviction attribution.

Stands in for a small ideally-associative shared cache: each entry remembers
which thread installed it, so evictions can be split into self-displacement
and displacement caused by other threads (the destructive-interference
signal).  Not internally locked; the benchmark's lock serializes access.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    self_evictions: int = 0
    other_evictions: int = 0

    @property
    def evictions(self) -> int:
        return self.self_evictions + self.other_evictions

    @property
    def miss_rate(self) -> float:
        total = self.hits + self.misses
        return self.misses / total if total else 0.0

    @property
    def other_eviction_fraction(self) -> float:
        total = self.evictions
        return self.other_evictions / total if total else 0.0


class SoftLRUCache:
    """Capacity-bounded map with move-to-front recency.

    On a miss the key itself is installed as the value and entries are
    trimmed from the cold end until the count fits the capacity again.
    """

    def __init__(self, capacity: int = 10000) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: OrderedDict = OrderedDict()  # key -> installer id
        self.stats = CacheStats()

    def __len__(self) -> int:
        return len(self._entries)

    def lookup_or_install(self, key, thread_id: int) -> bool:
        """Return True on hit (entry refreshed), False on miss (installed)."""
        entries = self._entries
        if key in entries:
            entries.move_to_end(key)
            self.stats.hits += 1
            return True
        self.stats.misses += 1
        entries[key] = thread_id
        while len(entries) > self.capacity:
            _, installer = entries.popitem(last=False)
            if installer == thread_id:
                self.stats.self_evictions += 1
            else:
                self.stats.other_evictions += 1
        return False

    def displacement_stats(self) -> CacheStats:
        """Snapshot of the counters (call only when quiesced)."""
        return CacheStats(**vars(self.stats))
