"""Discrete-event core: integer-nanosecond clock and an ordered event heap.

All simulation timestamps are integer nanoseconds so that repeated runs with
the same seed produce bit-identical results on any platform.
"""
from __future__ import annotations

import heapq

US = 1_000
MS = 1_000_000
SECOND = 1_000_000_000


def transmit_delay(size_bytes: int, bandwidth_bps: int, prop_delay_ns: int = 0) -> int:
    """Serialization plus propagation delay in integer ns (round-half-up)."""
    if bandwidth_bps <= 0:
        raise ValueError("bandwidth_bps must be positive")
    num = size_bytes * 8 * SECOND
    return (num + bandwidth_bps // 2) // bandwidth_bps + prop_delay_ns


class Simulator:
    """Virtual clock plus event queue; ties dequeue in insertion order."""

    __slots__ = ("now", "_heap", "_seq")

    def __init__(self):
        self.now = 0
        self._heap = []
        self._seq = 0

    def schedule(self, t: int, fn, *args) -> None:
        if t < self.now:
            raise RuntimeError(f"event scheduled in the past: {t} < {self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn, args))

    def pop_next(self):
        """Remove and return the next (time, fn, args) event; None when drained."""
        if not self._heap:
            return None
        t, _, fn, args = heapq.heappop(self._heap)
        self.now = t
        return t, fn, args

    def run(self, t_end: int) -> None:
        """Dispatch every event with timestamp <= t_end, then park the clock there."""
        heap = self._heap
        pop = heapq.heappop
        while heap and heap[0][0] <= t_end:
            t, _, fn, args = pop(heap)
            self.now = t
            fn(*args)
        self.now = t_end

    def __len__(self) -> int:
        return len(self._heap)
