"""Egress queue disciplines: tail-drop, CoDel, and FQ-CoDel.

The CoDel control law follows the published algorithm: it watches packet
sojourn time at dequeue, enters a dropping phase once the sojourn has stayed
above `target` for a full `interval`, and then spaces successive actions by
interval/sqrt(count). With ECN enabled, a control-law action on an ECT packet
sets CE and forwards it instead of dropping. The hard queue limit always
drops and never marks.

FQ-CoDel hashes flows into 1024 sub-queues, runs the control law per
sub-queue, and schedules them with deficit round robin over a new-flows /
old-flows list pair.
"""
from __future__ import annotations

from collections import deque
from math import sqrt

from .engine import MS
from .packets import CE, ECT0, ECT1

# A backlog of at most one MTU is exempt from the control law.
MAX_PACKET_BYTES = 1514
DRR_QUANTUM = 1514
NUM_SUBQUEUES = 1024
# Re-entering the dropping phase within this many intervals of the last
# scheduled action reuses the previous count (minus two) instead of restarting.
REENTRY_WINDOW_INTERVALS = 16

DEFAULT_TARGET = 5 * MS
DEFAULT_INTERVAL = 100 * MS
DEFAULT_HARD_LIMIT = 1000


class AqmParams:
    """Runtime-settable control parameters shared by a discipline instance."""

    __slots__ = ("target", "interval", "hard_limit", "ecn_enabled")

    def __init__(self, target: int = DEFAULT_TARGET, interval: int = DEFAULT_INTERVAL,
                 hard_limit: int = DEFAULT_HARD_LIMIT, ecn_enabled: bool = True):
        if hard_limit < 1:
            raise ValueError("hard_limit must be >= 1")
        self.hard_limit = hard_limit
        self.ecn_enabled = ecn_enabled
        self.target = 0
        self.interval = 0
        self.set(target, interval)

    def set(self, target: int, interval: int) -> None:
        if target <= 0 or interval <= 0:
            raise ValueError("target and interval must be positive")
        if target >= interval:
            raise ValueError(f"target must be below interval (got {target} >= {interval})")
        self.target = target
        self.interval = interval


class QueueStats:
    """Packet counters plus time-weighted occupancy integration.

    Queue length is derived from the counters, so one stats object can be
    shared by all sub-queues of FQ-CoDel and still report the total.
    """

    __slots__ = ("enqueued", "forwarded", "marked", "dropped_law", "dropped_overflow",
                 "area_pkt_ns", "last_ns", "max_queued")

    def __init__(self):
        self.enqueued = 0
        self.forwarded = 0
        self.marked = 0
        self.dropped_law = 0
        self.dropped_overflow = 0
        self.area_pkt_ns = 0
        self.last_ns = 0
        self.max_queued = 0

    def qlen(self) -> int:
        return self.enqueued - self.forwarded - self.dropped_law - self.dropped_overflow

    def _advance(self, now: int) -> None:
        self.area_pkt_ns += self.qlen() * (now - self.last_ns)
        self.last_ns = now

    def on_enqueue(self, now: int) -> None:
        self._advance(now)
        self.enqueued += 1
        q = self.qlen()
        if q > self.max_queued:
            self.max_queued = q

    def on_forward(self, now: int) -> None:
        self._advance(now)
        self.forwarded += 1

    def on_drop_law(self, now: int) -> None:
        self._advance(now)
        self.dropped_law += 1

    def on_drop_overflow(self, now: int) -> None:
        self._advance(now)
        self.dropped_overflow += 1

    def drain_area(self, now: int) -> int:
        """Occupancy integral (packet*ns) since the previous drain."""
        self._advance(now)
        area = self.area_pkt_ns
        self.area_pkt_ns = 0
        return area

    def drain_peak(self) -> int:
        """Peak queue length since the previous drain."""
        peak = self.max_queued
        self.max_queued = self.qlen()
        return peak


class CodelState:
    """Per-queue control-law state."""

    __slots__ = ("first_above_time", "drop_next", "count", "last_count", "dropping")

    def __init__(self):
        self.first_above_time = 0
        self.drop_next = 0
        self.count = 0
        self.last_count = 0
        self.dropping = False


def control_interval(interval: int, count: int) -> int:
    """Spacing between control-law actions: interval / sqrt(count), in ns."""
    return int(round(interval / sqrt(count)))


class TailDrop:
    """FIFO with a hard packet limit; drops on overflow, never marks."""

    kind = "taildrop"
    __slots__ = ("params", "_q", "stats")

    def __init__(self, params: AqmParams):
        self.params = params
        self._q = deque()
        self.stats = QueueStats()

    def __len__(self) -> int:
        return len(self._q)

    @property
    def backlog_bytes(self) -> int:
        return sum(p.size_bytes for p in self._q)

    def enqueue(self, pkt, now: int) -> bool:
        if len(self._q) >= self.params.hard_limit:
            self.stats.on_drop_overflow(now)
            return False
        pkt.enq_ns = now
        self._q.append(pkt)
        self.stats.on_enqueue(now)
        return True

    def dequeue(self, now: int):
        if not self._q:
            return None
        pkt = self._q.popleft()
        self.stats.on_forward(now)
        return pkt

    def set_params(self, target: int, interval: int) -> None:
        self.params.set(target, interval)

    def occupancy_pct(self) -> float:
        return 100.0 * len(self._q) / self.params.hard_limit

    def queued_packets(self):
        return iter(self._q)


class Codel:
    """Single FIFO managed by the CoDel control law."""

    kind = "codel"
    __slots__ = ("params", "state", "stats", "_q", "backlog_bytes", "_check_limit")

    def __init__(self, params: AqmParams, stats: QueueStats | None = None,
                 check_limit: bool = True):
        self.params = params
        self.state = CodelState()
        self.stats = stats if stats is not None else QueueStats()
        self._q = deque()
        self.backlog_bytes = 0
        self._check_limit = check_limit

    def __len__(self) -> int:
        return len(self._q)

    def enqueue(self, pkt, now: int) -> bool:
        if self._check_limit and self.stats.qlen() >= self.params.hard_limit:
            self.stats.on_drop_overflow(now)
            return False
        pkt.enq_ns = now
        self._q.append(pkt)
        self.backlog_bytes += pkt.size_bytes
        self.stats.on_enqueue(now)
        return True

    def _pop(self, now: int):
        """Head packet with sojourn verdict, or (None, False) on empty."""
        if not self._q:
            self.state.first_above_time = 0
            return None, False
        pkt = self._q.popleft()
        self.backlog_bytes -= pkt.size_bytes
        st = self.state
        p = self.params
        if now - pkt.enq_ns < p.target or self.backlog_bytes <= MAX_PACKET_BYTES:
            st.first_above_time = 0
            return pkt, False
        if st.first_above_time == 0:
            st.first_above_time = now + p.interval
            return pkt, False
        return pkt, now >= st.first_above_time

    def _action(self, pkt, now: int) -> bool:
        """Apply one control-law action. True if the packet was marked (and
        should be forwarded), False if it was dropped."""
        if self.params.ecn_enabled and (pkt.ecn == ECT0 or pkt.ecn == ECT1):
            pkt.ecn = CE
            self.stats.marked += 1
            return True
        self.stats.on_drop_law(now)
        return False

    def dequeue(self, now: int):
        pkt, ok_to_drop = self._pop(now)
        if pkt is None:
            return None
        st = self.state
        p = self.params
        if st.dropping:
            if not ok_to_drop:
                st.dropping = False
            else:
                while st.dropping and now >= st.drop_next:
                    st.count += 1
                    if self._action(pkt, now):
                        st.drop_next += control_interval(p.interval, st.count)
                        self.stats.on_forward(now)
                        return pkt
                    pkt, ok_to_drop = self._pop(now)
                    if pkt is None:
                        return None
                    if not ok_to_drop:
                        st.dropping = False
                    else:
                        st.drop_next += control_interval(p.interval, st.count)
        elif ok_to_drop:
            # Enter the dropping phase with one immediate action.
            st.dropping = True
            if now - st.drop_next < REENTRY_WINDOW_INTERVALS * p.interval:
                st.count = st.count - 2 if st.count > 2 else 1
            else:
                st.count = 1
            st.last_count = st.count
            marked = self._action(pkt, now)
            st.drop_next = now + control_interval(p.interval, st.count)
            if not marked:
                pkt, _ = self._pop(now)
                if pkt is None:
                    return None
        self.stats.on_forward(now)
        return pkt

    def set_params(self, target: int, interval: int) -> None:
        # Control-law state (count, dropping, schedule) survives retuning.
        self.params.set(target, interval)

    def occupancy_pct(self) -> float:
        return 100.0 * self.stats.qlen() / self.params.hard_limit

    def queued_packets(self):
        return iter(self._q)


class _SubQueue(Codel):
    """One FQ-CoDel bucket: a CoDel queue plus DRR bookkeeping."""

    __slots__ = ("deficit", "active")

    def __init__(self, params: AqmParams, stats: QueueStats):
        super().__init__(params, stats=stats, check_limit=False)
        self.deficit = 0
        self.active = 0  # 0 = parked, 1 = on new list, 2 = on old list


def mix64(x: int) -> int:
    """splitmix64 finalizer; deterministic flow-to-bucket hashing."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


class FqCodel:
    """Deficit round robin over hashed sub-queues, CoDel applied per queue."""

    kind = "fq_codel"
    __slots__ = ("params", "stats", "quantum", "num_queues", "hash_seed",
                 "_subs", "_new", "_old")

    def __init__(self, params: AqmParams, hash_seed: int = 0,
                 quantum: int = DRR_QUANTUM, num_queues: int = NUM_SUBQUEUES):
        self.params = params
        self.stats = QueueStats()
        self.quantum = quantum
        self.num_queues = num_queues
        self.hash_seed = hash_seed
        self._subs = [_SubQueue(params, self.stats) for _ in range(num_queues)]
        self._new = deque()
        self._old = deque()

    def __len__(self) -> int:
        return self.stats.qlen()

    def bucket_of(self, flow_id: int) -> int:
        return mix64(flow_id ^ self.hash_seed) % self.num_queues

    def enqueue(self, pkt, now: int) -> bool:
        if self.stats.qlen() >= self.params.hard_limit:
            self.stats.on_drop_overflow(now)
            return False
        idx = self.bucket_of(pkt.flow_id)
        sub = self._subs[idx]
        sub.enqueue(pkt, now)
        if sub.active == 0:
            sub.deficit = self.quantum
            sub.active = 1
            self._new.append(idx)
        return True

    def dequeue(self, now: int):
        while True:
            if self._new:
                lst = self._new
                from_new = True
            elif self._old:
                lst = self._old
                from_new = False
            else:
                return None
            idx = lst[0]
            sub = self._subs[idx]
            if sub.deficit <= 0:
                sub.deficit += self.quantum
                lst.popleft()
                self._old.append(idx)
                sub.active = 2
                continue
            pkt = sub.dequeue(now)
            if pkt is None:
                lst.popleft()
                if from_new and self._old:
                    # Empty new queue parks at the old-list tail for one cycle.
                    self._old.append(idx)
                    sub.active = 2
                else:
                    sub.active = 0
                continue
            sub.deficit -= pkt.size_bytes
            return pkt

    def set_params(self, target: int, interval: int) -> None:
        self.params.set(target, interval)

    def occupancy_pct(self) -> float:
        return 100.0 * self.stats.qlen() / self.params.hard_limit

    def queued_packets(self):
        for sub in self._subs:
            yield from sub.queued_packets()


def make_discipline(kind: str, params: AqmParams, hash_seed: int = 0):
    if kind == "taildrop":
        return TailDrop(params)
    if kind == "codel":
        return Codel(params)
    if kind == "fq_codel":
        return FqCodel(params, hash_seed=hash_seed)
    raise ValueError(f"unknown discipline: {kind!r}")
