"""Discrete-event engine: integer-nanosecond clock, ordered event queue and
seeded random streams.

All simulated time is kept as ``int`` nanoseconds so that long runs never
accumulate floating point drift. Events with equal fire times are processed
in insertion order.
"""

from __future__ import annotations

import heapq
import zlib
from typing import Any, Callable

import numpy as np

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000
NS_PER_US = 1_000

MASK64 = (1 << 64) - 1


def seconds(x: float) -> int:
    """Convert seconds to integer nanoseconds (rounded to nearest)."""
    return int(round(x * NS_PER_S))


def millis(x: float) -> int:
    return int(round(x * NS_PER_MS))


def to_seconds(t: int) -> float:
    return t / NS_PER_S


def to_millis(t: int) -> float:
    return t / NS_PER_MS


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class EventHandle:
    """Reference to a scheduled event, usable with :meth:`EventLoop.cancel`."""

    __slots__ = ("fire_at", "seq", "kind", "_entry")

    def __init__(self, fire_at: int, seq: int, kind: str, entry: list):
        self.fire_at = fire_at
        self.seq = seq
        self.kind = kind
        self._entry = entry

    @property
    def pending(self) -> bool:
        return self._entry[2] is not None

    def __repr__(self) -> str:
        state = "pending" if self.pending else "done"
        return f"EventHandle(t={self.fire_at}, seq={self.seq}, {self.kind}, {state})"


class EventLoop:
    """Single-threaded event loop.

    Heap entries are ``[fire_at, seq, callback, args]``; firing or cancelling an
    entry clears its callback slot, so cancellation is O(1) and lazy.
    """

    def __init__(self) -> None:
        self.now = 0
        self._heap: list[list] = []
        self._seq = 0
        self.processed = 0

    def schedule(self, t: int, callback: Callable[..., Any], *args: Any) -> EventHandle:
        if t < self.now:
            raise SchedulingError(f"cannot schedule at {t} ns, clock is at {self.now} ns")
        entry = [t, self._seq, callback, args]
        self._seq += 1
        heapq.heappush(self._heap, entry)
        kind = getattr(callback, "__name__", type(callback).__name__)
        return EventHandle(t, entry[1], kind, entry)

    def schedule_in(self, delay: int, callback: Callable[..., Any], *args: Any) -> EventHandle:
        return self.schedule(self.now + delay, callback, *args)

    def post(self, t: int, callback: Callable[..., Any], *args: Any) -> None:
        """Like :meth:`schedule` without building a handle (hot path)."""
        if t < self.now:
            raise SchedulingError(f"cannot schedule at {t} ns, clock is at {self.now} ns")
        heapq.heappush(self._heap, [t, self._seq, callback, args])
        self._seq += 1

    def cancel(self, handle: EventHandle) -> bool:
        entry = handle._entry
        if entry[2] is None:
            return False
        entry[2] = None
        return True

    def peek_time(self) -> int | None:
        heap = self._heap
        while heap and heap[0][2] is None:
            heapq.heappop(heap)
        return heap[0][0] if heap else None

    def run_until(self, t_end: int) -> int:
        """Process every pending event with ``fire_at <= t_end``.

        Returns the number of events processed. The clock is left at ``t_end``
        so that a subsequent schedule relative to "now" starts from there.
        """
        heap = self._heap
        pop = heapq.heappop
        n = 0
        while heap:
            entry = heap[0]
            if entry[0] > t_end:
                break
            pop(heap)
            callback = entry[2]
            if callback is None:
                continue
            entry[2] = None
            self.now = entry[0]
            callback(*entry[3])
            n += 1
        if t_end > self.now:
            self.now = t_end
        self.processed += n
        return n

    def __len__(self) -> int:
        return sum(1 for e in self._heap if e[2] is not None)


def stream_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one stochastic process.

    Identical ``(seed, label)`` pairs always yield identical sequences, and
    toggling one process does not perturb the draws of another.
    """
    ss = np.random.SeedSequence(entropy=seed & MASK64, spawn_key=(stream_key(label),))
    return np.random.Generator(np.random.PCG64(ss))


def splitmix64(x: int) -> int:
    """One splitmix64 output step applied to state ``x`` (already advanced)."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """Tiny counter-based generator shared bit-for-bit with the compiled engine.

    Used for per-attempt link error draws where both engine backends must see
    the same sequence.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int, label: str = "") -> None:
        self.state = splitmix64((seed ^ (stream_key(label) << 32)) & MASK64)

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return splitmix64(self.state)

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)
