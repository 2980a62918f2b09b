"""Discrete-event simulation substrate: virtual clock, event queue, seeded RNG streams.

Time is an integer number of microseconds since simulation start.  All
hardware latencies modeled elsewhere (4 ms injection period, 18 ms frame
repair, reload durations) are exact multiples of 1 us, so the clock never
accumulates floating-point drift.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class SchedulingError(Exception):
    """Raised when an event is scheduled in the past."""


@dataclass(frozen=True)
class Event:
    """A scheduled occurrence.  Equal fire_at ties break on ascending seq."""

    fire_at: int
    target: str
    kind: str
    params: tuple = ()
    seq: int = -1


class SeededRng:
    """A named, independently seeded random stream.

    Identical (seed, label) pairs produce identical draw sequences on any
    platform; distinct labels forked from the same root are independent.
    """

    def __init__(self, seed: int, label: str = ""):
        self.seed = seed
        self.label = label
        self.gen = np.random.Generator(np.random.PCG64(seed))

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)

    def random(self, size=None):
        return self.gen.random(size)

    def choice(self, seq, size=None, replace=True):
        return self.gen.choice(seq, size=size, replace=replace)

    def shuffle(self, seq):
        self.gen.shuffle(seq)


def derive_stream_seed(root_seed: int, label: str) -> int:
    """Deterministic child seed from (root seed, label)."""
    digest = hashlib.blake2b(
        f"{root_seed}:{label}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


class SimEngine:
    """Single-threaded event loop with a monotone microsecond clock.

    Handlers are registered per target id; an event with no registered
    handler is still counted as processed (useful for pure accounting
    tests).  Cancellation is lazy: cancelled ids are skipped on pop and
    not counted.
    """

    def __init__(self, seed: int = 0, log_events: bool = False):
        self.seed = seed
        self.now = 0
        self.processed = 0
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._cancelled: set[int] = set()
        self._handlers: dict[str, Callable[[Event], None]] = {}
        self.event_log: Optional[list[str]] = [] if log_events else None

    # -- randomness ---------------------------------------------------------

    def fork_rng(self, label: str) -> SeededRng:
        """Child stream deterministically derived from (root seed, label)."""
        return SeededRng(derive_stream_seed(self.seed, label), label)

    # -- scheduling ---------------------------------------------------------

    def register(self, target: str, handler: Callable[[Event], None]) -> None:
        self._handlers[target] = handler

    def schedule(self, fire_at: int, target: str, kind: str,
                 params: tuple = ()) -> int:
        """Enqueue an event; returns an id usable for cancellation."""
        if fire_at < self.now:
            raise SchedulingError(
                f"cannot schedule at t={fire_at} us (clock is {self.now} us)")
        seq = self._seq
        self._seq += 1
        ev = Event(fire_at, target, kind, params, seq)
        heapq.heappush(self._heap, (fire_at, seq, ev))
        return seq

    def schedule_in(self, delay: int, target: str, kind: str,
                    params: tuple = ()) -> int:
        return self.schedule(self.now + delay, target, kind, params)

    def cancel(self, event_id: int) -> None:
        self._cancelled.add(event_id)

    def pending(self) -> int:
        return sum(1 for _, s, _e in self._heap if s not in self._cancelled)

    # -- execution ----------------------------------------------------------

    def run_until(self, t_end: int) -> int:
        """Process all events with fire_at <= t_end; clock ends at t_end."""
        if t_end < self.now:
            raise SchedulingError(
                f"run_until({t_end}) is in the past (clock is {self.now})")
        count = 0
        while self._heap and self._heap[0][0] <= t_end:
            fire_at, seq, ev = heapq.heappop(self._heap)
            if seq in self._cancelled:
                self._cancelled.discard(seq)
                continue
            assert fire_at >= self.now, "clock would move backwards"
            self.now = fire_at
            if self.event_log is not None:
                self.event_log.append(f"{ev.fire_at} {ev.target} {ev.kind}")
            handler = self._handlers.get(ev.target)
            if handler is not None:
                handler(ev)
            count += 1
        self.now = t_end
        self.processed += count
        return count
