"""Deterministic discrete-event core: virtual clock, event queue, seeded streams.

Virtual time is an integer count of microseconds. Events are totally ordered
by ``(fire_at, seq)`` where ``seq`` is assigned at scheduling time, so events
sharing a timestamp fire in the order they were scheduled.
"""

from __future__ import annotations

import heapq
import math
import random
from typing import Any, Callable, NamedTuple, Optional

US_PER_MS = 1_000
US_PER_S = 1_000_000


def ms(value: float) -> int:
    """Milliseconds to integer microseconds of virtual time."""
    return int(round(value * US_PER_MS))


def seconds(value: float) -> int:
    return int(round(value * US_PER_S))


class Event(NamedTuple):
    fire_at: int
    seq: int
    target: str
    action: str
    fn: Callable[..., Any]
    args: tuple


class RngStream:
    """Independent random stream keyed by ``(seed, stream_id)``.

    String seeding in :mod:`random` goes through SHA-512, so the same pair
    yields the same draw sequence in every process.
    """

    __slots__ = ("seed", "stream_id", "_rng", "random")

    def __init__(self, seed: int, stream_id: str):
        self.seed = int(seed)
        self.stream_id = stream_id
        self._rng = random.Random(f"{self.seed}/{stream_id}")
        self.random = self._rng.random

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self._rng.random()

    def expovariate(self, rate: float) -> float:
        return -math.log(1.0 - self._rng.random()) / rate

    def randrange(self, n: int) -> int:
        return self._rng.randrange(n)

    def pick(self, cumulative: list[float], items: list) -> Any:
        """Draw from ``items`` given their cumulative probabilities."""
        u = self._rng.random() * cumulative[-1]
        lo, hi = 0, len(cumulative) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if cumulative[mid] > u:
                hi = mid
            else:
                lo = mid + 1
        return items[lo]


class TraceFile:
    """Line sink writing ``time,seq,target,action`` records to a path."""

    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8", newline="\n")

    def append(self, line: str) -> None:
        self._fh.write(line)
        self._fh.write("\n")

    def close(self) -> None:
        self._fh.close()


class Engine:
    """Single-threaded event loop.

    ``trace`` is any object with an ``append(str)`` method (a list works);
    when given, one line is recorded per processed event plus any notes the
    handlers emit through :meth:`note`.
    """

    def __init__(self, seed: int = 0, trace: Optional[Any] = None):
        self.seed = int(seed)
        self.now = 0
        self.processed = 0
        self.scheduled = 0
        self._queue: list[Event] = []
        self._seq = 0
        self._cur_seq = -1
        self._trace = trace
        self.tracing = trace is not None
        self._streams: dict[str, RngStream] = {}

    def stream(self, stream_id: str) -> RngStream:
        rng = self._streams.get(stream_id)
        if rng is None:
            rng = self._streams[stream_id] = RngStream(self.seed, stream_id)
        return rng

    def schedule(self, delay: int, fn: Callable[..., Any], *args,
                 target: str = "", action: str = "") -> Event:
        if delay < 0:
            raise ValueError(f"negative delay {delay}")
        ev = Event(self.now + delay, self._seq, target, action, fn, args)
        self._seq += 1
        self.scheduled += 1
        heapq.heappush(self._queue, ev)
        return ev

    def schedule_at(self, when: int, fn: Callable[..., Any], *args,
                    target: str = "", action: str = "") -> Event:
        return self.schedule(when - self.now, fn, *args, target=target, action=action)

    def pending(self) -> int:
        return len(self._queue)

    def peek_time(self) -> Optional[int]:
        return self._queue[0].fire_at if self._queue else None

    def note(self, target: str, action: str) -> None:
        """Append a domain record to the trace under the current event."""
        if self._trace is not None:
            self._trace.append(f"{self.now},{self._cur_seq},{target},{action}")

    def run_until(self, horizon: int) -> int:
        if horizon < self.now:
            raise ValueError(f"horizon {horizon} is before now={self.now}")
        queue = self._queue
        pop = heapq.heappop
        trace = self._trace
        count = 0
        while queue and queue[0].fire_at <= horizon:
            ev = pop(queue)
            self.now = ev.fire_at
            self._cur_seq = ev.seq
            count += 1
            if trace is not None:
                trace.append(f"{ev.fire_at},{ev.seq},{ev.target},{ev.action}")
            ev.fn(*ev.args)
        self.now = horizon
        self.processed += count
        return count

    def run(self) -> int:
        """Drain the queue completely."""
        count = 0
        while self._queue:
            count += self.run_until(self._queue[0].fire_at)
        return count
