"""Renewal-process clocks and the event queue driving a trial.

Every node owns a gradient clock with rate ``mu_i``; one extra clock with rate
``beta`` triggers the network-wide regularization exchange. Each clock owns an
independent generator so that the realised arrival times do not depend on
how the queue is consumed (one event at a time or in bulk).
"""
from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ConfigurationError

DISTRIBUTIONS = ("exponential", "fixed", "uniform")

_BLOCK = 1024


class EventKind(IntEnum):
    # value order is the tie-break order at equal times
    SYNC = 0
    GRADIENT = 1


SYNC_NODE = -1


@dataclass(frozen=True, order=True)
class Event:
    time: float
    kind: EventKind
    node: int = SYNC_NODE


@dataclass
class RenewalClock:
    """I.i.d. inter-arrival times with mean ``1/rate``.

    ``uniform`` draws ``U(lo, hi)`` and rescales it so the mean stays ``1/rate``.
    """

    rate: float
    rng: np.random.Generator
    distribution: str = "exponential"
    lo: float = 0.0
    hi: float = 2.0
    next_fire: float = field(default=np.inf)

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigurationError(f"unknown clock distribution {self.distribution!r}")
        if self.rate < 0:
            raise ConfigurationError(f"negative clock rate {self.rate}")
        if self.distribution == "uniform" and not (0 <= self.lo < self.hi):
            raise ConfigurationError("uniform clock needs 0 <= lo < hi")
        self._buf = np.empty(0)
        self.next_fire = self.intervals(1)[0] if self.rate > 0 else np.inf

    def intervals(self, size) -> np.ndarray:
        mean = 1.0 / self.rate
        if self.distribution == "exponential":
            return self.rng.exponential(mean, size)
        if self.distribution == "fixed":
            return np.full(size, mean)
        u = self.rng.uniform(self.lo, self.hi, size)
        return u * (2.0 * mean / (self.lo + self.hi))

    def _take(self, size) -> np.ndarray:
        # drawn-but-unused intervals are consumed first, keeping the stream
        # identical whether arrivals are taken one by one or in blocks
        buf = self._buf
        if buf.size >= size:
            self._buf = buf[size:]
            return buf[:size]
        self._buf = np.empty(0)
        return np.concatenate([buf, self.intervals(size - buf.size)])

    def advance(self) -> float:
        """Return the pending arrival and schedule the next one."""
        t = self.next_fire
        self.next_fire = t + self._take(1)[0]
        return t

    def arrivals_until(self, t_end) -> np.ndarray:
        """All pending arrivals ``<= t_end``; the clock is left past ``t_end``."""
        if self.next_fire > t_end:
            return np.empty(0)
        chunks = []
        while True:
            steps = self._take(_BLOCK)
            times = np.cumsum(np.concatenate([[self.next_fire], steps]))
            inside = int(np.searchsorted(times, t_end, side="right"))
            if inside <= _BLOCK:
                chunks.append(times[:inside])
                self.next_fire = times[inside]
                self._buf = np.concatenate([steps[inside:], self._buf])
                break
            chunks.append(times[:_BLOCK])
            self.next_fire = times[_BLOCK]
        return np.concatenate(chunks)


class EventQueue:
    """Pending arrivals of all clocks; pops in (time, kind, node) order."""

    def __init__(self, clocks, sync_clock):
        self.clocks = list(clocks)
        self.sync_clock = sync_clock
        self._heap = []
        for i, c in enumerate(self.clocks):
            if np.isfinite(c.next_fire):
                heapq.heappush(self._heap, Event(c.next_fire, EventKind.GRADIENT, i))
        if sync_clock is not None and np.isfinite(sync_clock.next_fire):
            heapq.heappush(self._heap, Event(sync_clock.next_fire, EventKind.SYNC))

    def __len__(self):
        return len(self._heap)

    @property
    def n_nodes(self) -> int:
        return len(self.clocks)

    def peek(self) -> Event:
        if not self._heap:
            raise IndexError("event queue is empty")
        return self._heap[0]

    def pop(self) -> Event:
        if not self._heap:
            raise IndexError("event queue is empty")
        ev = heapq.heappop(self._heap)
        clock = self.sync_clock if ev.kind == EventKind.SYNC else self.clocks[ev.node]
        clock.advance()
        heapq.heappush(self._heap, Event(clock.next_fire, ev.kind, ev.node))
        return ev

    def drain(self, t_end):
        """Pop every event with ``time <= t_end`` at once.

        Returns ``(times, kinds, nodes)`` arrays in dequeue order; equivalent
        to calling :meth:`pop` repeatedly.
        """
        times, kinds, nodes = [], [], []
        for i, c in enumerate(self.clocks):
            t = c.arrivals_until(t_end)
            times.append(t)
            kinds.append(np.full(t.size, int(EventKind.GRADIENT)))
            nodes.append(np.full(t.size, i))
        if self.sync_clock is not None:
            t = self.sync_clock.arrivals_until(t_end)
            times.append(t)
            kinds.append(np.full(t.size, int(EventKind.SYNC)))
            nodes.append(np.full(t.size, SYNC_NODE))
        times = np.concatenate(times)
        kinds = np.concatenate(kinds).astype(np.int64)
        nodes = np.concatenate(nodes).astype(np.int64)
        order = np.lexsort((nodes, kinds, times))
        self._heap = [Event(c.next_fire, EventKind.GRADIENT, i) for i, c in enumerate(self.clocks)
                      if np.isfinite(c.next_fire)]
        if self.sync_clock is not None and np.isfinite(self.sync_clock.next_fire):
            self._heap.append(Event(self.sync_clock.next_fire, EventKind.SYNC))
        heapq.heapify(self._heap)
        return times[order], kinds[order], nodes[order]


def schedule_init(mus, beta, rng, distribution="exponential", lo=0.0, hi=2.0) -> EventQueue:
    """Build the queue: one gradient clock per node plus the sync clock.

    ``beta = 0`` disables regularization events.
    """
    mus = np.asarray(mus, dtype=float)
    if np.any(mus <= 0):
        raise ConfigurationError("gradient rates must be positive")
    if beta < 0:
        raise ConfigurationError("sync rate must be non-negative")
    streams = rng.spawn(len(mus) + 1)
    clocks = [RenewalClock(mu, g, distribution, lo, hi) for mu, g in zip(mus, streams)]
    sync = RenewalClock(beta, streams[-1], distribution, lo, hi) if beta > 0 else None
    return EventQueue(clocks, sync)


def next_event(queue: EventQueue) -> Event:
    return queue.pop()


def write_trace(path, times, kinds, nodes):
    """Debug dump of an event sequence as ``time,kind,node`` CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "kind", "node"])
        for t, k, n in zip(times, kinds, nodes):
            w.writerow([repr(float(t)), EventKind(k).name.lower(), int(n)])
