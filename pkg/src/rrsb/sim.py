"""Event schedulers: deterministic virtual time and wall-clock real time.

Both expose the same small API (``now_us``, ``call_at``, ``call_later``,
``run_until``) so protocol state machines run unchanged in either mode.
Times are microseconds.
"""

from __future__ import annotations

import heapq
import itertools
import selectors
import time
from typing import Callable, Optional


class Timer:
    __slots__ = ("when", "fn", "args", "cancelled")

    def __init__(self, when, fn, args):
        self.when = when
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class VirtualScheduler:
    """Single-threaded discrete-event scheduler.

    Events at equal times run in the order they were scheduled, which keeps
    runs reproducible.
    """

    def __init__(self, start_us: float = 0):
        self._now = start_us
        self._heap: list = []
        self._counter = itertools.count()
        self.events_run = 0

    @property
    def now_us(self) -> float:
        return self._now

    def call_at(self, when: float, fn: Callable, *args) -> Timer:
        if when < self._now:
            when = self._now
        timer = Timer(when, fn, args)
        heapq.heappush(self._heap, (when, next(self._counter), timer))
        return timer

    def call_later(self, delay: float, fn: Callable, *args) -> Timer:
        return self.call_at(self._now + delay, fn, *args)

    def next_event_time(self) -> Optional[float]:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def run_until(self, until: float, stop: Optional[Callable[[], bool]] = None) -> bool:
        """Run events up to ``until``; return True if ``stop()`` became true."""
        heap = self._heap
        while heap and heap[0][0] <= until:
            when, _, timer = heapq.heappop(heap)
            if timer.cancelled:
                continue
            self._now = when
            self.events_run += 1
            timer.fn(*timer.args)
            if stop is not None and stop():
                return True
        if self._now < until:
            self._now = until
        return False

    def run(self) -> None:
        while (t := self.next_event_time()) is not None:
            self.run_until(t)


class RealtimeScheduler:
    """Wall-clock scheduler with socket readiness callbacks.

    ``now_us`` counts from construction, plus ``start_us``.
    """

    def __init__(self, start_us: float = 0):
        self._origin = time.monotonic_ns() // 1000 - start_us
        self._heap: list = []
        self._counter = itertools.count()
        self._selector = selectors.DefaultSelector()
        self.events_run = 0

    @property
    def now_us(self) -> float:
        return time.monotonic_ns() // 1000 - self._origin

    def call_at(self, when: float, fn: Callable, *args) -> Timer:
        timer = Timer(when, fn, args)
        heapq.heappush(self._heap, (when, next(self._counter), timer))
        return timer

    def call_later(self, delay: float, fn: Callable, *args) -> Timer:
        return self.call_at(self.now_us + delay, fn, *args)

    def add_reader(self, sock, callback: Callable[[], None]) -> None:
        self._selector.register(sock, selectors.EVENT_READ, callback)

    def remove_reader(self, sock) -> None:
        self._selector.unregister(sock)

    def run_until(self, until: float, stop: Optional[Callable[[], bool]] = None) -> bool:
        while True:
            now = self.now_us
            while self._heap and self._heap[0][0] <= now:
                _, _, timer = heapq.heappop(self._heap)
                if not timer.cancelled:
                    self.events_run += 1
                    timer.fn(*timer.args)
                    if stop is not None and stop():
                        return True
            now = self.now_us
            if now >= until:
                return False
            wake = until
            if self._heap:
                wake = min(wake, self._heap[0][0])
            timeout = max(0.0, (wake - now) / 1e6)
            if self._selector.get_map():
                for key, _ in self._selector.select(timeout):
                    key.data()
                    if stop is not None and stop():
                        return True
            else:
                time.sleep(timeout)

    def close(self) -> None:
        self._selector.close()
