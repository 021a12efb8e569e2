"""Clock abstraction so every component can run on wall time or a test-driven clock."""

from __future__ import annotations

import time


class Clock:
    def now_ms(self) -> int:
        raise NotImplementedError


class WallClock(Clock):
    def now_ms(self) -> int:
        return int(time.time() * 1000)


class SimClock(Clock):
    """Manually advanced clock; the harness owns the timeline."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms

    def now_ms(self) -> int:
        return self._now

    def advance(self, delta_ms: int) -> int:
        self._now += delta_ms
        return self._now

    def set(self, now_ms: int) -> None:
        if now_ms < self._now:
            raise ValueError("SimClock cannot move backwards")
        self._now = now_ms
