"""Sliding windows over one metric stream and the aggregates defined on them.

One WindowState is shared by every subscription watching the same
(endpoint, metric, window), whatever it aggregates. Accumulators are
enabled on demand: the sorted mirror only exists if an order statistic
needs it, the running moments only if mean or variance do.

All windows are event-time: a duration window keeps samples with
ts > newest_ts - seconds*1000, and eviction happens on push, so an
evaluation always sees the window as of the sample that triggered it.
"""

from __future__ import annotations

import math
from bisect import bisect_left, insort
from collections import deque

from .dsl import Aggregator, AggKind, WindowKind, WindowSpec
from .errors import EmptyWindow

# Running moments drift; a periodic exact pass bounds the error.
RECOMPUTE_EVERY = 4096

# Which accumulator each aggregate kind needs.
_ORDER_KINDS = frozenset({AggKind.MIN, AggKind.MAX, AggKind.MEDIAN, AggKind.PERCENTILE})
_MOMENT_KINDS = frozenset({AggKind.MEAN, AggKind.STDDEV, AggKind.VARIANCE})


class WindowState:
    """The samples currently inside one window, plus derived accumulators."""

    __slots__ = (
        "spec",
        "_ts",
        "_values",
        "_order",
        "_mean",
        "_m2",
        "_pushes",
    )

    def __init__(self, spec: WindowSpec):
        self.spec = spec.normalized()
        self._ts: deque[int] = deque()
        self._values: deque[float] = deque()
        self._order: list[float] | None = None
        self._mean: float | None = None
        self._m2 = 0.0
        self._pushes = 0

    def __len__(self) -> int:
        return len(self._values)

    def require(self, kind: AggKind) -> None:
        """Enable the accumulator `kind` reads, backfilling from the window."""
        if kind in _ORDER_KINDS and self._order is None:
            self._order = sorted(self._values)
        elif kind in _MOMENT_KINDS and self._mean is None:
            self._recompute_moments()

    def push(self, value: float, ts: int) -> None:
        self._ts.append(ts)
        self._values.append(value)
        if self._order is not None:
            insort(self._order, value)
        if self._mean is not None:
            n = len(self._values)
            d = value - self._mean
            self._mean += d / n
            self._m2 += d * (value - self._mean)
        self._evict(ts)
        self._pushes += 1
        if self._mean is not None and self._pushes % RECOMPUTE_EVERY == 0:
            self._recompute_moments()

    def _evict(self, now_ts: int) -> None:
        if self.spec.kind is WindowKind.COUNT:
            limit = self.spec.length
            while len(self._values) > limit:
                self._drop_oldest()
        else:
            horizon = now_ts - self.spec.length * 1000
            while self._ts and self._ts[0] <= horizon:
                self._drop_oldest()

    def _drop_oldest(self) -> None:
        self._ts.popleft()
        v = self._values.popleft()
        if self._order is not None:
            del self._order[bisect_left(self._order, v)]
        if self._mean is not None:
            n = len(self._values)
            if n == 0:
                self._mean, self._m2 = 0.0, 0.0
            else:
                d = v - self._mean
                self._mean -= d / n
                removed = d * (v - self._mean)
                self._m2 -= removed
                # Removal cancels catastrophically when it wipes out most of
                # the second moment (an outlier leaving a small window); the
                # survivors' spread is then noise, so recompute it exactly.
                if self._m2 < 0.0 or self._m2 <= 1e-4 * abs(removed):
                    self._recompute_moments()

    def _recompute_moments(self) -> None:
        n = len(self._values)
        if n == 0:
            self._mean, self._m2 = 0.0, 0.0
            return
        mean = math.fsum(self._values) / n
        self._mean = mean
        self._m2 = math.fsum((v - mean) ** 2 for v in self._values)

    def latest(self) -> tuple[float, int]:
        if not self._values:
            raise EmptyWindow(str(self.spec))
        return self._values[-1], self._ts[-1]

    def aggregate(self, agg: Aggregator) -> float:
        n = len(self._values)
        if n == 0:
            raise EmptyWindow(str(self.spec))
        kind = agg.kind
        if kind is AggKind.VALUE:
            return self._values[-1]
        if kind in _ORDER_KINDS:
            order = self._order
            if order is None:
                raise RuntimeError("order accumulator not enabled; call require()")
            if kind is AggKind.MIN:
                return order[0]
            if kind is AggKind.MAX:
                return order[-1]
            if kind is AggKind.MEDIAN:
                mid = n // 2
                if n % 2:
                    return order[mid]
                return (order[mid - 1] + order[mid]) / 2.0
            # nearest-rank percentile, 1-based rank ceil(p/100 * n)
            rank = math.ceil(agg.p / 100.0 * n)
            return order[min(max(rank, 1), n) - 1]
        if self._mean is None:
            raise RuntimeError("moment accumulator not enabled; call require()")
        if kind is AggKind.MEAN:
            return self._mean
        var = self._m2 / n
        if var < 0.0:
            var = 0.0
        if kind is AggKind.VARIANCE:
            return var
        return math.sqrt(var)


class WindowTable:
    """All window states on one node, keyed by stream and window shape.

    Pushes fan one sample out to every window watching its stream; the
    per-stream index keeps that a list walk, not a dict scan.
    """

    def __init__(self):
        self._states: dict[tuple, WindowState] = {}
        self._by_stream: dict[tuple, list[WindowState]] = {}
        self._refs: dict[tuple, int] = {}

    def acquire(self, endpoint, metric: str, spec: WindowSpec, kind: AggKind) -> WindowState:
        norm = spec.normalized()
        key = (endpoint, metric, norm)
        state = self._states.get(key)
        if state is None:
            state = WindowState(norm)
            self._states[key] = state
            self._by_stream.setdefault((endpoint, metric), []).append(state)
            self._refs[key] = 0
        state.require(kind)
        self._refs[key] += 1
        return state

    def release(self, endpoint, metric: str, spec: WindowSpec) -> None:
        key = (endpoint, metric, spec.normalized())
        refs = self._refs.get(key)
        if refs is None:
            return
        refs -= 1
        if refs > 0:
            self._refs[key] = refs
            return
        state = self._states.pop(key)
        del self._refs[key]
        stream = (endpoint, metric)
        states = self._by_stream[stream]
        states.remove(state)
        if not states:
            del self._by_stream[stream]

    def push(self, endpoint, metric: str, value: float, ts: int) -> None:
        for state in self._by_stream.get((endpoint, metric), ()):
            state.push(value, ts)

    def __len__(self) -> int:
        return len(self._states)
