"""Short-term context retention for endpoints that are part of an active
alert. Samples land here only while their endpoint is involved; retention
is by sample age, so diagnosis data survives the alert clearing and
disappears on its own once it goes stale.
"""

from __future__ import annotations

from collections import deque
from typing import Iterable

from .model import EndpointId, MetricSample

DEFAULT_TTL_MS = 24 * 3600 * 1000


class ContextStore:
    """Per-endpoint sample log with age-based expiry."""

    def __init__(self, ttl_ms: int = DEFAULT_TTL_MS):
        self.ttl_ms = ttl_ms
        self._data: dict[EndpointId, deque[tuple[int, str, float]]] = {}

    def append(self, endpoint: EndpointId, samples: Iterable[MetricSample]) -> None:
        log = self._data.get(endpoint)
        if log is None:
            log = self._data[endpoint] = deque()
        for s in samples:
            log.append((s.ts, s.metric, s.value))

    def expire(self, now_ms: int) -> int:
        """Drop samples strictly older than the TTL. A sample exactly at the
        TTL boundary is retained."""
        horizon = now_ms - self.ttl_ms
        evicted = 0
        empty = []
        for endpoint, log in self._data.items():
            while log and log[0][0] < horizon:
                log.popleft()
                evicted += 1
            if not log:
                empty.append(endpoint)
        for endpoint in empty:
            del self._data[endpoint]
        return evicted

    def query(
        self, endpoints: Iterable[EndpointId], from_ts: int, to_ts: int
    ) -> list[tuple[EndpointId, str, int, float]]:
        """Rows (endpoint, metric, ts, value) with from_ts <= ts <= to_ts,
        ordered by endpoint, then metric, then time."""
        rows = []
        for endpoint in endpoints:
            for ts, metric, value in self._data.get(endpoint, ()):
                if from_ts <= ts <= to_ts:
                    rows.append((endpoint, metric, ts, value))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        return rows

    def sample_count(self, endpoint: EndpointId | None = None) -> int:
        if endpoint is not None:
            return len(self._data.get(endpoint, ()))
        return sum(len(log) for log in self._data.values())

    def endpoints(self) -> list[EndpointId]:
        return list(self._data)

    def has(self, endpoint: EndpointId) -> bool:
        return endpoint in self._data
