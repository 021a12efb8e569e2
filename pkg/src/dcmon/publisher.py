"""The per-host agent: assembles metric batches and evaluates the simple
rules the manager offloads to the source.

Offloaded rules never leave the host's own streams (one endpoint, VALUE,
MIN, or MAX), and the publisher is their only evaluation site. It reports
matches as deltas: an absolute state on a rule's first evaluation, then
only changes, so the stream to the engine stays near-silent while nothing
interesting happens.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable

from .dsl import AggKind, CompiledSubscription
from .errors import OffloadCapExceeded, WrongHost
from .matching import BandSet
from .model import EndpointId, MetricBatch, MetricSample
from .windows import WindowTable

# Aggregates cheap enough to evaluate at the source.
OFFLOADABLE_KINDS = frozenset({AggKind.VALUE, AggKind.MIN, AggKind.MAX})
DEFAULT_OFFLOAD_CAP = 64


@dataclass(slots=True)
class OffloadMatch:
    """Source-side evaluation result, shipped with the batch."""

    compiled_id: str
    matched: bool
    observed: float
    ts: int


class ShipBuffer:
    """Outbound batches awaiting an engine connection, oldest dropped first."""

    def __init__(self, capacity: int = 100):
        self._q: deque = deque(maxlen=capacity)
        self.dropped = 0

    def put(self, item) -> None:
        if len(self._q) == self._q.maxlen:
            self.dropped += 1
        self._q.append(item)

    def drain(self) -> list:
        items = list(self._q)
        self._q.clear()
        return items

    def __len__(self) -> int:
        return len(self._q)


class Publisher:
    """One host's metric source."""

    def __init__(self, host: str, offload_cap: int = DEFAULT_OFFLOAD_CAP):
        self.host = host
        self.offload_cap = offload_cap
        self._windows = WindowTable()
        self._bands = BandSet(self._windows)
        self._offloaded: dict[str, CompiledSubscription] = {}
        self._seq: dict[tuple[EndpointId, str], int] = {}
        self._batch_seq = 0
        self.buffer = ShipBuffer()

    # --- offload management ------------------------------------------

    def apply_offload(self, cs: CompiledSubscription) -> None:
        if cs.endpoint.host != self.host:
            raise WrongHost(f"{cs.compiled_id} targets {cs.endpoint}, this host is {self.host}")
        if cs.agg.kind not in OFFLOADABLE_KINDS or cs.spatial:
            raise OffloadCapExceeded(
                f"{cs.compiled_id} is not offloadable ({cs.agg.kind.value}, arity {cs.spatial_arity})"
            )
        if cs.compiled_id in self._offloaded:
            return
        if len(self._offloaded) >= self.offload_cap:
            raise OffloadCapExceeded(
                f"host {self.host} already evaluates {len(self._offloaded)} rules"
            )
        self._bands.add(cs)
        self._offloaded[cs.compiled_id] = cs

    def remove_offload(self, compiled_id: str) -> bool:
        if compiled_id not in self._offloaded:
            return False
        self._bands.remove(compiled_id)
        del self._offloaded[compiled_id]
        return True

    @property
    def offloaded_count(self) -> int:
        return len(self._offloaded)

    # --- batch assembly ----------------------------------------------

    def make_batch(
        self,
        readings: Iterable[tuple[EndpointId, str, float]],
        ts: int,
        collected_at: int | None = None,
    ) -> MetricBatch:
        samples = []
        for endpoint, metric, value in readings:
            key = (endpoint, metric)
            seq = self._seq.get(key, 0) + 1
            self._seq[key] = seq
            samples.append(MetricSample(endpoint, metric, value, ts, seq))
        self._batch_seq += 1
        return MetricBatch(
            publisher=self.host,
            samples=samples,
            collected_at=ts if collected_at is None else collected_at,
            batch_seq=self._batch_seq,
        ).check()

    def evaluate_offloaded(self, batch: MetricBatch) -> list[OffloadMatch]:
        """Run the offloaded rules against this batch's samples."""
        if not self._offloaded:
            return []
        touched: dict[tuple[EndpointId, str], int] = {}
        for s in batch.samples:
            self._windows.push(s.endpoint, s.metric, s.value, s.ts)
            prev = touched.get((s.endpoint, s.metric))
            if prev is None or s.ts > prev:
                touched[(s.endpoint, s.metric)] = s.ts
        matches: list[OffloadMatch] = []
        for (endpoint, metric), sample_ts in touched.items():
            for result in self._bands.evaluate_stream(endpoint, metric, sample_ts):
                for tr in result.transitions:
                    matches.append(
                        OffloadMatch(tr.compiled_id, tr.matched, result.observed, result.sample_ts)
                    )
        return matches

    def tick(
        self,
        readings: Iterable[tuple[EndpointId, str, float]],
        ts: int,
        collected_at: int | None = None,
    ) -> tuple[MetricBatch, list[OffloadMatch]]:
        batch = self.make_batch(readings, ts, collected_at)
        return batch, self.evaluate_offloaded(batch)
