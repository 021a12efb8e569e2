"""The complex event processing engine.

Evaluation is batch-synchronous: a batch's samples are pushed into the
shared window table once, then every band watching a touched stream is
re-evaluated at that batch's timestamp. Bands are grouped into four
pipelines by aggregator cost class; each pipeline flushes its alerts as
soon as it finishes, so cheap matches are not queued behind expensive
ones. `pipeline_mode="single"` collapses the flush points into one for
comparison runs; the alert sets are identical either way.

Group-scoped rules produce a vote per member per evaluation. Members that
all live on this engine complete through a local ledger; otherwise the
votes leave as partial-match records for the manager to combine.
"""

from __future__ import annotations

import enum
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .clock import Clock, WallClock
from .dsl import AggKind, CompiledSubscription
from .errors import DcmonError, UnknownSubscription
from .matching import BandSet, Transition
from .model import EndpointId, MetricBatch, MetricRegistry, StreamValidator
from .publisher import OffloadMatch
from .spatial import SpatialLedger
from .storage import DEFAULT_TTL_MS, ContextStore
from .windows import WindowTable

PIPELINE_ORDER = ("value", "minmax", "moments", "order")

PIPELINE_OF = {
    AggKind.VALUE: "value",
    AggKind.MIN: "minmax",
    AggKind.MAX: "minmax",
    AggKind.MEAN: "moments",
    AggKind.STDDEV: "moments",
    AggKind.VARIANCE: "moments",
    AggKind.MEDIAN: "order",
    AggKind.PERCENTILE: "order",
}

SWEEP_EVERY_MS = 60_000


class AlertKind(enum.Enum):
    RAISED = "RAISED"
    CLEARED = "CLEARED"


@dataclass(slots=True)
class AlertEvent:
    """One edge of one subscription's match state."""

    sub_id: str
    kind: AlertKind
    endpoints: tuple[EndpointId, ...]
    group: str | None
    observed: float
    threshold: float
    sample_ts: int
    detect_ts: int
    collected_at: int


@dataclass(slots=True)
class PartialVote:
    """One member's evaluation of a group rule, for off-engine completion."""

    sub_id: str
    compiled_id: str
    endpoint: EndpointId
    matched: bool
    observed: float
    sample_ts: int
    collected_at: int


@dataclass(slots=True)
class LoadReport:
    engine_id: str
    at: int
    subscription_count: int
    batches_per_sec: float
    eval_lag_ms: float
    windows: int
    involved_endpoints: int
    stored_samples: int


@dataclass(slots=True)
class EngineEmission:
    alerts: list[AlertEvent] = field(default_factory=list)
    partials: list[PartialVote] = field(default_factory=list)


class CepEngine:
    def __init__(
        self,
        engine_id: str,
        metrics: MetricRegistry | None = None,
        clock: Clock | None = None,
        storage_ttl_ms: int = DEFAULT_TTL_MS,
        pipeline_mode: str = "multi",
        alert_sink: Callable[[list[AlertEvent]], None] | None = None,
    ):
        if pipeline_mode not in ("multi", "single"):
            raise DcmonError(f"unknown pipeline mode {pipeline_mode!r}")
        self.engine_id = engine_id
        self.clock = clock or WallClock()
        self.pipeline_mode = pipeline_mode
        self.alert_sink = alert_sink
        self.metrics = metrics or MetricRegistry()
        self._validator = StreamValidator(self.metrics)
        self._windows = WindowTable()
        self._pipelines: dict[str, BandSet] = {
            name: BandSet(self._windows) for name in PIPELINE_ORDER
        }
        self._subs: dict[str, CompiledSubscription] = {}
        self._by_sub: dict[str, list[CompiledSubscription]] = {}
        self._offloaded: set[str] = set()
        self._state: dict[str, bool] = {}
        self._ledgers: dict[str, SpatialLedger] = {}
        self._partial_subs: set[str] = set()
        # endpoint -> ids of rules currently holding it in an alert
        self._involved: dict[EndpointId, set[str]] = {}
        self.store = ContextStore(storage_ttl_ms)
        self._last_sweep: int | None = None
        self._ingest_times: deque[int] = deque()
        self._last_lag_ms = 0.0

    # --- subscription management --------------------------------------

    def add_subscription(self, cs: CompiledSubscription, offloaded: bool = False) -> None:
        if cs.compiled_id in self._subs:
            raise DcmonError(f"duplicate compiled subscription {cs.compiled_id}")
        self._subs[cs.compiled_id] = cs
        self._by_sub.setdefault(cs.sub_id, []).append(cs)
        if offloaded:
            self._offloaded.add(cs.compiled_id)
        else:
            self._pipelines[PIPELINE_OF[cs.agg.kind]].add(cs)

    def install_local_ledger(self, sub_id: str, interval_ms: int) -> None:
        """Complete a group rule here; all its members report to this engine."""
        members = self._by_sub.get(sub_id)
        if not members:
            raise UnknownSubscription(sub_id)
        self._ledgers[sub_id] = SpatialLedger(
            sub_id, [cs.compiled_id for cs in members], interval_ms
        )

    def mark_partial(self, sub_id: str) -> None:
        """This group rule's members span engines; forward votes instead."""
        self._partial_subs.add(sub_id)

    def remove_subscription(self, compiled_id: str) -> None:
        cs = self._subs.pop(compiled_id, None)
        if cs is None:
            raise UnknownSubscription(compiled_id)
        if compiled_id in self._offloaded:
            self._offloaded.discard(compiled_id)
        else:
            self._pipelines[PIPELINE_OF[cs.agg.kind]].remove(compiled_id)
        self._state.pop(compiled_id, None)
        self._uninvolve(cs.endpoint, compiled_id)
        members = self._by_sub.get(cs.sub_id)
        if members is not None:
            members.remove(cs)
            if not members:
                del self._by_sub[cs.sub_id]
                self._ledgers.pop(cs.sub_id, None)
                self._partial_subs.discard(cs.sub_id)
        if cs.spatial:
            for ep in list(self._involved):
                self._uninvolve(ep, cs.sub_id)

    def subscription_count(self) -> int:
        return len(self._subs)

    def has_subscription(self, compiled_id: str) -> bool:
        return compiled_id in self._subs

    # --- involvement and storage ---------------------------------------

    def _involve(self, endpoint: EndpointId, key: str) -> None:
        self._involved.setdefault(endpoint, set()).add(key)

    def _uninvolve(self, endpoint: EndpointId, key: str) -> None:
        keys = self._involved.get(endpoint)
        if keys is not None:
            keys.discard(key)
            if not keys:
                del self._involved[endpoint]

    def is_involved(self, endpoint: EndpointId) -> bool:
        return endpoint in self._involved

    def apply_involve(self, endpoints: Iterable[EndpointId], sub_id: str, on: bool) -> None:
        """Manager-directed involvement for group rules completed elsewhere."""
        for ep in endpoints:
            if on:
                self._involve(ep, sub_id)
            else:
                self._uninvolve(ep, sub_id)

    def expire_storage(self, now_ms: int | None = None) -> int:
        return self.store.expire(self.clock.now_ms() if now_ms is None else now_ms)

    def query_context(self, endpoints, from_ts: int, to_ts: int):
        return self.store.query(endpoints, from_ts, to_ts)

    # --- ingest ---------------------------------------------------------

    def ingest_batch(self, batch: MetricBatch) -> EngineEmission:
        t0 = time.perf_counter()
        for s in batch.samples:
            self._validator.validate(s)

        now = self.clock.now_ms()
        self._ingest_times.append(now)
        while self._ingest_times and self._ingest_times[0] < now - 60_000:
            self._ingest_times.popleft()

        touched: dict[tuple[EndpointId, str], int] = {}
        for s in batch.samples:
            self._windows.push(s.endpoint, s.metric, s.value, s.ts)
            key = (s.endpoint, s.metric)
            prev = touched.get(key)
            if prev is None or s.ts > prev:
                touched[key] = s.ts

        emission = EngineEmission()
        for name in PIPELINE_ORDER:
            pipeline = self._pipelines[name]
            alerts: list[AlertEvent] = []
            for (endpoint, metric), sample_ts in touched.items():
                for result in pipeline.evaluate_stream(endpoint, metric, sample_ts):
                    for tr in result.transitions:
                        alert = self._apply_transition(
                            tr, result.observed, result.sample_ts, batch.collected_at
                        )
                        if alert is not None:
                            alerts.append(alert)
                    for compiled_id, matched in result.votes:
                        self._apply_vote(
                            compiled_id,
                            matched,
                            result.observed,
                            result.sample_ts,
                            batch.collected_at,
                            alerts,
                            emission.partials,
                        )
            emission.alerts.extend(alerts)
            if alerts and self.alert_sink is not None and self.pipeline_mode == "multi":
                self.alert_sink(alerts)
        if self.alert_sink is not None and self.pipeline_mode == "single" and emission.alerts:
            self.alert_sink(emission.alerts)

        self._store_involved(batch)
        if self._last_sweep is None or now - self._last_sweep >= SWEEP_EVERY_MS:
            self.store.expire(now)
            self._last_sweep = now
        self._last_lag_ms = (time.perf_counter() - t0) * 1000.0
        return emission

    def _store_involved(self, batch: MetricBatch) -> None:
        by_ep: dict[EndpointId, list] = {}
        for s in batch.samples:
            by_ep.setdefault(s.endpoint, []).append(s)
        for endpoint, samples in by_ep.items():
            if endpoint in self._involved:
                self.store.append(endpoint, samples)

    def _apply_transition(
        self, tr: Transition, observed: float, sample_ts: int, collected_at: int
    ) -> AlertEvent | None:
        cs = self._subs[tr.compiled_id]
        self._state[tr.compiled_id] = tr.matched
        if tr.matched:
            self._involve(cs.endpoint, tr.compiled_id)
        else:
            self._uninvolve(cs.endpoint, tr.compiled_id)
        if tr.first and not tr.matched:
            return None
        return AlertEvent(
            sub_id=cs.sub_id,
            kind=AlertKind.RAISED if tr.matched else AlertKind.CLEARED,
            endpoints=(cs.endpoint,),
            group=None,
            observed=observed,
            threshold=cs.threshold,
            sample_ts=sample_ts,
            detect_ts=self.clock.now_ms(),
            collected_at=collected_at,
        )

    def _apply_vote(
        self,
        compiled_id: str,
        matched: bool,
        observed: float,
        sample_ts: int,
        collected_at: int,
        alerts: list[AlertEvent],
        partials: list[PartialVote],
    ) -> None:
        cs = self._subs[compiled_id]
        self._state[compiled_id] = matched
        ledger = self._ledgers.get(cs.sub_id)
        if ledger is not None:
            tr = ledger.vote(compiled_id, matched, observed, sample_ts)
            if tr is not None:
                members = self._by_sub[cs.sub_id]
                endpoints = tuple(m.endpoint for m in members)
                for ep in endpoints:
                    if tr.matched:
                        self._involve(ep, cs.sub_id)
                    else:
                        self._uninvolve(ep, cs.sub_id)
                alerts.append(
                    AlertEvent(
                        sub_id=cs.sub_id,
                        kind=AlertKind.RAISED if tr.matched else AlertKind.CLEARED,
                        endpoints=endpoints,
                        group=cs.group,
                        observed=tr.observed,
                        threshold=cs.threshold,
                        sample_ts=tr.sample_ts,
                        detect_ts=self.clock.now_ms(),
                        collected_at=collected_at,
                    )
                )
        elif cs.sub_id in self._partial_subs:
            partials.append(
                PartialVote(
                    sub_id=cs.sub_id,
                    compiled_id=compiled_id,
                    endpoint=cs.endpoint,
                    matched=matched,
                    observed=observed,
                    sample_ts=sample_ts,
                    collected_at=collected_at,
                )
            )

    def ingest_offload_matches(
        self, matches: Iterable[OffloadMatch], collected_at: int
    ) -> EngineEmission:
        """Apply source-side evaluation results as if we had evaluated."""
        emission = EngineEmission()
        for m in matches:
            cs = self._subs.get(m.compiled_id)
            if cs is None or m.compiled_id not in self._offloaded:
                continue  # late frame for a rule removed since
            prev = self._state.get(m.compiled_id, False)
            self._state[m.compiled_id] = m.matched
            if m.matched == prev:
                continue
            if m.matched:
                self._involve(cs.endpoint, m.compiled_id)
            else:
                self._uninvolve(cs.endpoint, m.compiled_id)
            emission.alerts.append(
                AlertEvent(
                    sub_id=cs.sub_id,
                    kind=AlertKind.RAISED if m.matched else AlertKind.CLEARED,
                    endpoints=(cs.endpoint,),
                    group=None,
                    observed=m.observed,
                    threshold=cs.threshold,
                    sample_ts=m.ts,
                    detect_ts=self.clock.now_ms(),
                    collected_at=collected_at,
                )
            )
        if emission.alerts and self.alert_sink is not None:
            self.alert_sink(emission.alerts)
        return emission

    # --- introspection ---------------------------------------------------

    def match_state(self, compiled_id: str) -> bool:
        return self._state.get(compiled_id, False)

    def report_load(self) -> LoadReport:
        now = self.clock.now_ms()
        while self._ingest_times and self._ingest_times[0] < now - 60_000:
            self._ingest_times.popleft()
        return LoadReport(
            engine_id=self.engine_id,
            at=now,
            subscription_count=len(self._subs),
            batches_per_sec=len(self._ingest_times) / 60.0,
            eval_lag_ms=self._last_lag_ms,
            windows=len(self._windows),
            involved_endpoints=len(self._involved),
            stored_samples=self.store.sample_count(),
        )
