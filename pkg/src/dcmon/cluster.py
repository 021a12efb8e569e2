"""In-process wiring of publishers, engines, manager, and gateway.

Everything runs as direct method calls on one thread with one injected
clock, so a scenario is fully deterministic: feed readings per host per
tick, read delivered alerts back. The net layer replaces this wiring with
sockets but reuses every component unchanged.
"""

from __future__ import annotations

from typing import Iterable

from .clock import Clock, SimClock
from .engine import AlertEvent, CepEngine, EngineEmission
from .errors import DcmonError
from .gateway import DeliveredAlert, Gateway
from .manager import (
    Involve,
    LedgerLocal,
    LedgerPartial,
    Offload,
    Place,
    SubscriptionManager,
    Unoffload,
    Unplace,
)
from .model import EndpointId, GroupRegistry, MetricRegistry
from .publisher import Publisher
from .storage import DEFAULT_TTL_MS


class LocalCluster:
    def __init__(
        self,
        hosts: Iterable[str],
        n_engines: int = 1,
        metrics: MetricRegistry | None = None,
        groups: GroupRegistry | None = None,
        clock: Clock | None = None,
        cadence_ms: int = 1000,
        offload_cap: int = 64,
        storage_ttl_ms: int = DEFAULT_TTL_MS,
        pipeline_mode: str = "multi",
        offload_enabled: bool = True,
    ):
        self.clock = clock if clock is not None else SimClock(0)
        self.metrics = metrics or MetricRegistry()
        self.groups = groups or GroupRegistry()
        self.cadence_ms = cadence_ms
        self.offload_enabled = offload_enabled
        self.manager = SubscriptionManager(
            metrics=self.metrics,
            groups=self.groups,
            clock=self.clock,
            cadence_ms=cadence_ms,
            offload_cap=offload_cap if offload_enabled else 0,
        )
        self.engines: dict[str, CepEngine] = {}
        for i in range(n_engines):
            engine_id = f"E{i + 1}"
            engine = CepEngine(
                engine_id,
                metrics=self.metrics,
                clock=self.clock,
                storage_ttl_ms=storage_ttl_ms,
                pipeline_mode=pipeline_mode,
                alert_sink=self._make_sink(engine_id),
            )
            self.engines[engine_id] = engine
            self.manager.register_engine(engine_id)
        self.publishers: dict[str, Publisher] = {}
        for host in hosts:
            self.publishers[host] = Publisher(host, offload_cap=offload_cap)
            self.manager.register_host(host)
        self.gateway = Gateway(
            clock=self.clock,
            context_source=self._context_source,
            registrar=lambda dsl, subscriber: self.register(dsl, subscriber),
        )
        self.delivered: list[DeliveredAlert] = []

    # --- registration ----------------------------------------------------

    def register(self, dsl_text: str, subscriber: str = "harness") -> str:
        sub, directives = self.manager.register(dsl_text, subscriber)
        self._apply(directives)
        return sub.id

    def unregister(self, sub_id: str) -> None:
        self._apply(self.manager.unregister(sub_id))

    def _apply(self, directives: list) -> None:
        for d in directives:
            if isinstance(d, Place):
                self.engines[d.engine_id].add_subscription(d.cs, offloaded=d.offloaded)
            elif isinstance(d, Unplace):
                self.engines[d.engine_id].remove_subscription(d.compiled_id)
            elif isinstance(d, Offload):
                self.publishers[d.host].apply_offload(d.cs)
            elif isinstance(d, Unoffload):
                self.publishers[d.host].remove_offload(d.compiled_id)
            elif isinstance(d, LedgerLocal):
                self.engines[d.engine_id].install_local_ledger(d.sub_id, d.interval_ms)
            elif isinstance(d, LedgerPartial):
                self.engines[d.engine_id].mark_partial(d.sub_id)
            elif isinstance(d, Involve):
                self.engines[d.engine_id].apply_involve(d.endpoints, d.sub_id, d.on)
            else:
                raise DcmonError(f"unknown directive {d!r}")

    # --- clients ------------------------------------------------------------

    def add_client(self, client_id: str, sub_ids: Iterable[str] = ()) -> None:
        self.gateway.register_client(client_id)
        for sub_id in sub_ids:
            self.gateway.subscribe_client(client_id, sub_id)

    def subscribe_client_to_all(self, client_id: str) -> None:
        for info in self.manager.list_subscriptions():
            self.gateway.subscribe_client(client_id, info.sub.id)

    # --- alert plumbing -------------------------------------------------------

    def _make_sink(self, engine_id: str):
        def sink(alerts: list[AlertEvent]) -> None:
            for alert in alerts:
                self.gateway.deliver(self.manager.route(alert))
            self.delivered.extend(self.gateway.drain_all())

        return sink

    def _handle_emission(self, emission: EngineEmission) -> None:
        # Alerts already went through the sink; partial votes complete here.
        for vote in emission.partials:
            alert, directives = self.manager.on_partial(vote)
            self._apply(directives)
            if alert is not None:
                self.gateway.deliver(alert)
        if emission.partials:
            self.delivered.extend(self.gateway.drain_all())

    # --- data plane ---------------------------------------------------------

    def ingest(
        self,
        host: str,
        readings: Iterable[tuple[EndpointId, str, float]],
        ts: int,
    ) -> None:
        """One publisher tick: batch to its engine, offload matches after."""
        publisher = self.publishers[host]
        batch, matches = publisher.tick(readings, ts)
        engine = self.engines[self.manager.engine_of(host)]
        emission = engine.ingest_batch(batch)
        self._handle_emission(emission)
        if matches:
            offload_emission = engine.ingest_offload_matches(matches, batch.collected_at)
            self._handle_emission(offload_emission)

    def tick(
        self,
        readings_by_host: dict[str, list[tuple[EndpointId, str, float]]],
        ts: int,
    ) -> None:
        """Deliver one cadence tick for every host, in stable host order."""
        for host in sorted(readings_by_host):
            self.ingest(host, readings_by_host[host], ts)

    # --- context ---------------------------------------------------------------

    def _context_source(self, endpoints, from_ts: int, to_ts: int):
        by_engine: dict[str, list[EndpointId]] = {}
        for ep in endpoints:
            engine_id = self.manager.engine_of(ep.host)
            by_engine.setdefault(engine_id, []).append(ep)
        rows = []
        for engine_id, eps in by_engine.items():
            rows.extend(self.engines[engine_id].query_context(eps, from_ts, to_ts))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        return rows, False

    def query_context(self, client_id: str, endpoints, from_ts: int, to_ts: int):
        return self.gateway.broker_context(client_id, endpoints, from_ts, to_ts)

    # --- maintenance -------------------------------------------------------------

    def collect_loads(self) -> None:
        for engine in self.engines.values():
            self.manager.on_load(engine.report_load())

    def take_delivered(self) -> list[DeliveredAlert]:
        out = self.delivered
        self.delivered = []
        return out
