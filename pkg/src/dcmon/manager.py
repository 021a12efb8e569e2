"""The control plane: owns the subscription registry, decides where each
compiled rule runs, completes group rules whose members span engines, and
plans host-to-engine rebalancing.

The manager itself performs no I/O. Every state change returns directives
(place, offload, ledger, involve) that the hosting layer applies to the
engines and publishers it is connected to; the same directives replayed
from a snapshot reconstruct the placement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .clock import Clock, WallClock
from .dsl import (
    CompiledSubscription,
    Subscription,
    compile_subscription,
    parse,
    render,
)
from .engine import AlertEvent, AlertKind, LoadReport, PartialVote
from .errors import (
    DcmonError,
    NoCapacity,
    CorruptSnapshot,
    UnknownEndpoint,
    UnknownMetric,
    UnknownSubscription,
)
from .model import EndpointId, GroupRegistry, MetricRegistry
from .publisher import DEFAULT_OFFLOAD_CAP, OFFLOADABLE_KINDS
from .spatial import SpatialLedger

SNAPSHOT_VERSION = 1


# --- placement directives ------------------------------------------------

@dataclass(slots=True)
class Place:
    engine_id: str
    cs: CompiledSubscription
    offloaded: bool = False


@dataclass(slots=True)
class Unplace:
    engine_id: str
    compiled_id: str


@dataclass(slots=True)
class Offload:
    host: str
    cs: CompiledSubscription


@dataclass(slots=True)
class Unoffload:
    host: str
    compiled_id: str


@dataclass(slots=True)
class LedgerLocal:
    engine_id: str
    sub_id: str
    interval_ms: int


@dataclass(slots=True)
class LedgerPartial:
    engine_id: str
    sub_id: str


@dataclass(slots=True)
class Involve:
    engine_id: str
    endpoints: tuple[EndpointId, ...]
    sub_id: str
    on: bool


@dataclass(slots=True)
class SubscriptionInfo:
    sub: Subscription
    dsl: str
    arity: int
    offloaded: bool
    engines: tuple[str, ...]
    raised: bool


class SubscriptionManager:
    def __init__(
        self,
        metrics: MetricRegistry | None = None,
        groups: GroupRegistry | None = None,
        clock: Clock | None = None,
        cadence_ms: int = 1000,
        offload_cap: int = DEFAULT_OFFLOAD_CAP,
    ):
        self.metrics = metrics or MetricRegistry()
        self.groups = groups or GroupRegistry()
        self.clock = clock or WallClock()
        self.cadence_ms = cadence_ms
        self.spatial_interval_ms = 2 * cadence_ms
        self.offload_cap = offload_cap

        self.engines: list[str] = []
        self.assignment: dict[str, str] = {}  # host -> engine_id
        self.epoch = 0

        self._next_id = 1
        self._subs: dict[str, Subscription] = {}
        self._compiled: dict[str, list[CompiledSubscription]] = {}
        self._offloaded: dict[str, bool] = {}  # sub_id -> source-evaluated
        self._sub_engines: dict[str, tuple[str, ...]] = {}
        self._raised: dict[str, bool] = {}
        self._host_counts: dict[str, int] = {}  # engine-evaluated rules per host
        self._offload_counts: dict[str, int] = {}
        self._ledgers: dict[str, SpatialLedger] = {}
        self._loads: dict[str, LoadReport] = {}

    # --- topology -------------------------------------------------------

    def register_engine(self, engine_id: str) -> None:
        if engine_id not in self.engines:
            self.engines.append(engine_id)

    def register_host(self, host: str, engine_id: str | None = None) -> str:
        """Pin a host to an engine; defaults to the emptiest engine."""
        if host in self.assignment:
            return self.assignment[host]
        if engine_id is None:
            if not self.engines:
                raise DcmonError("no engines registered")
            by_hosts: dict[str, int] = {e: 0 for e in self.engines}
            for e in self.assignment.values():
                by_hosts[e] += 1
            engine_id = min(self.engines, key=lambda e: by_hosts[e])
        elif engine_id not in self.engines:
            raise DcmonError(f"unknown engine {engine_id}")
        self.assignment[host] = engine_id
        self._host_counts.setdefault(host, 0)
        return engine_id

    def engine_of(self, host: str) -> str:
        try:
            return self.assignment[host]
        except KeyError:
            raise UnknownEndpoint(host) from None

    # --- registration -----------------------------------------------------

    def register(self, dsl_text: str, subscriber: str = "") -> tuple[Subscription, list]:
        sub = parse(dsl_text)
        if sub.metric not in self.metrics:
            raise UnknownMetric(f"unknown metric {sub.metric!r}")
        sub = sub.with_identity(f"s-{self._next_id:06d}", subscriber, self.clock.now_ms())
        compiled = compile_subscription(sub, self.groups)
        for cs in compiled:
            if cs.endpoint.host not in self.assignment:
                raise UnknownEndpoint(
                    f"unknown endpoint '{cs.endpoint}': no publisher has announced it"
                )
        self._next_id += 1
        return self._place(sub, compiled)

    def _place(self, sub: Subscription, compiled: list[CompiledSubscription]) -> tuple[Subscription, list]:
        directives: list = []
        arity = compiled[0].spatial_arity
        offload = (
            arity == 1
            and compiled[0].agg.kind in OFFLOADABLE_KINDS
            and self._offload_counts.get(compiled[0].endpoint.host, 0) < self.offload_cap
        )
        engines_used: list[str] = []
        for cs in compiled:
            host = cs.endpoint.host
            engine_id = self.assignment[host]
            if engine_id not in engines_used:
                engines_used.append(engine_id)
            if offload:
                directives.append(Offload(host, cs))
                directives.append(Place(engine_id, cs, offloaded=True))
                self._offload_counts[host] = self._offload_counts.get(host, 0) + 1
            else:
                directives.append(Place(engine_id, cs, offloaded=False))
                self._host_counts[host] = self._host_counts.get(host, 0) + 1
        if arity > 1:
            if len(engines_used) == 1:
                directives.append(
                    LedgerLocal(engines_used[0], sub.id, self.spatial_interval_ms)
                )
            else:
                for engine_id in engines_used:
                    directives.append(LedgerPartial(engine_id, sub.id))
                self._ledgers[sub.id] = SpatialLedger(
                    sub.id, [cs.compiled_id for cs in compiled], self.spatial_interval_ms
                )
        self._subs[sub.id] = sub
        self._compiled[sub.id] = compiled
        self._offloaded[sub.id] = offload
        self._sub_engines[sub.id] = tuple(engines_used)
        self._raised[sub.id] = False
        return sub, directives

    def unregister(self, sub_id: str) -> list:
        sub = self._subs.pop(sub_id, None)
        if sub is None:
            raise UnknownSubscription(sub_id)
        compiled = self._compiled.pop(sub_id)
        offload = self._offloaded.pop(sub_id)
        engines_used = self._sub_engines.pop(sub_id)
        was_raised = self._raised.pop(sub_id, False)
        ledger = self._ledgers.pop(sub_id, None)
        directives: list = []
        if ledger is not None and was_raised:
            # Engines were told to hold member endpoints involved; undo.
            members_by_engine: dict[str, list[EndpointId]] = {}
            for cs in compiled:
                members_by_engine.setdefault(
                    self.assignment[cs.endpoint.host], []
                ).append(cs.endpoint)
            for engine_id, eps in members_by_engine.items():
                directives.append(Involve(engine_id, tuple(eps), sub_id, False))
        for cs in compiled:
            host = cs.endpoint.host
            engine_id = self.assignment[host]
            if offload:
                directives.append(Unoffload(host, cs.compiled_id))
                self._offload_counts[host] -= 1
            else:
                self._host_counts[host] -= 1
            directives.append(Unplace(engine_id, cs.compiled_id))
        return directives

    # --- alert flow -------------------------------------------------------

    def route(self, alert: AlertEvent) -> AlertEvent:
        """Record the subscription's current state and pass the alert on."""
        if alert.sub_id in self._raised:
            self._raised[alert.sub_id] = alert.kind is AlertKind.RAISED
        return alert

    def on_partial(self, vote: PartialVote) -> tuple[AlertEvent | None, list]:
        """Feed one member vote into the manager-side ledger."""
        ledger = self._ledgers.get(vote.sub_id)
        if ledger is None:
            return None, []
        tr = ledger.vote(vote.compiled_id, vote.matched, vote.observed, vote.sample_ts)
        if tr is None:
            return None, []
        sub = self._subs[vote.sub_id]
        compiled = self._compiled[vote.sub_id]
        endpoints = tuple(cs.endpoint for cs in compiled)
        alert = AlertEvent(
            sub_id=vote.sub_id,
            kind=AlertKind.RAISED if tr.matched else AlertKind.CLEARED,
            endpoints=endpoints,
            group=sub.scope.group,
            observed=tr.observed,
            threshold=sub.threshold,
            sample_ts=tr.sample_ts,
            detect_ts=self.clock.now_ms(),
            collected_at=vote.collected_at,
        )
        self._raised[vote.sub_id] = tr.matched
        members_by_engine: dict[str, list[EndpointId]] = {}
        for cs in compiled:
            members_by_engine.setdefault(self.assignment[cs.endpoint.host], []).append(
                cs.endpoint
            )
        directives = [
            Involve(engine_id, tuple(eps), vote.sub_id, tr.matched)
            for engine_id, eps in members_by_engine.items()
        ]
        return alert, directives

    def on_load(self, report: LoadReport) -> None:
        self._loads[report.engine_id] = report

    # --- introspection ------------------------------------------------------

    def get(self, sub_id: str) -> SubscriptionInfo:
        sub = self._subs.get(sub_id)
        if sub is None:
            raise UnknownSubscription(sub_id)
        return SubscriptionInfo(
            sub=sub,
            dsl=render(sub),
            arity=self._compiled[sub_id][0].spatial_arity,
            offloaded=self._offloaded[sub_id],
            engines=self._sub_engines[sub_id],
            raised=self._raised[sub_id],
        )

    def list_subscriptions(self) -> list[SubscriptionInfo]:
        return [self.get(sub_id) for sub_id in self._subs]

    def subscription_count(self) -> int:
        return len(self._subs)

    def engine_loads(self) -> dict[str, LoadReport]:
        return dict(self._loads)

    def compiled_for(self, sub_id: str) -> list[CompiledSubscription]:
        try:
            return list(self._compiled[sub_id])
        except KeyError:
            raise UnknownSubscription(sub_id) from None

    # --- rebalancing -----------------------------------------------------

    def plan_rebalance(self, watermark: int) -> dict[str, str]:
        """A host-to-engine map keeping every engine at or under `watermark`
        engine-evaluated rules. Hosts keep their engine when possible."""
        return plan_rebalance(
            dict(self._host_counts), list(self.engines), dict(self.assignment), watermark
        )

    def apply_rebalance(self, new_assignment: dict[str, str]) -> list:
        """Move compiled rules of reassigned hosts; returns the directives."""
        directives: list = []
        moved = {
            host: engine
            for host, engine in new_assignment.items()
            if self.assignment.get(host) != engine
        }
        if not moved:
            return directives
        for sub_id, compiled in self._compiled.items():
            if self._offloaded[sub_id]:
                continue  # source-evaluated; engine only tracks state
            for cs in compiled:
                host = cs.endpoint.host
                if host in moved:
                    directives.append(Unplace(self.assignment[host], cs.compiled_id))
                    directives.append(Place(moved[host], cs, offloaded=False))
        # Offloaded rules keep their state mirror on the host's engine.
        for sub_id, compiled in self._compiled.items():
            if not self._offloaded[sub_id]:
                continue
            for cs in compiled:
                host = cs.endpoint.host
                if host in moved:
                    directives.append(Unplace(self.assignment[host], cs.compiled_id))
                    directives.append(Place(moved[host], cs, offloaded=True))
        self.assignment.update(moved)
        self.epoch += 1
        # Engine sets per subscription may have changed.
        for sub_id, compiled in self._compiled.items():
            engines_used: list[str] = []
            for cs in compiled:
                e = self.assignment[cs.endpoint.host]
                if e not in engines_used:
                    engines_used.append(e)
            self._sub_engines[sub_id] = tuple(engines_used)
        return directives

    # --- snapshot ---------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "next_id": self._next_id,
            "cadence_ms": self.cadence_ms,
            "epoch": self.epoch,
            "engines": list(self.engines),
            "assignment": dict(self.assignment),
            "subs": [
                {
                    "id": sub.id,
                    "dsl": render(sub),
                    "subscriber": sub.subscriber,
                    "created_at": sub.created_at,
                }
                for sub in self._subs.values()
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.snapshot(), separators=(",", ":")))

    @classmethod
    def restore(
        cls,
        source: str | Path | dict,
        metrics: MetricRegistry | None = None,
        groups: GroupRegistry | None = None,
        clock: Clock | None = None,
        offload_cap: int = DEFAULT_OFFLOAD_CAP,
    ) -> tuple["SubscriptionManager", list]:
        """Rebuild a manager and the directives that recreate its placement."""
        if isinstance(source, dict):
            data = source
        else:
            try:
                data = json.loads(Path(source).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise CorruptSnapshot(str(e)) from None
        try:
            if data["version"] != SNAPSHOT_VERSION:
                raise CorruptSnapshot(f"unsupported snapshot version {data['version']!r}")
            mgr = cls(
                metrics=metrics,
                groups=groups,
                clock=clock,
                cadence_ms=data["cadence_ms"],
                offload_cap=offload_cap,
            )
            for engine_id in data["engines"]:
                mgr.register_engine(engine_id)
            for host, engine_id in data["assignment"].items():
                mgr.register_host(host, engine_id)
            directives: list = []
            for row in data["subs"]:
                sub = parse(row["dsl"]).with_identity(
                    row["id"], row["subscriber"], row["created_at"]
                )
                compiled = compile_subscription(sub, mgr.groups)
                _, d = mgr._place(sub, compiled)
                directives.extend(d)
            mgr._next_id = data["next_id"]
            mgr.epoch = data["epoch"]
        except (KeyError, TypeError, ValueError, DcmonError) as e:
            if isinstance(e, CorruptSnapshot):
                raise
            raise CorruptSnapshot(f"bad snapshot: {e}") from None
        return mgr, directives


def plan_rebalance(
    host_counts: dict[str, int],
    engines: list[str],
    current: dict[str, str],
    watermark: int,
) -> dict[str, str]:
    """Assign hosts to engines so no engine exceeds `watermark` rules.

    Pure planning over per-host rule counts; raises NoCapacity when the
    total cannot fit. Hosts stay put unless their engine must shed load.
    """
    if not engines:
        raise NoCapacity("no engines")
    total = sum(host_counts.values())
    if total > watermark * len(engines):
        raise NoCapacity(
            f"{total} rules exceed {watermark} x {len(engines)} engine capacity"
        )
    for host, count in host_counts.items():
        if count > watermark:
            raise NoCapacity(f"host {host} alone carries {count} > {watermark} rules")

    load: dict[str, int] = {e: 0 for e in engines}
    assignment: dict[str, str] = {}
    # Biggest hosts first; each prefers its current engine.
    for host in sorted(host_counts, key=lambda h: (-host_counts[h], h)):
        count = host_counts[host]
        preferred = current.get(host)
        if preferred in load and load[preferred] + count <= watermark:
            target = preferred
        else:
            target = min(engines, key=lambda e: (load[e], e))
            if load[target] + count > watermark:
                raise NoCapacity(
                    f"host {host} ({count} rules) does not fit under watermark {watermark}"
                )
        load[target] += count
        assignment[host] = target
    return assignment
