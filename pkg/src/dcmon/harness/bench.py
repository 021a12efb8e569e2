"""Scenario runners and measurement.

Three kinds of runs:

- replay runs: a whole scenario through LocalCluster (publishers, engines,
  manager, gateway) on the simulated clock, collecting every alert a
  subscribed client would see. Used for oracle comparison and detection
  scoring.
- latency runs: a scenario against a single engine with wall-clock
  instrumentation. Ticks are not slept through; instead measured
  processing times feed a queueing recurrence against the nominal
  cadence, which is what "sustains ingestion" means operationally.
- the pull baseline: an arithmetic model of per-endpoint polling, for
  the bandwidth contrast.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..cluster import LocalCluster
from ..clock import SimClock
from ..dsl import Subscription
from ..engine import AlertEvent, CepEngine
from ..gateway import DeliveredAlert
from ..manager import Place, SubscriptionManager
from ..model import MetricRegistry
from ..publisher import Publisher
from .inject import InjectionOutcome, plan_injections
from .oracle import OracleAlert, oracle_match
from .scenarios import Scenario
from .synth import generate
from .tracefile import TraceRecord, to_ticks

# One poll of one endpoint returns a full status document. Sized so a
# 100-endpoint fleet polled every 60 s costs ~1.5 MB per minute.
PULL_DOC_BYTES = 15_000


def wall_percentile(values: Sequence[float], p: float) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = math.ceil(p / 100.0 * len(ordered))
    return ordered[min(max(rank, 1), len(ordered)) - 1]


# --- replay runs -----------------------------------------------------------


@dataclass
class ReplayRun:
    scenario: Scenario
    cluster: LocalCluster
    subs: list[Subscription]
    delivered: list[DeliveredAlert]
    records: list[TraceRecord]

    def alert_keys(self) -> set[tuple[str, str, int]]:
        return {
            (d.alert.sub_id, d.alert.kind.value, d.alert.sample_ts)
            for d in self.delivered
        }

    def observed_by_key(self) -> dict[tuple[str, str, int], float]:
        return {
            (d.alert.sub_id, d.alert.kind.value, d.alert.sample_ts): d.alert.observed
            for d in self.delivered
        }


def build_cluster(
    scenario: Scenario, *, pipeline_mode: str = "multi", offload: bool = True
) -> tuple[LocalCluster, list[Subscription]]:
    cluster = LocalCluster(
        hosts=scenario.profile.hosts,
        n_engines=scenario.n_engines,
        metrics=MetricRegistry(),
        groups=scenario.group_registry(),
        clock=SimClock(0),
        cadence_ms=scenario.profile.cadence_ms,
        pipeline_mode=pipeline_mode,
        offload_enabled=offload,
    )
    for text in scenario.rules:
        cluster.register(text)
    subs = [info.sub for info in cluster.manager.list_subscriptions()]
    return cluster, subs


def replay(
    scenario: Scenario,
    records: Iterable[TraceRecord] | None = None,
    *,
    pipeline_mode: str = "multi",
    offload: bool = True,
    client_id: str = "bench",
) -> ReplayRun:
    cluster, subs = build_cluster(scenario, pipeline_mode=pipeline_mode, offload=offload)
    cluster.add_client(client_id)
    cluster.subscribe_client_to_all(client_id)
    recs = list(records) if records is not None else generate(scenario.profile, scenario.seed)
    for ts, by_host in to_ticks(recs):
        cluster.clock.set(ts)
        cluster.tick(by_host, ts)
    return ReplayRun(scenario, cluster, subs, cluster.take_delivered(), recs)


def oracle_alerts(run: ReplayRun) -> list[OracleAlert]:
    return oracle_match(
        run.records, run.subs, run.cluster.groups, run.scenario.interval_ms
    )


# --- detection scoring -----------------------------------------------------


@dataclass
class DetectionReport:
    planned: int
    applied: int
    skipped: list[tuple[str, str]]
    recall: float
    precision: float
    missed: list[tuple[str, int, int]] = field(default_factory=list)
    spurious: list[tuple[str, int]] = field(default_factory=list)


def run_detection(scenario: Scenario, client_id: str = "bench") -> tuple[ReplayRun, DetectionReport]:
    """Inject scenario.target_count anomalies and score the alert stream.

    A RAISED alert counts as a detection of the injection whose span
    contains its sample_ts; CLEARED alerts are the edge-trigger
    complement and are not scored.
    """
    cluster, subs = build_cluster(scenario)
    cluster.add_client(client_id)
    cluster.subscribe_client_to_all(client_id)
    clean = generate(scenario.profile, scenario.seed)
    outcome: InjectionOutcome = plan_injections(
        clean,
        subs,
        cluster.groups,
        cadence_ms=scenario.profile.cadence_ms,
        interval_ms=scenario.interval_ms,
        seed=scenario.seed + 1,
        count=scenario.target_count,
        bounds=scenario.bounds(),
    )
    for ts, by_host in to_ticks(outcome.records):
        cluster.clock.set(ts)
        cluster.tick(by_host, ts)
    run = ReplayRun(scenario, cluster, subs, cluster.take_delivered(), outcome.records)

    spans = {
        (i.sub_id): (i.start_ts, i.end_ts) for i in outcome.injections
    }
    raised = [
        d.alert for d in run.delivered if d.alert.kind.value == "RAISED"
    ]
    hit: set[str] = set()
    spurious: list[tuple[str, int]] = []
    for alert in raised:
        span = spans.get(alert.sub_id)
        if span is not None and span[0] <= alert.sample_ts <= span[1]:
            hit.add(alert.sub_id)
        else:
            spurious.append((alert.sub_id, alert.sample_ts))
    missed = [
        (i.sub_id, i.start_ts, i.end_ts)
        for i in outcome.injections
        if i.sub_id not in hit
    ]
    applied = len(outcome.injections)
    recall = 1.0 if applied == 0 else len(hit) / applied
    precision = 1.0 if not raised else (len(raised) - len(spurious)) / len(raised)
    report = DetectionReport(
        planned=scenario.target_count,
        applied=applied,
        skipped=outcome.skipped,
        recall=recall,
        precision=precision,
        missed=missed,
        spurious=spurious,
    )
    return run, report


# --- latency runs -----------------------------------------------------------


@dataclass
class LatencyReport:
    scenario: str
    pipeline_mode: str
    subscriptions: int
    ticks: int
    register_s: float
    tick_p50_s: float
    tick_p95_s: float
    tick_mean_s: float
    alert_count: int
    alert_mean_s: float
    alert_p95_s: float
    alert_keys: set[tuple[str, str, int]] = field(default_factory=set)

    def to_json_obj(self) -> dict:
        return {
            "scenario": self.scenario,
            "pipeline_mode": self.pipeline_mode,
            "subscriptions": self.subscriptions,
            "ticks": self.ticks,
            "register_s": round(self.register_s, 3),
            "tick_p50_s": round(self.tick_p50_s, 4),
            "tick_p95_s": round(self.tick_p95_s, 4),
            "tick_mean_s": round(self.tick_mean_s, 4),
            "alert_count": self.alert_count,
            "alert_mean_s": round(self.alert_mean_s, 4),
            "alert_p95_s": round(self.alert_p95_s, 4),
        }


def run_latency(scenario: Scenario, pipeline_mode: str = "multi") -> LatencyReport:
    """Single-engine run with the queueing recurrence.

    completion(t) = max(completion(t-1), nominal(t)) + processing(t);
    a tick's latency is completion minus its nominal arrival, and an
    alert's latency adds its flush offset inside the tick. Processing is
    measured wall time; nothing sleeps, so a 90 s scenario benches in
    the time the engine actually needs.
    """
    clock = SimClock(0)
    metrics = MetricRegistry()
    groups = scenario.group_registry()
    manager = SubscriptionManager(
        metrics=metrics,
        groups=groups,
        clock=clock,
        cadence_ms=scenario.profile.cadence_ms,
        offload_cap=0,
    )
    stamped: list[tuple[AlertEvent, float]] = []
    tick_t0 = 0.0

    def sink(alerts: list[AlertEvent]) -> None:
        now = time.perf_counter()
        for a in alerts:
            stamped.append((a, now - tick_t0))

    engine = CepEngine(
        "E1",
        metrics=metrics,
        clock=clock,
        pipeline_mode=pipeline_mode,
        alert_sink=sink,
    )
    manager.register_engine("E1")
    publishers: dict[str, Publisher] = {}
    for host in scenario.profile.hosts:
        manager.register_host(host)
        publishers[host] = Publisher(host, offload_cap=0)

    t_reg = time.perf_counter()
    for text in scenario.rules:
        _, directives = manager.register(text)
        for d in directives:
            if isinstance(d, Place):
                engine.add_subscription(d.cs, offloaded=d.offloaded)
            else:
                raise RuntimeError(f"latency scenario produced directive {d!r}")
    register_s = time.perf_counter() - t_reg

    cadence_s = scenario.profile.cadence_ms / 1000.0
    records = generate(scenario.profile, scenario.seed)
    completion = 0.0
    tick_lat: list[float] = []
    alert_lat: list[float] = []
    alert_keys: set[tuple[str, str, int]] = set()
    tick_no = 0
    for ts, by_host in to_ticks(records):
        clock.set(ts)
        nominal = tick_no * cadence_s
        base = max(completion, nominal)
        stamped.clear()
        tick_t0 = time.perf_counter()
        for host in sorted(by_host):
            batch, _ = publishers[host].tick(by_host[host], ts)
            engine.ingest_batch(batch)
        proc = time.perf_counter() - tick_t0
        completion = base + proc
        tick_lat.append(completion - nominal)
        for alert, offset in stamped:
            alert_lat.append(base + offset - nominal)
            alert_keys.add((alert.sub_id, alert.kind.value, alert.sample_ts))
        tick_no += 1

    return LatencyReport(
        scenario=scenario.name,
        pipeline_mode=pipeline_mode,
        subscriptions=manager.subscription_count(),
        ticks=tick_no,
        register_s=register_s,
        tick_p50_s=wall_percentile(tick_lat, 50),
        tick_p95_s=wall_percentile(tick_lat, 95),
        tick_mean_s=math.fsum(tick_lat) / len(tick_lat) if tick_lat else 0.0,
        alert_count=len(alert_lat),
        alert_mean_s=math.fsum(alert_lat) / len(alert_lat) if alert_lat else 0.0,
        alert_p95_s=wall_percentile(alert_lat, 95),
        alert_keys=alert_keys,
    )


def run_latency_pair(scenario: Scenario) -> tuple[LatencyReport, LatencyReport]:
    """Both pipeline modes over the same record stream as a paired run.

    One engine per mode, fed identical batches tick by tick with the
    ingest order alternating each tick, so machine noise lands on both
    sides of the comparison instead of on whichever full run happened
    to come second. Returns (multi, single).
    """
    clock = SimClock(0)
    metrics = MetricRegistry()
    groups = scenario.group_registry()
    manager = SubscriptionManager(
        metrics=metrics,
        groups=groups,
        clock=clock,
        cadence_ms=scenario.profile.cadence_ms,
        offload_cap=0,
    )
    modes = ("multi", "single")
    stamped: dict[str, list[tuple[AlertEvent, float]]] = {m: [] for m in modes}
    tick_t0 = {m: 0.0 for m in modes}

    def make_sink(mode: str):
        def sink(alerts: list[AlertEvent]) -> None:
            now = time.perf_counter()
            for a in alerts:
                stamped[mode].append((a, now - tick_t0[mode]))
        return sink

    engines = {
        m: CepEngine(
            f"E-{m}",
            metrics=metrics,
            clock=clock,
            pipeline_mode=m,
            alert_sink=make_sink(m),
        )
        for m in modes
    }
    # Placement is computed once and mirrored; the manager only needs one
    # engine id to assign hosts against.
    manager.register_engine("E-multi")
    publishers: dict[str, Publisher] = {}
    for host in scenario.profile.hosts:
        manager.register_host(host)
        publishers[host] = Publisher(host, offload_cap=0)

    register_s = {m: 0.0 for m in modes}
    for text in scenario.rules:
        _, directives = manager.register(text)
        for d in directives:
            if not isinstance(d, Place):
                raise RuntimeError(f"latency scenario produced directive {d!r}")
            for m in modes:
                t0 = time.perf_counter()
                engines[m].add_subscription(d.cs, offloaded=d.offloaded)
                register_s[m] += time.perf_counter() - t0

    cadence_s = scenario.profile.cadence_ms / 1000.0
    records = generate(scenario.profile, scenario.seed)
    completion = {m: 0.0 for m in modes}
    tick_lat: dict[str, list[float]] = {m: [] for m in modes}
    alert_lat: dict[str, list[float]] = {m: [] for m in modes}
    alert_keys: dict[str, set[tuple[str, str, int]]] = {m: set() for m in modes}
    tick_no = 0
    for ts, by_host in to_ticks(records):
        clock.set(ts)
        nominal = tick_no * cadence_s
        batches = [
            publishers[host].tick(by_host[host], ts)[0] for host in sorted(by_host)
        ]
        for m in modes if tick_no % 2 == 0 else modes[::-1]:
            base = max(completion[m], nominal)
            stamped[m].clear()
            tick_t0[m] = time.perf_counter()
            for batch in batches:
                engines[m].ingest_batch(batch)
            proc = time.perf_counter() - tick_t0[m]
            completion[m] = base + proc
            tick_lat[m].append(completion[m] - nominal)
            for alert, offset in stamped[m]:
                alert_lat[m].append(base + offset - nominal)
                alert_keys[m].add((alert.sub_id, alert.kind.value, alert.sample_ts))
        tick_no += 1

    def report(m: str) -> LatencyReport:
        lat = alert_lat[m]
        return LatencyReport(
            scenario=scenario.name,
            pipeline_mode=m,
            subscriptions=engines[m].subscription_count(),
            ticks=tick_no,
            register_s=register_s[m],
            tick_p50_s=wall_percentile(tick_lat[m], 50),
            tick_p95_s=wall_percentile(tick_lat[m], 95),
            tick_mean_s=math.fsum(tick_lat[m]) / len(tick_lat[m]) if tick_lat[m] else 0.0,
            alert_count=len(lat),
            alert_mean_s=math.fsum(lat) / len(lat) if lat else 0.0,
            alert_p95_s=wall_percentile(lat, 95),
            alert_keys=alert_keys[m],
        )

    return report("multi"), report("single")


# --- notification economy ----------------------------------------------------


@dataclass
class EconomyReport:
    raised_bytes: int
    cleared_bytes: int
    context_bytes: int
    context_samples: int
    episode_bytes: int  # everything the client received for the episode

    def to_json_obj(self) -> dict:
        return {
            "raised_bytes": self.raised_bytes,
            "cleared_bytes": self.cleared_bytes,
            "context_bytes": self.context_bytes,
            "context_samples": self.context_samples,
            "episode_bytes": self.episode_bytes,
        }


def measure_economy() -> EconomyReport:
    """One VM+host failure episode, watched end to end by one client.

    A group rule over a VM and its host raises, stays raised for ten
    minutes while both endpoints' metrics are stored, the client pulls
    the ten-minute context once, and the rule clears. Byte counts come
    from the gateway's own accounting.
    """
    from ..model import DEFAULT_METRICS, EndpointId, GroupRegistry

    host, vm = EndpointId("n7"), EndpointId("n7", 0)
    groups = GroupRegistry()
    groups.add("pair", [host, vm])
    cluster = LocalCluster(
        hosts=["n7"], groups=groups, clock=SimClock(0), cadence_ms=15_000
    )
    sub_id = cluster.register("WHEN MEAN(user_cpu) OVER LAST 4 SAMPLES > 80 ON GROUP pair")
    cluster.add_client("ui", [sub_id])

    rest = {
        "system_cpu": 12.0,
        "used_disk": 4.2e10,
        "free_mem": 6.0e9,
        "buffer_mem": 1.2e9,
        "entropy": 2600.0,
        "ambient_temp": 24.5,
    }
    assert {m for m, _ in DEFAULT_METRICS} == set(rest) | {"user_cpu"}

    def feed(tick: int, user_cpu: float) -> int:
        ts = 1000 + tick * 15_000
        cluster.clock.set(ts)
        readings = []
        for ep in (host, vm):
            readings.append((ep, "user_cpu", user_cpu))
            readings.extend((ep, m, v) for m, v in rest.items())
        cluster.tick({"n7": readings}, ts)
        return ts

    tick = 0
    for _ in range(6):
        feed(tick, 40.0)
        tick += 1
    raise_ts = None
    for _ in range(44):  # 11 minutes raised
        ts = feed(tick, 90.0)
        if raise_ts is None and cluster.delivered:
            raise_ts = ts
        tick += 1
    assert raise_ts is not None, "rule never raised"
    for _ in range(6):
        feed(tick, 40.0)
        tick += 1

    delivered = cluster.take_delivered()
    raised = [d for d in delivered if d.alert.kind.value == "RAISED"]
    cleared = [d for d in delivered if d.alert.kind.value == "CLEARED"]
    assert len(raised) == 1 and len(cleared) == 1, (len(raised), len(cleared))

    obj, frame = cluster.query_context(
        "ui", [vm, host], raise_ts, raise_ts + 600_000
    )
    n_samples = sum(len(row[6]) for row in obj["s"])
    account = cluster.gateway.account("ui")
    return EconomyReport(
        raised_bytes=len(raised[0].frame),
        cleared_bytes=len(cleared[0].frame),
        context_bytes=len(frame),
        context_samples=n_samples,
        episode_bytes=account.bytes_to_client,
    )


# --- pull baseline -----------------------------------------------------------


def pull_bytes(
    n_endpoints: int,
    minutes: float,
    poll_interval_s: float = 60.0,
    doc_bytes: int = PULL_DOC_BYTES,
) -> int:
    """Total bytes a polling monitor moves: every endpoint returns a full
    status document every interval, alerts or not."""
    polls = math.floor(minutes * 60.0 / poll_interval_s)
    return polls * n_endpoints * doc_bytes
