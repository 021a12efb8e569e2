"""Command line for the monitoring stack.

One subcommand per process role (publisher, engine, manager, gateway),
`dsl check` for rule files, and the `bench` harness commands. Addresses
are HOST:PORT; durations accept ms/s/m/h suffixes (plain numbers are
seconds).
"""

import asyncio
import collections
import json
import logging
import re
import sys
from pathlib import Path

import click

from .clock import WallClock
from .dsl import parse, render
from .engine import CepEngine
from .errors import DcmonError
from .gateway import Gateway
from .harness.bench import (
    oracle_alerts,
    pull_bytes,
    replay,
    run_detection,
    wall_percentile,
)
from .harness.inject import plan_injections
from .harness.oracle import oracle_match
from .harness.scenarios import scenario_from_json
from .harness.tracefile import load_trace, write_trace
from .manager import SubscriptionManager
from .model import EndpointId, GroupRegistry, MetricRegistry
from .net import (
    EngineServer,
    GatewayServer,
    ManagerServer,
    PublisherClient,
    SyntheticSource,
    TraceSource,
)
from .publisher import Publisher

_DURATION_RE = re.compile(r"^(\d+(?:\.\d+)?)(ms|s|m|h)?$")
_UNIT_MS = {"ms": 1, "s": 1_000, "m": 60_000, "h": 3_600_000, None: 1_000}


def _duration_ms(text: str) -> int:
    m = _DURATION_RE.match(text.strip())
    if m is None:
        raise click.BadParameter(f"bad duration {text!r} (want e.g. 15s, 500ms, 24h)")
    return round(float(m.group(1)) * _UNIT_MS[m.group(2)])


def _addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise click.BadParameter(f"bad address {text!r} (want HOST:PORT)")
    return host, int(port)


def _engine_map(text: str) -> dict[str, tuple[str, int]]:
    out: dict[str, tuple[str, int]] = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, sep, addr = part.partition("=")
        out[name] = _addr(addr) if sep else ("", 0)
    return out


def _read_rules(path: str) -> list:
    subs = []
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            sub = parse(line)
        except DcmonError as e:
            raise click.ClickException(f"{path}:{i}: {e}")
        subs.append(sub.with_identity(f"r-{len(subs) + 1:06d}", "cli", 0))
    return subs


def _read_groups(path: str | None) -> GroupRegistry | None:
    if path is None:
        return None
    reg = GroupRegistry()
    for name, members in json.loads(Path(path).read_text()).items():
        reg.add(name, [EndpointId.parse(m) for m in members])
    return reg


def _infer_cadence_ms(records) -> int:
    ticks = sorted({r.ts for r in records})
    if len(ticks) < 2:
        return 1_000
    diffs = collections.Counter(b - a for a, b in zip(ticks, ticks[1:]))
    return diffs.most_common(1)[0][0]


def _serve(*servers) -> None:
    async def body():
        for s in servers:
            await s.start()
        try:
            await asyncio.Event().wait()
        finally:
            for s in reversed(servers):
                await s.stop()

    try:
        asyncio.run(body())
    except KeyboardInterrupt:
        pass


@click.group()
@click.option("--log-level", default="info", show_default=True)
def main(log_level):
    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


# --- dsl -----------------------------------------------------------------------

@main.group()
def dsl():
    """Rule language utilities."""


@dsl.command("check")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
def dsl_check(file):
    """Parse FILE (one rule per line) and print canonical forms."""
    failures = 0
    for i, line in enumerate(Path(file).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            click.echo(render(parse(line)))
        except DcmonError as e:
            failures += 1
            click.echo(f"{file}:{i}: {e}", err=True)
    sys.exit(1 if failures else 0)


# --- process roles ---------------------------------------------------------------

@main.command()
@click.option("--host", required=True, help="This publisher's host name.")
@click.option("--engine", "engine_addr", required=True, help="Engine HOST:PORT.")
@click.option("--interval", default="0", show_default=True,
              help="Wall pause between ticks (0 replays flat out).")
@click.option("--source", required=True,
              help="trace:FILE.csv or synthetic:PROFILE.json")
@click.option("--seed", default=0, show_default=True)
@click.option("--offload-cap", default=64, show_default=True)
@click.option("--align-now/--no-align-now", default=True, show_default=True,
              help="Shift source timestamps so the first tick is now; live "
                   "engines expire anything older than the storage TTL.")
def publisher(host, engine_addr, interval, source, seed, offload_cap, align_now):
    """Run one host's metric publisher."""
    kind, sep, arg = source.partition(":")
    if not sep or kind not in ("trace", "synthetic"):
        raise click.BadParameter(f"bad --source {source!r}")
    src = TraceSource(arg, host) if kind == "trace" else SyntheticSource(arg, seed, host)
    if not src.ticks:
        raise click.ClickException(f"source has no samples for host {host!r}")
    if align_now:
        shift = WallClock().now_ms() - src.ticks[0][0]
        src.ticks = [(ts + shift, readings) for ts, readings in src.ticks]
    client = PublisherClient(
        Publisher(host, offload_cap=offload_cap),
        _addr(engine_addr),
        src,
        interval_s=_duration_ms(interval) / 1000.0,
    )
    asyncio.run(client.run())
    click.echo(f"{host}: shipped {client.batches_sent} batches, "
               f"{client.matches_sent} offload matches")


@main.command()
@click.option("--id", "engine_id", required=True)
@click.option("--listen", default="127.0.0.1:7601", show_default=True)
@click.option("--manager", "manager_addr", required=True, help="Manager HOST:PORT.")
@click.option("--ttl", default="24h", show_default=True, help="Context storage TTL.")
@click.option("--pipelines", default=4, show_default=True,
              help="1 evaluates everything in one pipeline; more splits by cost class.")
def engine(engine_id, listen, manager_addr, ttl, pipelines):
    """Run a CEP engine."""
    host, port = _addr(listen)
    core = CepEngine(
        engine_id,
        storage_ttl_ms=_duration_ms(ttl),
        pipeline_mode="single" if pipelines <= 1 else "multi",
    )
    _serve(EngineServer(core, host, port, _addr(manager_addr)))


@main.command()
@click.option("--listen", default="127.0.0.1:7600", show_default=True)
@click.option("--http-port", default=7610, show_default=True)
@click.option("--engines", default="", help="Expected engine ids, E1[=addr],E2,…")
@click.option("--watermark", default=231_000, show_default=True,
              help="Per-engine capacity used by POST /rebalance.")
@click.option("--max-engines", default=0, show_default=True,
              help="Refuse engines beyond this count (0 = unbounded).")
@click.option("--snapshot", type=click.Path(), default=None,
              help="Snapshot file; restored at boot when present.")
@click.option("--cadence", default="1s", show_default=True)
@click.option("--offload-cap", default=64, show_default=True)
@click.option("--groups", "groups_file", type=click.Path(exists=True), default=None,
              help='JSON {"group": ["host", "host/vmN", …]}.')
def manager(listen, http_port, engines, watermark, max_engines, snapshot,
            cadence, offload_cap, groups_file):
    """Run the subscription manager and its control API."""
    host, port = _addr(listen)
    groups = _read_groups(groups_file) or GroupRegistry()
    initial = None
    if snapshot and Path(snapshot).exists():
        mgr, initial = SubscriptionManager.restore(
            snapshot, metrics=MetricRegistry(), groups=groups, offload_cap=offload_cap
        )
    else:
        mgr = SubscriptionManager(
            metrics=MetricRegistry(),
            groups=groups,
            cadence_ms=_duration_ms(cadence),
            offload_cap=offload_cap,
        )
    for engine_id in _engine_map(engines):
        mgr.register_engine(engine_id)
    _serve(ManagerServer(
        mgr,
        listen_host=host,
        listen_port=port,
        http_port=http_port,
        snapshot_path=snapshot,
        initial_directives=initial,
        max_engines=max_engines,
        watermark=watermark,
    ))


@main.command()
@click.option("--listen", default="127.0.0.1:7620", show_default=True)
@click.option("--manager", "manager_addr", required=True, help="Manager TCP HOST:PORT.")
@click.option("--manager-http", required=True, help="Manager control API URL.")
@click.option("--engines", required=True, help="E1=host:port,… for context queries.")
@click.option("--static", "static_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Built UI bundle to serve at /.")
def gateway(listen, manager_addr, manager_http, engines, static_dir):
    """Run the push notification gateway."""
    host, port = _addr(listen)
    _serve(GatewayServer(
        Gateway(),
        manager_addr=_addr(manager_addr),
        manager_http=manager_http,
        engine_addrs=_engine_map(engines),
        listen_host=host,
        listen_port=port,
        static_dir=static_dir,
    ))


# --- bench ----------------------------------------------------------------------

@main.group()
def bench():
    """Reproducible experiments against recorded or synthetic streams."""


def _emit_report(report: dict, json_path: str | None) -> None:
    width = max(len(k) for k in report)
    for key, value in report.items():
        click.echo(f"{key:<{width}}  {value}")
    if json_path:
        Path(json_path).write_text(json.dumps(report, indent=2, default=str))
        click.echo(f"report written to {json_path}")


@bench.command("run")
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["multi", "single"]), default="multi",
              show_default=True)
@click.option("--offload/--no-offload", default=True, show_default=True)
@click.option("--json", "json_path", type=click.Path(), default=None)
def bench_run(scenario_file, mode, offload, json_path):
    """Replay SCENARIO_FILE end to end; verify against ground truth.

    Scenarios with target_count > 0 inject anomalies and score
    recall/precision; the rest compare the full alert stream with the
    brute-force oracle.
    """
    scenario = scenario_from_json(Path(scenario_file))
    report = {
        "scenario": scenario.name,
        "pipeline_mode": mode,
        "rules": len(scenario.rules),
        "endpoints": len(scenario.profile.endpoints()),
    }
    if scenario.target_count > 0:
        run, det = run_detection(scenario)
        report.update(
            planned=det.planned, applied=det.applied, skipped=len(det.skipped),
            recall=det.recall, precision=det.precision,
        )
        ok = det.recall == 1.0 and det.precision == 1.0
    else:
        run = replay(scenario, pipeline_mode=mode, offload=offload)
        want = {(a.sub_id, a.transition, a.sample_ts) for a in oracle_alerts(run)}
        got = run.alert_keys()
        report.update(alerts=len(got), oracle_alerts=len(want), oracle_match=got == want)
        ok = got == want
    lat = sorted(d.deliver_ts - d.alert.collected_at for d in run.delivered)
    if lat:
        report.update(
            deliver_p50_ms=wall_percentile(lat, 50),
            deliver_p95_ms=wall_percentile(lat, 95),
            deliver_p99_ms=wall_percentile(lat, 99),
        )
    acct = run.cluster.gateway.account("bench")
    report.update(alert_bytes=acct.alert_bytes, delivered=acct.alerts_delivered)
    _emit_report(report, json_path)
    sys.exit(0 if ok else 1)


@bench.command("oracle")
@click.option("--trace", required=True, type=click.Path(exists=True))
@click.option("--rules", required=True, type=click.Path(exists=True))
@click.option("--groups", "groups_file", type=click.Path(exists=True), default=None)
@click.option("--json", "json_path", type=click.Path(), default=None)
def bench_oracle(trace, rules, groups_file, json_path):
    """Brute-force alert set for a trace and a rule file."""
    records = load_trace(trace)
    subs = _read_rules(rules)
    cadence = _infer_cadence_ms(records)
    alerts = oracle_match(records, subs, _read_groups(groups_file), 2 * cadence)
    for a in alerts:
        click.echo(f"{a.sub_id} {a.transition} ts={a.sample_ts} observed={a.observed}")
    click.echo(f"{len(alerts)} transitions from {len(subs)} rules "
               f"({len(records)} samples, cadence {cadence}ms)")
    if json_path:
        Path(json_path).write_text(json.dumps(
            [{"sub": a.sub_id, "transition": a.transition,
              "ts": a.sample_ts, "observed": a.observed} for a in alerts],
            indent=2,
        ))


@bench.command("pull")
@click.option("--endpoints", required=True, type=int)
@click.option("--interval", default="60s", show_default=True)
@click.option("--minutes", default=10.0, show_default=True)
def bench_pull(endpoints, interval, minutes):
    """Bytes a polling monitor moves for this fleet (the push gateway
    moves zero alert bytes until something actually fails)."""
    total = pull_bytes(endpoints, minutes, poll_interval_s=_duration_ms(interval) / 1000)
    click.echo(f"{endpoints} endpoints, {minutes:g} min at {interval}: "
               f"{total} bytes ({total / minutes / 1e6:.3f} MB/min)")


@bench.command("inject")
@click.option("--trace", required=True, type=click.Path(exists=True))
@click.option("--rules", required=True, type=click.Path(exists=True))
@click.option("--groups", "groups_file", type=click.Path(exists=True), default=None)
@click.option("--rate", default=0.02, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--out", required=True, type=click.Path(),
              help="Perturbed trace is written here.")
@click.option("--json", "json_path", type=click.Path(), default=None)
def bench_inject(trace, rules, groups_file, rate, seed, out, json_path):
    """Plant oracle-verified anomalies in RATE of the rules."""
    records = load_trace(trace)
    subs = _read_rules(rules)
    groups = _read_groups(groups_file)
    cadence = _infer_cadence_ms(records)
    outcome = plan_injections(
        records, subs, groups,
        cadence_ms=cadence, interval_ms=2 * cadence, seed=seed,
        count=max(1, round(rate * len(subs))),
    )
    write_trace(out, outcome.records)
    for inj in outcome.injections:
        click.echo(f"{inj.sub_id} {inj.kind} [{inj.start_ts}, {inj.end_ts}]")
    for sub_id, reason in outcome.skipped:
        click.echo(f"{sub_id} skipped: {reason}", err=True)
    click.echo(f"{len(outcome.injections)} injections applied, "
               f"{len(outcome.skipped)} skipped; trace written to {out}")
    if json_path:
        Path(json_path).write_text(json.dumps(
            [{"sub": i.sub_id, "kind": i.kind, "start_ts": i.start_ts,
              "end_ts": i.end_ts} for i in outcome.injections],
            indent=2,
        ))


if __name__ == "__main__":
    main()
