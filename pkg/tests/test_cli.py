"""Command line coverage: file-based commands end to end, plus the
argument parsing helpers. The long-running server roles are exercised
live in test_net.py, so here they only get --help smoke checks."""

import json
import statistics

import click
import pytest
from click.testing import CliRunner

from dcmon.cli import _addr, _duration_ms, _engine_map, main
from dcmon.harness.bench import pull_bytes
from dcmon.harness.scenarios import GroupSpec, Scenario, scenario_to_json
from dcmon.harness.synth import SynthProfile, generate
from dcmon.harness.tracefile import TraceRecord, load_trace, write_trace
from dcmon.model import EndpointId


def _run(*args):
    return CliRunner().invoke(main, list(args))


def _write_flat_trace(path, values, *, metric="user_cpu", host="h1", cadence=1000):
    ep = EndpointId(host)
    records = [
        TraceRecord(cadence * (i + 1), ep, metric, float(v))
        for i, v in enumerate(values)
    ]
    write_trace(path, records)
    return records


# --- parsing helpers -------------------------------------------------------

def test_duration_parsing():
    assert _duration_ms("15s") == 15_000
    assert _duration_ms("500ms") == 500
    assert _duration_ms("24h") == 86_400_000
    assert _duration_ms("2m") == 120_000
    assert _duration_ms("3") == 3_000  # bare numbers are seconds
    assert _duration_ms("1.5s") == 1_500
    assert _duration_ms(" 0 ") == 0
    for bad in ("", "abc", "5x", "-3s", "s15"):
        with pytest.raises(click.BadParameter):
            _duration_ms(bad)


def test_addr_parsing():
    assert _addr("127.0.0.1:7600") == ("127.0.0.1", 7600)
    assert _addr("node-3.dc2:80") == ("node-3.dc2", 80)
    for bad in ("nope", "host:", "host:port", ":"):
        with pytest.raises(click.BadParameter):
            _addr(bad)


def test_engine_map_parsing():
    assert _engine_map("E1=127.0.0.1:1,E2=h:2") == {
        "E1": ("127.0.0.1", 1),
        "E2": ("h", 2),
    }
    # Bare names are allowed: the id is expected, the address unknown.
    assert _engine_map("E1, E2=h:9") == {"E1": ("", 0), "E2": ("h", 9)}
    assert _engine_map("") == {}


def test_server_commands_have_help():
    for cmd in ("publisher", "engine", "manager", "gateway"):
        res = _run(cmd, "--help")
        assert res.exit_code == 0
        assert "--" in res.output


# --- dsl check -------------------------------------------------------------

def test_dsl_check_echoes_canonical_forms(tmp_path):
    rules = tmp_path / "rules.dsl"
    rules.write_text(
        "# fleet alarms\n"
        "\n"
        "WHEN VALUE(user_cpu) > 50 ON NODE h1\n"
        "WHEN MEAN(entropy) OVER LAST 30 SAMPLES <= 100 ON GROUP rack1\n"
    )
    res = _run("dsl", "check", str(rules))
    assert res.exit_code == 0
    lines = res.output.splitlines()
    assert lines == [
        "WHEN VALUE(user_cpu) > 50 ON NODE h1",
        "WHEN MEAN(entropy) OVER LAST 30 SAMPLES <= 100 ON GROUP rack1",
    ]


def test_dsl_check_reports_bad_lines_with_position(tmp_path):
    rules = tmp_path / "rules.dsl"
    rules.write_text(
        "WHEN VALUE(user_cpu) > 50 ON NODE h1\n"
        "WHEN BOGUS(user_cpu) > 50 ON NODE h1\n"
        "WHEN VALUE(entropy) >\n"
    )
    res = _run("dsl", "check", str(rules))
    assert res.exit_code == 1
    assert res.stdout.splitlines() == ["WHEN VALUE(user_cpu) > 50 ON NODE h1"]
    assert f"{rules}:2:" in res.stderr
    assert f"{rules}:3:" in res.stderr


# --- bench pull ------------------------------------------------------------

def test_bench_pull_reports_bytes():
    res = _run("bench", "pull", "--endpoints", "100", "--interval", "60s",
               "--minutes", "10")
    assert res.exit_code == 0
    want = pull_bytes(100, 10.0, poll_interval_s=60.0)
    assert f"{want} bytes" in res.output
    assert f"({want / 10 / 1e6:.3f} MB/min)" in res.output


# --- bench oracle ----------------------------------------------------------

def test_bench_oracle_lists_transitions(tmp_path):
    trace = tmp_path / "t.csv"
    _write_flat_trace(trace, [10, 100, 100, 10, 10, 100])
    rules = tmp_path / "rules.dsl"
    rules.write_text("WHEN VALUE(user_cpu) > 50 ON NODE h1\n")
    out_json = tmp_path / "oracle.json"

    res = _run("bench", "oracle", "--trace", str(trace), "--rules", str(rules),
               "--json", str(out_json))
    assert res.exit_code == 0
    assert "3 transitions from 1 rules (6 samples, cadence 1000ms)" in res.output

    got = json.loads(out_json.read_text())
    assert [(a["transition"], a["ts"]) for a in got] == [
        ("RAISED", 2000),
        ("CLEARED", 4000),
        ("RAISED", 6000),
    ]
    assert all(a["sub"] == "r-000001" for a in got)


# --- bench inject ----------------------------------------------------------

def test_bench_inject_writes_verified_trace(tmp_path):
    trace = tmp_path / "quiet.csv"
    # Values wander around 50; the rule below is unreachable naturally.
    _write_flat_trace(trace, [50 + ((i * 7) % 11) - 5 for i in range(40)])
    rules = tmp_path / "rules.dsl"
    rules.write_text("WHEN VALUE(user_cpu) > 90 ON NODE h1\n")
    out_trace = tmp_path / "perturbed.csv"
    out_json = tmp_path / "inj.json"

    res = _run("bench", "inject", "--trace", str(trace), "--rules", str(rules),
               "--rate", "0.02", "--seed", "11",
               "--out", str(out_trace), "--json", str(out_json))
    assert res.exit_code == 0
    assert "1 injections applied, 0 skipped" in res.output

    plan = json.loads(out_json.read_text())
    assert len(plan) == 1 and plan[0]["sub"] == "r-000001"
    perturbed = load_trace(out_trace)
    assert len(perturbed) == 40
    assert any(r.value > 90 for r in perturbed)

    # The planted anomaly is real: the oracle now sees a raise in the span.
    res2 = _run("bench", "oracle", "--trace", str(out_trace), "--rules", str(rules))
    assert res2.exit_code == 0
    raised_ts = [
        int(line.split("ts=")[1].split()[0])
        for line in res2.output.splitlines()
        if " RAISED " in line
    ]
    assert any(plan[0]["start_ts"] <= ts <= plan[0]["end_ts"] for ts in raised_ts)


# --- bench run -------------------------------------------------------------

def _smoke_scenario():
    profile = SynthProfile(hosts=("n1", "n2"), vms_per_host=1,
                           cadence_ms=1000, ticks=12)
    records = generate(profile, seed=3)

    def median_of(endpoint, metric):
        ep = EndpointId.parse(endpoint)
        vals = [r.value for r in records if r.endpoint == ep and r.metric == metric]
        return statistics.median(vals)

    rules = (
        f"WHEN VALUE(user_cpu) > {median_of('n1', 'user_cpu')} ON NODE n1",
        f"WHEN MEAN(system_cpu) OVER LAST 3 SAMPLES <= "
        f"{median_of('n2/vm0', 'system_cpu')} ON NODE n2/vm0",
        f"WHEN MAX(entropy) OVER LAST 4 SAMPLES > "
        f"{median_of('n2', 'entropy')} ON GROUP cellA",
    )
    return Scenario(
        name="cli-smoke",
        seed=3,
        profile=profile,
        rules=rules,
        groups=(GroupSpec("cellA", ("n1", "n2")),),
    )


def test_bench_run_matches_oracle(tmp_path):
    scenario_file = tmp_path / "smoke.json"
    scenario_file.write_text(scenario_to_json(_smoke_scenario()))
    report_file = tmp_path / "report.json"

    res = _run("bench", "run", str(scenario_file), "--json", str(report_file))
    assert res.exit_code == 0, res.output

    report = json.loads(report_file.read_text())
    assert report["scenario"] == "cli-smoke"
    assert report["rules"] == 3
    assert report["endpoints"] == 4
    assert report["oracle_match"] is True
    assert report["alerts"] >= 1
    assert report["alerts"] == report["oracle_alerts"]
    assert report["delivered"] == report["alerts"]
    assert report["alert_bytes"] > 0
    assert "deliver_p95_ms" in report


def test_bench_run_rejects_bad_scenario(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x"}')
    res = _run("bench", "run", str(bad))
    assert res.exit_code != 0
