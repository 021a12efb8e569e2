"""Frame codecs. Every frame is one JSON object on one line, compact
separators, with a short "t" tag:

    {"t":"METRIC_BATCH","pub":…,"seq":…,"at":…,"s":[[host,vm,metric,value,ts,seq],…]}
    {"t":"OFFLOAD_MATCH","m":[[compiled_id,matched,observed,ts],…]}
    {"t":"ALERT","sub":…,"tr":…,"eps":…,"obs":…,"thr":…,"ts":…}
    {"t":"PARTIAL",…}   {"t":"LOAD",…}
    {"t":"CTX_REQ","eps":…,"from":…,"to":…}   {"t":"CTX_RESP","s":[…]}
    {"t":"SUB","dsl":…} → {"t":"SUB_OK","id":…} | {"t":"SUB_ERR","msg":…}
    {"t":"PING"} / {"t":"PONG"}

A `vm` of null means the physical host itself.

The client-facing ALERT carries only subscription id, transition,
endpoints, observed value, threshold, and sample_ts; a raised alert
serializes to well under 600 bytes even for group rules, whose endpoint
list is capped with an explicit group name and member count instead.

Context responses pack each (endpoint, metric) series as columns with a
shared start timestamp, a step (or explicit offsets when the cadence is
irregular), and values quantized to four significant digits as scaled
integers. The store keeps full precision; only the wire is lossy.
"""

from __future__ import annotations

import json
import math
from typing import Iterable

from .engine import AlertEvent, AlertKind, LoadReport, PartialVote
from .model import EndpointId, MetricBatch, MetricSample
from .publisher import OffloadMatch

MAX_ALERT_ENDPOINTS = 8


def dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def encode(obj: dict) -> bytes:
    return (dumps(obj) + "\n").encode("utf-8")


def decode(line: str | bytes) -> dict:
    return json.loads(line)


def _ep_pair(endpoint: EndpointId) -> tuple[str, int | None]:
    return endpoint.host, endpoint.vm


def _ep_from_pair(host: str, vm: int | None) -> EndpointId:
    return EndpointId(host, vm)


# --- metric batches -------------------------------------------------------

def batch_to_obj(batch: MetricBatch) -> dict:
    return {
        "t": "METRIC_BATCH",
        "pub": batch.publisher,
        "seq": batch.batch_seq,
        "at": batch.collected_at,
        "s": [
            [s.endpoint.host, s.endpoint.vm, s.metric, s.value, s.ts, s.seq]
            for s in batch.samples
        ],
    }


def batch_from_obj(obj: dict) -> MetricBatch:
    samples = [
        MetricSample(_ep_from_pair(host, vm), metric, value, ts, seq)
        for host, vm, metric, value, ts, seq in obj["s"]
    ]
    return MetricBatch(
        publisher=obj["pub"], samples=samples, collected_at=obj["at"], batch_seq=obj["seq"]
    )


# --- offload matches --------------------------------------------------------

def offload_matches_to_obj(matches: Iterable[OffloadMatch]) -> dict:
    return {
        "t": "OFFLOAD_MATCH",
        "m": [[m.compiled_id, m.matched, m.observed, m.ts] for m in matches],
    }


def offload_matches_from_obj(obj: dict) -> list[OffloadMatch]:
    return [OffloadMatch(cid, bool(matched), obs, ts) for cid, matched, obs, ts in obj["m"]]


# --- alerts -----------------------------------------------------------------

def alert_to_obj(alert: AlertEvent) -> dict:
    """The client notification payload: id, transition, endpoints, observed,
    threshold, sample_ts, and nothing else."""
    obj: dict = {
        "t": "ALERT",
        "sub": alert.sub_id,
        "tr": alert.kind.value,
        "eps": [str(ep) for ep in alert.endpoints[:MAX_ALERT_ENDPOINTS]],
        "obs": alert.observed,
        "thr": alert.threshold,
        "ts": alert.sample_ts,
    }
    if alert.group is not None:
        obj["g"] = alert.group
        obj["n"] = len(alert.endpoints)
    return obj


def internal_alert_to_obj(alert: AlertEvent) -> dict:
    """Engine-to-manager form; keeps the latency bookkeeping fields."""
    obj = alert_to_obj(alert)
    obj["eps"] = [str(ep) for ep in alert.endpoints]
    obj["dts"] = alert.detect_ts
    obj["cat"] = alert.collected_at
    return obj


def alert_from_obj(obj: dict) -> AlertEvent:
    endpoints = tuple(EndpointId.parse(e) for e in obj["eps"])
    return AlertEvent(
        sub_id=obj["sub"],
        kind=AlertKind(obj["tr"]),
        endpoints=endpoints,
        group=obj.get("g"),
        observed=obj["obs"],
        threshold=obj["thr"],
        sample_ts=obj["ts"],
        detect_ts=obj.get("dts", 0),
        collected_at=obj.get("cat", 0),
    )


# --- partial spatial matches --------------------------------------------------

def partial_to_obj(vote: PartialVote) -> dict:
    return {
        "t": "PARTIAL",
        "sub": vote.sub_id,
        "cid": vote.compiled_id,
        "ep": str(vote.endpoint),
        "m": vote.matched,
        "obs": vote.observed,
        "ts": vote.sample_ts,
        "cat": vote.collected_at,
    }


def partial_from_obj(obj: dict) -> PartialVote:
    return PartialVote(
        sub_id=obj["sub"],
        compiled_id=obj["cid"],
        endpoint=EndpointId.parse(obj["ep"]),
        matched=obj["m"],
        observed=obj["obs"],
        sample_ts=obj["ts"],
        collected_at=obj["cat"],
    )


# --- load reports ---------------------------------------------------------

def load_to_obj(report: LoadReport) -> dict:
    return {
        "t": "LOAD",
        "eng": report.engine_id,
        "at": report.at,
        "subs": report.subscription_count,
        "bps": report.batches_per_sec,
        "lag": report.eval_lag_ms,
        "win": report.windows,
        "inv": report.involved_endpoints,
        "stored": report.stored_samples,
    }


def load_from_obj(obj: dict) -> LoadReport:
    return LoadReport(
        engine_id=obj["eng"],
        at=obj["at"],
        subscription_count=obj["subs"],
        batches_per_sec=obj["bps"],
        eval_lag_ms=obj["lag"],
        windows=obj.get("win", 0),
        involved_endpoints=obj.get("inv", 0),
        stored_samples=obj.get("stored", 0),
    )


# --- context queries ---------------------------------------------------------

def ctx_req_to_obj(endpoints: Iterable[EndpointId], from_ts: int, to_ts: int) -> dict:
    return {
        "t": "CTX_REQ",
        "eps": [str(ep) for ep in endpoints],
        "from": from_ts,
        "to": to_ts,
    }


def ctx_req_from_obj(obj: dict) -> tuple[list[EndpointId], int, int]:
    return [EndpointId.parse(e) for e in obj["eps"]], obj["from"], obj["to"]


def _series_scale(values: list[float]) -> int:
    peak = max(abs(v) for v in values)
    if peak == 0.0:
        return 0
    # Keep four significant digits of the series' largest magnitude.
    return math.floor(math.log10(peak)) - 3


def ctx_resp_to_obj(rows: list[tuple[EndpointId, str, int, float]], partial: bool = False) -> dict:
    """rows: (endpoint, metric, ts, value), grouped by endpoint and metric,
    time-ascending within each group."""
    series = []
    i, n = 0, len(rows)
    while i < n:
        endpoint, metric = rows[i][0], rows[i][1]
        j = i
        while j < n and rows[j][0] == endpoint and rows[j][1] == metric:
            j += 1
        ts_list = [rows[k][2] for k in range(i, j)]
        values = [rows[k][3] for k in range(i, j)]
        k_scale = _series_scale(values)
        factor = 10.0 ** k_scale
        ints = [round(v / factor) for v in values]
        ts0 = ts_list[0]
        deltas = {ts_list[m + 1] - ts_list[m] for m in range(len(ts_list) - 1)}
        host, vm = _ep_pair(endpoint)
        if len(deltas) <= 1:
            step = deltas.pop() if deltas else 0
            series.append([host, vm, metric, ts0, step, k_scale, ints])
        else:
            offsets = [t - ts0 for t in ts_list]
            series.append([host, vm, metric, ts0, offsets, k_scale, ints])
        i = j
    obj: dict = {"t": "CTX_RESP", "s": series}
    if partial:
        obj["partial"] = True
    return obj


def ctx_resp_from_obj(obj: dict) -> list[tuple[EndpointId, str, int, float]]:
    rows = []
    for host, vm, metric, ts0, step, k_scale, ints in obj["s"]:
        endpoint = _ep_from_pair(host, vm)
        factor = 10.0 ** k_scale
        if isinstance(step, list):
            ts_iter = (ts0 + off for off in step)
        else:
            ts_iter = (ts0 + i * step for i in range(len(ints)))
        for ts, iv in zip(ts_iter, ints):
            rows.append((endpoint, metric, ts, iv * factor))
    return rows


# --- client channel -----------------------------------------------------------

def sub_to_obj(dsl_text: str) -> dict:
    return {"t": "SUB", "dsl": dsl_text}


def sub_ok_to_obj(sub_id: str) -> dict:
    return {"t": "SUB_OK", "id": sub_id}


def sub_err_to_obj(msg: str) -> dict:
    return {"t": "SUB_ERR", "msg": msg}


PING = {"t": "PING"}
PONG = {"t": "PONG"}
PING_BYTES = encode(PING)
