"""Trace file replay.

Format: CSV with header `ts_ms,host,vm,metric,value`, UTF-8, LF, rows
sorted by ts_ms. An empty vm column means the physical host itself.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from ..errors import TraceParseError, UnsortedTrace
from ..model import EndpointId

HEADER = ["ts_ms", "host", "vm", "metric", "value"]


@dataclass(slots=True)
class TraceRecord:
    ts: int
    endpoint: EndpointId
    metric: str
    value: float


def load_trace(path: str | Path) -> list[TraceRecord]:
    records: list[TraceRecord] = []
    last_ts: int | None = None
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            return []
        if header != HEADER:
            raise TraceParseError(f"bad header {header!r}, want {HEADER!r}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise TraceParseError(f"want 5 columns, got {len(row)}", line=lineno)
            ts_text, host, vm_text, metric, value_text = row
            try:
                ts = int(ts_text)
                value = float(value_text)
            except ValueError as e:
                raise TraceParseError(str(e), line=lineno) from None
            if not host or not metric:
                raise TraceParseError("empty host or metric", line=lineno)
            if vm_text == "":
                vm = None
            else:
                try:
                    vm = int(vm_text)
                except ValueError:
                    raise TraceParseError(f"bad vm {vm_text!r}", line=lineno) from None
            if last_ts is not None and ts < last_ts:
                raise UnsortedTrace(f"ts {ts} after {last_ts}", line=lineno)
            last_ts = ts
            records.append(TraceRecord(ts, EndpointId(host, vm), metric, value))
    return records


def write_trace(path: str | Path, records: Iterable[TraceRecord]) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HEADER)
        for r in records:
            writer.writerow(
                [r.ts, r.endpoint.host, "" if r.endpoint.vm is None else r.endpoint.vm,
                 r.metric, repr(r.value)]
            )
            n += 1
    return n


def to_ticks(
    records: Iterable[TraceRecord],
) -> Iterator[tuple[int, dict[str, list[tuple[EndpointId, str, float]]]]]:
    """Group an ordered record stream into per-timestamp, per-host batches."""
    current_ts: int | None = None
    by_host: dict[str, list[tuple[EndpointId, str, float]]] = {}
    for r in records:
        if current_ts is not None and r.ts != current_ts:
            yield current_ts, by_host
            by_host = {}
        current_ts = r.ts
        by_host.setdefault(r.endpoint.host, []).append((r.endpoint, r.metric, r.value))
    if current_ts is not None:
        yield current_ts, by_host
