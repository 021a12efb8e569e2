"""Brute-force matching oracle.

Keeps every stream's full history; on each host batch it recomputes each
affected rule's window slice from scratch (sorted copies, two-pass sums)
and re-derives match state. No sharing, no incremental state, no band
index — deliberately the dumbest correct implementation, so agreement
with the engine is evidence rather than tautology. Group completion is
re-implemented here on the same watermark definition the engine uses.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..dsl import (
    AggKind,
    Aggregator,
    CompiledSubscription,
    Subscription,
    WindowKind,
    compile_subscription,
)
from ..errors import EmptyWindow
from ..model import EndpointId, GroupRegistry
from .tracefile import TraceRecord, to_ticks


@dataclass(frozen=True, slots=True)
class OracleAlert:
    sub_id: str
    transition: str  # "RAISED" | "CLEARED"
    sample_ts: int
    observed: float


def window_aggregate(values: Sequence[float], agg: Aggregator) -> float:
    """Reference aggregate over one window slice: sorted copies and
    two-pass compensated sums, recomputed in full every call."""
    n = len(values)
    if n == 0:
        raise EmptyWindow("empty window")
    kind = agg.kind
    if kind is AggKind.VALUE:
        return values[-1]
    if kind is AggKind.MIN:
        return min(values)
    if kind is AggKind.MAX:
        return max(values)
    if kind is AggKind.MEAN:
        return math.fsum(values) / n
    if kind is AggKind.VARIANCE or kind is AggKind.STDDEV:
        mean = math.fsum(values) / n
        var = math.fsum((v - mean) ** 2 for v in values) / n
        return var if kind is AggKind.VARIANCE else math.sqrt(var)
    ordered = sorted(values)
    if kind is AggKind.MEDIAN:
        mid = n // 2
        if n % 2:
            return ordered[mid]
        return (ordered[mid - 1] + ordered[mid]) / 2.0
    rank = math.ceil(agg.p / 100.0 * n)
    return ordered[min(max(rank, 1), n) - 1]


class _Stream:
    __slots__ = ("ts", "values")

    def __init__(self):
        self.ts: list[int] = []
        self.values: list[float] = []

    def push(self, ts: int, value: float) -> None:
        self.ts.append(ts)
        self.values.append(value)

    def slice(self, window, eval_ts: int) -> list[float]:
        if window.kind is WindowKind.COUNT:
            return self.values[-window.length:]
        if window.kind is WindowKind.DURATION:
            horizon = eval_ts - window.length * 1000
            return self.values[bisect_right(self.ts, horizon):]
        return self.values[-1:]


class _GroupBook:
    """Independent re-derivation of the watermark completion rule."""

    __slots__ = ("members", "votes", "last_wm", "matched", "interval_ms")

    def __init__(self, members: list[str], interval_ms: int):
        self.members = sorted(members)
        self.votes: dict[str, tuple[bool, float, int]] = {}
        self.last_wm: int | None = None
        self.matched = False
        self.interval_ms = interval_ms

    def vote(self, member: str, matched: bool, observed: float, ts: int):
        self.votes[member] = (matched, observed, ts)
        if len(self.votes) < len(self.members):
            return None
        stamps = [t for _, _, t in self.votes.values()]
        wm, mx = min(stamps), max(stamps)
        advanced = self.last_wm is None or wm > self.last_wm
        if not advanced and mx - wm <= self.interval_ms:
            return None
        self.last_wm = wm
        now_matched = all(
            m and t >= mx - self.interval_ms for m, _, t in self.votes.values()
        )
        if now_matched == self.matched:
            return None
        self.matched = now_matched
        observed_at_mx = next(
            self.votes[k][1] for k in self.members if self.votes[k][2] == mx
        )
        return now_matched, mx, observed_at_mx


def oracle_match(
    records: Iterable[TraceRecord],
    subs: Iterable[Subscription],
    groups: GroupRegistry | None,
    interval_ms: int,
) -> list[OracleAlert]:
    """The exact alert set for these rules over this stream."""
    compiled_by_stream: dict[tuple[EndpointId, str], list[CompiledSubscription]] = {}
    books: dict[str, _GroupBook] = {}
    for sub in subs:
        compiled = compile_subscription(sub, groups)
        for cs in compiled:
            compiled_by_stream.setdefault((cs.endpoint, cs.metric), []).append(cs)
        if compiled[0].spatial_arity > 1:
            books[sub.id] = _GroupBook([cs.compiled_id for cs in compiled], interval_ms)

    streams: dict[tuple[EndpointId, str], _Stream] = {}
    state: dict[str, bool | None] = {}
    alerts: list[OracleAlert] = []

    for ts, by_host in to_ticks(records):
        for host in sorted(by_host):
            readings = by_host[host]
            touched: dict[tuple[EndpointId, str], int] = {}
            for endpoint, metric, value in readings:
                key = (endpoint, metric)
                stream = streams.get(key)
                if stream is None:
                    stream = streams[key] = _Stream()
                stream.push(ts, value)
                touched[key] = ts
            for key, eval_ts in touched.items():
                watchers = compiled_by_stream.get(key)
                if not watchers:
                    continue
                stream = streams[key]
                for cs in watchers:
                    values = stream.slice(cs.window.normalized(), eval_ts)
                    if not values:
                        continue
                    observed = window_aggregate(values, cs.agg)
                    matched = cs.cmp.matches(observed, cs.threshold)
                    if cs.spatial_arity > 1:
                        result = books[cs.sub_id].vote(
                            cs.compiled_id, matched, observed, eval_ts
                        )
                        if result is not None:
                            group_matched, mx, obs = result
                            alerts.append(
                                OracleAlert(
                                    cs.sub_id,
                                    "RAISED" if group_matched else "CLEARED",
                                    mx,
                                    obs,
                                )
                            )
                        continue
                    prev = state.get(cs.compiled_id)
                    state[cs.compiled_id] = matched
                    if prev is None:
                        if matched:
                            alerts.append(OracleAlert(cs.sub_id, "RAISED", eval_ts, observed))
                    elif matched != prev:
                        alerts.append(
                            OracleAlert(
                                cs.sub_id,
                                "RAISED" if matched else "CLEARED",
                                eval_ts,
                                observed,
                            )
                        )
    return alerts
