"""Ground-truth anomaly injection.

An injection perturbs one rule's stream (all member streams, for group
rules) over a contiguous span of ticks so that the rule's aggregate
crosses its threshold with margin. Every applied injection is verified
against the brute-force oracle restricted to the rules that share the
perturbed streams; if the oracle does not show the target raise, the
edit is reverted and the injection reported as skipped. What remains in
the trace is therefore exactly the set of anomalies the report claims.
"""

from __future__ import annotations

import math
import random
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..dsl import AggKind, Direction, Subscription, WindowKind, compile_subscription
from ..errors import DcmonError
from ..model import EndpointId, GroupRegistry
from .oracle import oracle_match
from .tracefile import TraceRecord

# Margin by which the injected aggregate clears the threshold.
MARGIN_FRAC = 0.05
MARGIN_ABS = 0.05

# Extra perturbed ticks beyond one full window, so several evaluations
# see a fully-covered window.
SPAN_PAD_TICKS = 3

# Idle ticks required between two spans on the same stream.
GAP_TICKS = 2


class UnsatisfiableInjection(DcmonError):
    """The requested anomaly cannot be realised for this rule."""


@dataclass(frozen=True, slots=True)
class Injection:
    sub_id: str
    streams: tuple[tuple[EndpointId, str], ...]
    start_ts: int
    end_ts: int
    kind: str  # "level" | "oscillate" | "flatten"
    level: float
    amp: float = 0.0


@dataclass
class InjectionOutcome:
    records: list[TraceRecord]
    injections: list[Injection] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def expected_raises(self) -> list[tuple[str, int, int]]:
        return [(i.sub_id, i.start_ts, i.end_ts) for i in self.injections]


def _margin(threshold: float) -> float:
    return max(MARGIN_FRAC * abs(threshold), MARGIN_ABS)


def _window_ticks(window, cadence_ms: int) -> int:
    w = window.normalized()
    if w.kind is WindowKind.COUNT:
        return w.length
    return max(1, math.ceil(w.length * 1000 / cadence_ms))


def _stream_index(
    records: Sequence[TraceRecord],
) -> dict[tuple[EndpointId, str], list[int]]:
    idx: dict[tuple[EndpointId, str], list[int]] = {}
    for i, rec in enumerate(records):
        idx.setdefault((rec.endpoint, rec.metric), []).append(i)
    return idx


def _perturbation(sub: Subscription, natural_mean: float, window_ticks: int):
    """Return (kind, level, amp) realising the anomaly, or raise."""
    thr = sub.threshold
    m = _margin(thr)
    direction = sub.cmp.direction
    kind = sub.agg.kind
    if kind in (AggKind.VARIANCE, AggKind.STDDEV):
        if direction is Direction.GREATER:
            if window_ticks < 2:
                raise UnsatisfiableInjection(
                    f"{sub.id}: spread over a single-sample window is always zero"
                )
            # Alternating +/-A over a window of n samples has population
            # variance A^2 * (1 - 1/n^2); size A for the worst (odd) case.
            target = thr + m
            if kind is AggKind.STDDEV:
                target = target * target
            amp = math.sqrt(target / (1.0 - 1.0 / (window_ticks * window_ticks)))
            return "oscillate", natural_mean, amp * 1.01
        if thr <= 0:
            raise UnsatisfiableInjection(
                f"{sub.id}: spread below a non-positive threshold is impossible"
            )
        return "flatten", natural_mean, 0.0
    # Translation-equivariant aggregates: a constant level L over a fully
    # covered window yields aggregate exactly L.
    if direction is Direction.GREATER:
        return "level", thr + m, 0.0
    return "level", thr - m, 0.0


def _check_bounds(
    metric: str,
    lo_hi: tuple[float, float] | None,
    kind: str,
    level: float,
    amp: float,
    sub_id: str,
) -> None:
    if lo_hi is None:
        return
    lo, hi = lo_hi
    needed_lo = level - (amp if kind == "oscillate" else 0.0)
    needed_hi = level + (amp if kind == "oscillate" else 0.0)
    if needed_lo < lo or needed_hi > hi:
        raise UnsatisfiableInjection(
            f"{sub_id}: injected {metric} range [{needed_lo:g}, {needed_hi:g}] "
            f"leaves plausible bounds [{lo:g}, {hi:g}]"
        )


def plan_injections(
    records: Sequence[TraceRecord],
    subs: Sequence[Subscription],
    groups: GroupRegistry | None,
    *,
    cadence_ms: int,
    interval_ms: int,
    seed: int,
    count: int | None = None,
    target_ids: Iterable[str] | None = None,
    bounds: dict[str, tuple[float, float]] | None = None,
) -> InjectionOutcome:
    """Perturb a copy of `records` with verified anomalies.

    Targets are either the given subscription ids or a seeded sample of
    `count` rules. Spans on the same stream never overlap; an injection
    whose target raise the restricted oracle cannot confirm is reverted.
    """
    ticks = sorted({r.ts for r in records})
    tick_of = {ts: i for i, ts in enumerate(ticks)}
    by_sub = {s.id: s for s in subs}
    stream_rows = _stream_index(records)
    out = list(records)

    rng = random.Random(seed)
    if target_ids is not None:
        chosen = [by_sub[t] for t in target_ids]
    else:
        pool = list(subs)
        rng.shuffle(pool)
        chosen = pool[: count if count is not None else len(pool)]

    # Natural per-stream means from the clean trace, for oscillation bases.
    sums: dict[tuple[EndpointId, str], tuple[float, int]] = {}
    for rec in records:
        s, n = sums.get((rec.endpoint, rec.metric), (0.0, 0))
        sums[(rec.endpoint, rec.metric)] = (s + rec.value, n + 1)

    used: dict[tuple[EndpointId, str], list[tuple[int, int]]] = {}
    watchers: dict[tuple[EndpointId, str], list[Subscription]] = {}
    for s in subs:
        for cs in compile_subscription(s, groups):
            watchers.setdefault((cs.endpoint, cs.metric), []).append(s)

    outcome = InjectionOutcome(records=out)

    for sub in chosen:
        try:
            applied = _apply_one(
                sub, groups, out, stream_rows, sums, used, tick_of, ticks,
                cadence_ms, bounds, rng,
            )
        except UnsatisfiableInjection as exc:
            outcome.skipped.append((sub.id, str(exc)))
            continue
        injection, undo = applied
        related: list[Subscription] = []
        seen: set[str] = set()
        for key in injection.streams:
            for w in watchers.get(key, ()):
                if w.id not in seen:
                    seen.add(w.id)
                    related.append(w)
        truth = oracle_match(out, related, groups, interval_ms)
        hit = any(
            a.sub_id == sub.id
            and a.transition == "RAISED"
            and injection.start_ts <= a.sample_ts <= injection.end_ts
            for a in truth
        )
        if not hit:
            for i, old in undo:
                out[i] = old
            for key in injection.streams:
                used[key].pop()
            outcome.skipped.append((sub.id, "oracle shows no raise in span"))
            continue
        outcome.injections.append(injection)
    return outcome


def _apply_one(
    sub: Subscription,
    groups: GroupRegistry | None,
    out: list[TraceRecord],
    stream_rows: dict[tuple[EndpointId, str], list[int]],
    sums: dict[tuple[EndpointId, str], tuple[float, int]],
    used: dict[tuple[EndpointId, str], list[tuple[int, int]]],
    tick_of: dict[int, int],
    ticks: list[int],
    cadence_ms: int,
    bounds: dict[str, tuple[float, float]] | None,
    rng: random.Random,
) -> tuple[Injection, list[tuple[int, TraceRecord]]]:
    compiled = compile_subscription(sub, groups)
    streams = tuple((cs.endpoint, cs.metric) for cs in compiled)
    for key in streams:
        if key not in stream_rows:
            raise UnsatisfiableInjection(f"{sub.id}: no samples for {key[0]}/{key[1]}")

    w_ticks = _window_ticks(sub.window, cadence_ms)
    span = w_ticks + SPAN_PAD_TICKS
    warmup = w_ticks + GAP_TICKS
    if warmup + span >= len(ticks):
        raise UnsatisfiableInjection(f"{sub.id}: trace too short for window")

    s_total, n_total = 0.0, 0
    for key in streams:
        s, n = sums[key]
        s_total += s
        n_total += n
    natural_mean = s_total / n_total

    kind, level, amp = _perturbation(sub, natural_mean, w_ticks)
    _check_bounds(sub.metric, (bounds or {}).get(sub.metric), kind, level, amp, sub.id)

    start = _find_span(streams, used, warmup, span, len(ticks), rng)
    if start is None:
        raise UnsatisfiableInjection(f"{sub.id}: no free span on stream")
    start_ts, end_ts = ticks[start], ticks[start + span - 1]

    undo: list[tuple[int, TraceRecord]] = []
    for key in streams:
        rows = stream_rows[key]
        lo = bisect_left(rows, start_ts, key=lambda i: out[i].ts)
        hi = bisect_right(rows, end_ts, key=lambda i: out[i].ts)
        for j, i in enumerate(rows[lo:hi]):
            old = out[i]
            undo.append((i, old))
            if kind == "oscillate":
                value = level + (amp if j % 2 == 0 else -amp)
            else:  # "level" and "flatten" both hold a constant
                value = level
            out[i] = TraceRecord(old.ts, old.endpoint, old.metric, value)
        used.setdefault(key, []).append((start, start + span - 1))
    return Injection(sub.id, streams, start_ts, end_ts, kind, level, amp), undo


def _find_span(
    streams: tuple[tuple[EndpointId, str], ...],
    used: dict[tuple[EndpointId, str], list[tuple[int, int]]],
    warmup: int,
    span: int,
    n_ticks: int,
    rng: random.Random,
) -> int | None:
    last_start = n_ticks - span - 1
    if last_start < warmup:
        return None
    for _ in range(64):
        start = rng.randint(warmup, last_start)
        end = start + span - 1
        ok = True
        for key in streams:
            for s, e in used.get(key, ()):
                if start <= e + GAP_TICKS + warmup and end >= s - GAP_TICKS - warmup:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return start
    return None
