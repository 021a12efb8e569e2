"""Seeded workload construction.

Three scenario families, all fully determined by a seed:

- equivalence scenarios: moderate fleets with "active" thresholds placed
  inside each metric's natural range, so rules cross organically and the
  alert stream exercises every aggregator, both directions, and group
  completion across engines.
- detection scenarios: large spike-free fleets where every rule is
  "quiet" (unreachable under natural noise) and each rule watches its
  own stream, so the only possible alerts are the injected ones.
- capacity scenarios: quiet rule catalogs repeated across every stream
  to reach a target subscription count, plus a sprinkle of active
  single-sample rules so latency has a steady alert flow to stamp.
"""

from __future__ import annotations

import dataclasses
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..dsl import (
    INSTANT,
    AggKind,
    Aggregator,
    Cmp,
    Direction,
    Scope,
    ScopeKind,
    Subscription,
    WindowKind,
    WindowSpec,
    render,
)
from ..errors import DcmonError
from ..model import EndpointId, GroupRegistry
from .synth import (
    MetricShape,
    SynthProfile,
    default_profile,
    profile_from_json,
    profile_to_json,
)

_SPREAD = (AggKind.VARIANCE, AggKind.STDDEV)
_TRANSLATION = (
    AggKind.VALUE,
    AggKind.MIN,
    AggKind.MAX,
    AggKind.MEAN,
    AggKind.MEDIAN,
    AggKind.PERCENTILE,
)
_PERCENTILE_RANKS = (5.0, 10.0, 25.0, 50.0, 75.0, 90.0, 95.0, 99.0)


@dataclass(frozen=True)
class GroupSpec:
    name: str
    members: tuple[str, ...]  # endpoint strings, e.g. "h001/vm3"


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    profile: SynthProfile
    rules: tuple[str, ...]  # DSL text, in registration order
    groups: tuple[GroupSpec, ...] = ()
    n_engines: int = 1
    target_count: int = 0  # rules to perturb with injected anomalies

    def group_registry(self) -> GroupRegistry:
        reg = GroupRegistry()
        for g in self.groups:
            reg.add(g.name, [EndpointId.parse(m) for m in g.members])
        return reg

    def bounds(self) -> dict[str, tuple[float, float]]:
        return {s.name: (s.lo, s.hi) for s in self.profile.shapes}

    @property
    def interval_ms(self) -> int:
        return 2 * self.profile.cadence_ms


def _spike_free(shapes: Sequence[MetricShape]) -> tuple[MetricShape, ...]:
    return tuple(dataclasses.replace(s, spike_prob=0.0) for s in shapes)


# --- threshold placement -------------------------------------------------

def active_threshold(rng: random.Random, shape: MetricShape, kind: AggKind) -> float:
    """A threshold inside the metric's natural range, crossed organically."""
    hw = shape.noise_half_width
    if kind in _SPREAD:
        nat_var = hw * hw / 3.0  # variance of the bounded uniform noise
        t = nat_var * rng.uniform(0.4, 1.8)
        return t if kind is AggKind.VARIANCE else math.sqrt(t)
    return shape.base + rng.uniform(-1.0, 1.0) * hw


def quiet_threshold(
    shape: MetricShape, direction: Direction, kind: AggKind
) -> float | None:
    """A threshold natural noise can never reach but an injection can,
    within the metric's plausible bounds. None when no such level exists."""
    hw = shape.noise_half_width
    if kind in _SPREAD:
        if direction is Direction.LESS:
            # Small sampled windows can dip to near-zero spread naturally;
            # "quiet" cannot be guaranteed on this side.
            return None
        thr = 1.3 * hw * hw if kind is AggKind.VARIANCE else 1.15 * hw
        var = thr if kind is AggKind.VARIANCE else thr * thr
        amp_est = math.sqrt(var + _margin(var)) * 1.25
        if shape.base - amp_est < shape.lo or shape.base + amp_est > shape.hi:
            return None
        return thr
    if direction is Direction.GREATER:
        floor = shape.base + 1.5 * hw  # clear of any natural sample
        cap = _greatest_injectable(shape.hi)
        thr = min(shape.base + 2.5 * hw, cap)
        return thr if thr >= floor else None
    ceil = shape.base - 1.5 * hw
    thr = max(shape.base - 2.5 * hw, _least_injectable(shape.lo))
    return thr if thr <= ceil else None


def _margin(threshold: float) -> float:
    return max(0.05 * abs(threshold), 0.05)


def _greatest_injectable(hi: float) -> float:
    # Largest thr with thr + margin(thr) <= hi, under a small safety gap.
    return min((hi - 0.06) / 1.05, hi - 0.06)


def _least_injectable(lo: float) -> float:
    return max((lo + 0.06) / 0.95, lo + 0.06)


# --- rule assembly --------------------------------------------------------

def _rule(
    kind: AggKind,
    metric: str,
    window: WindowSpec,
    cmp: Cmp,
    threshold: float,
    scope: Scope,
    p: float | None = None,
) -> str:
    sub = Subscription(Aggregator(kind, p), metric, window, cmp, threshold, scope)
    return render(sub)


def _node(endpoint: EndpointId) -> Scope:
    return Scope(ScopeKind.NODE, endpoint=endpoint)


def _group(name: str) -> Scope:
    return Scope(ScopeKind.GROUP, group=name)


def _pick_window(rng: random.Random, cadence_ms: int, max_ticks: int = 40) -> WindowSpec:
    r = rng.random()
    if r < 0.25:
        return INSTANT
    n = rng.randint(2, max_ticks)
    if r < 0.65:
        return WindowSpec(WindowKind.COUNT, n)
    seconds = max(1, n * cadence_ms // 1000)
    return WindowSpec(WindowKind.DURATION, seconds)


def _pick_agg(rng: random.Random, kind: AggKind) -> tuple[Aggregator, bool]:
    """(aggregator, needs_instant_window)."""
    if kind is AggKind.PERCENTILE:
        return Aggregator(kind, rng.choice(_PERCENTILE_RANKS)), False
    return Aggregator(kind), kind is AggKind.VALUE


# --- equivalence family ---------------------------------------------------

def equivalence_scenario(seed: int) -> Scenario:
    """Active-threshold fleet for engine-vs-oracle comparison."""
    rng = random.Random(seed * 7919 + 11)
    n_hosts = 5 + seed % 4
    n_engines = 1 + seed % 3
    profile = default_profile(n_hosts=n_hosts, ticks=220)
    endpoints = profile.endpoints()
    metrics = [s.name for s in profile.shapes]

    groups: list[GroupSpec] = []
    rules: list[str] = []

    # Every aggregator kind in both directions first, then a random tail.
    kinds = list(AggKind)
    plan: list[tuple[AggKind, Cmp]] = []
    for kind in kinds:
        plan.append((kind, Cmp.GT))
        plan.append((kind, Cmp.LT))
    while len(plan) < 486:
        plan.append((rng.choice(kinds), rng.choice(list(Cmp))))

    for kind, cmp in plan:
        metric = rng.choice(metrics)
        shape = profile.shape(metric)
        agg, instant_only = _pick_agg(rng, kind)
        window = INSTANT if instant_only else _pick_window(rng, profile.cadence_ms, 24)
        thr = active_threshold(rng, shape, kind)
        scope = _node(rng.choice(endpoints))
        rules.append(_rule(kind, metric, window, cmp, thr, scope, agg.p))

    # 24 spatial rules over mixed-size groups spanning hosts (and, when
    # n_engines > 1, engine boundaries).
    for gi in range(24):
        size = rng.randint(3, 6)
        members = tuple(str(e) for e in rng.sample(endpoints, size))
        name = f"pool-{seed}-{gi}"
        groups.append(GroupSpec(name, members))
        kind = rng.choice(kinds)
        metric = rng.choice(metrics)
        shape = profile.shape(metric)
        agg, instant_only = _pick_agg(rng, kind)
        window = INSTANT if instant_only else _pick_window(rng, profile.cadence_ms, 16)
        cmp = rng.choice(list(Cmp))
        thr = active_threshold(rng, shape, kind)
        rules.append(_rule(kind, metric, window, cmp, thr, _group(name), agg.p))

    return Scenario(
        name=f"equivalence-{seed}",
        seed=seed,
        profile=profile,
        rules=tuple(rules),
        groups=tuple(groups),
        n_engines=n_engines,
    )


def equivalence_scenarios(count: int = 10) -> list[Scenario]:
    return [equivalence_scenario(seed) for seed in range(1, count + 1)]


# --- detection family -----------------------------------------------------

def detection_scenario(seed: int = 101, n_hosts: int = 50) -> Scenario:
    """Quiet rules on disjoint streams; ground truth is injection-only."""
    rng = random.Random(seed * 104729 + 3)
    profile = default_profile(n_hosts=n_hosts, cadence_ms=1000, ticks=420)
    profile = dataclasses.replace(profile, shapes=_spike_free(profile.shapes)).check()
    endpoints = profile.endpoints()
    metrics = [s.name for s in profile.shapes]

    streams = [(e, m) for e in endpoints for m in metrics]
    rng.shuffle(streams)
    # Spatial rules draw members per metric so a group's three watched
    # streams are exactly three distinct (endpoint, metric) pairs, disjoint
    # from every other rule's stream.
    pool: dict[str, list[EndpointId]] = {m: [] for m in metrics}
    for e, m in streams:
        pool[m].append(e)
    consumed: set[tuple[EndpointId, str]] = set()

    rules: list[str] = []
    groups: list[GroupSpec] = []

    quiet_kinds = [
        (AggKind.VALUE, Direction.GREATER),
        (AggKind.VALUE, Direction.LESS),
        (AggKind.MIN, Direction.LESS),
        (AggKind.MAX, Direction.GREATER),
        (AggKind.MEAN, Direction.GREATER),
        (AggKind.MEAN, Direction.LESS),
        (AggKind.MEDIAN, Direction.GREATER),
        (AggKind.PERCENTILE, Direction.GREATER),
        (AggKind.VARIANCE, Direction.GREATER),
        (AggKind.STDDEV, Direction.GREATER),
    ]

    def quiet_rule(scope: Scope, metric: str) -> str | None:
        shape = profile.shape(metric)
        for _ in range(8):
            kind, direction = rng.choice(quiet_kinds)
            thr = quiet_threshold(shape, direction, kind)
            if thr is None:
                continue
            agg, instant_only = _pick_agg(rng, kind)
            if kind in _SPREAD:
                window = WindowSpec(WindowKind.COUNT, rng.randint(4, 16))
            elif instant_only:
                window = INSTANT
            else:
                window = _pick_window(rng, profile.cadence_ms, 16)
            cmp = Cmp.GT if direction is Direction.GREATER else Cmp.LT
            return _rule(kind, metric, window, cmp, thr, scope, agg.p)
        return None

    # 30 spatial rules first: three dedicated streams each, same metric.
    gi = 0
    for _ in range(600):
        if gi >= 30:
            break
        metric = rng.choice([m for m in metrics if len(pool[m]) >= 3])
        name = f"cell-{seed}-{gi}"
        text = quiet_rule(_group(name), metric)
        if text is None:
            continue
        member_eps = [pool[metric].pop() for _ in range(3)]
        consumed.update((e, metric) for e in member_eps)
        groups.append(GroupSpec(name, tuple(str(e) for e in member_eps)))
        rules.append(text)
        gi += 1
    if gi < 30:
        raise DcmonError(f"detection scenario seed {seed}: only {gi} spatial rules")

    # Local quiet rules, one per remaining stream, up to ~1150 rules total.
    for endpoint, metric in streams:
        if len(rules) >= 1150:
            break
        if (endpoint, metric) in consumed:
            continue
        text = quiet_rule(_node(endpoint), metric)
        if text is not None:
            rules.append(text)

    target_count = max(1, round(0.02 * len(rules)))
    return Scenario(
        name=f"detection-{seed}",
        seed=seed,
        profile=profile,
        rules=tuple(rules),
        groups=tuple(groups),
        n_engines=2,
        target_count=target_count,
    )


# --- capacity family -------------------------------------------------------

def capacity_scenario(
    seed: int = 202,
    n_hosts: int = 50,
    subs_per_stream: int = 60,
    ticks: int = 90,
    active_streams: int = 200,
) -> Scenario:
    """One engine, `subs_per_stream` rules on every stream.

    Rules per stream come from a fixed catalog of (aggregator, window,
    direction) templates so thresholds share bands instead of degenerating
    into one band per rule; that is the shape real fleets have.
    """
    rng = random.Random(seed * 15485863 + 7)
    profile = default_profile(n_hosts=n_hosts, cadence_ms=1000, ticks=ticks)
    profile = dataclasses.replace(profile, shapes=_spike_free(profile.shapes)).check()
    endpoints = profile.endpoints()
    metrics = [s.name for s in profile.shapes]

    templates: list[tuple[AggKind, WindowSpec, Direction, float | None]] = [
        (AggKind.VALUE, INSTANT, Direction.GREATER, None),
        (AggKind.VALUE, INSTANT, Direction.LESS, None),
        (AggKind.MIN, WindowSpec(WindowKind.COUNT, 10), Direction.LESS, None),
        (AggKind.MAX, WindowSpec(WindowKind.COUNT, 10), Direction.GREATER, None),
        (AggKind.MEAN, WindowSpec(WindowKind.COUNT, 20), Direction.GREATER, None),
        (AggKind.MEAN, WindowSpec(WindowKind.DURATION, 20), Direction.LESS, None),
        (AggKind.MEDIAN, WindowSpec(WindowKind.COUNT, 15), Direction.GREATER, None),
        (AggKind.PERCENTILE, WindowSpec(WindowKind.COUNT, 25), Direction.GREATER, 95.0),
        (AggKind.PERCENTILE, WindowSpec(WindowKind.COUNT, 25), Direction.LESS, 10.0),
        (AggKind.VARIANCE, WindowSpec(WindowKind.COUNT, 20), Direction.GREATER, None),
        (AggKind.STDDEV, WindowSpec(WindowKind.COUNT, 30), Direction.GREATER, None),
        (AggKind.MAX, WindowSpec(WindowKind.DURATION, 15), Direction.GREATER, None),
    ]

    active = set()
    if active_streams:
        streams = [(e, m) for e in endpoints for m in metrics]
        active = set(rng.sample(range(len(streams)), min(active_streams, len(streams))))

    rules: list[str] = []
    stream_no = 0
    for endpoint in endpoints:
        for metric in metrics:
            shape = profile.shape(metric)
            scope = _node(endpoint)
            quota = subs_per_stream
            if stream_no in active:
                thr = shape.base + rng.uniform(-0.5, 0.5) * shape.noise_half_width
                rules.append(_rule(AggKind.VALUE, metric, INSTANT, Cmp.GT, thr, scope))
                quota -= 1
            emitted = 0
            ti = 0
            while emitted < quota:
                kind, window, direction, p = templates[ti % len(templates)]
                ti += 1
                base_thr = quiet_threshold(shape, direction, kind)
                if base_thr is None:
                    base_thr = quiet_threshold(shape, Direction.GREATER, kind)
                    direction = Direction.GREATER
                    if base_thr is None:
                        continue
                # Fan each template into stepped thresholds so one band
                # holds several sorted entries.
                step = 1.0 + 0.005 * (emitted + 1)
                thr = base_thr * step if direction is Direction.GREATER else base_thr / step
                cmp = Cmp.GE if direction is Direction.GREATER else Cmp.LE
                rules.append(_rule(kind, metric, window, cmp, thr, scope, p))
                emitted += 1
            stream_no += 1

    return Scenario(
        name=f"capacity-{seed}-{n_hosts}h",
        seed=seed,
        profile=profile,
        rules=tuple(rules),
        n_engines=1,
    )


# --- scenario files ------------------------------------------------------------

def scenario_to_json(scenario: Scenario) -> str:
    """Schema documented in docs/scenario-schema.md."""
    return json.dumps(
        {
            "name": scenario.name,
            "seed": scenario.seed,
            "profile": json.loads(profile_to_json(scenario.profile)),
            "rules": list(scenario.rules),
            "groups": [
                {"name": g.name, "members": list(g.members)} for g in scenario.groups
            ],
            "n_engines": scenario.n_engines,
            "target_count": scenario.target_count,
        },
        indent=2,
    )


def scenario_from_json(source: str | Path) -> Scenario:
    text = Path(source).read_text() if isinstance(source, Path) else source
    try:
        data = json.loads(text)
        profile = profile_from_json(json.dumps(data["profile"]))
        groups = tuple(
            GroupSpec(g["name"], tuple(g["members"])) for g in data.get("groups", [])
        )
        return Scenario(
            name=data["name"],
            seed=data.get("seed", 0),
            profile=profile,
            rules=tuple(data["rules"]),
            groups=groups,
            n_engines=data.get("n_engines", 1),
            target_count=data.get("target_count", 0),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DcmonError(f"bad scenario file: {e}") from None
