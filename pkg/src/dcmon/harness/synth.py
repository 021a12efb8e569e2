"""Synthetic metric streams shaped like the production traces: mostly
steady values with bounded noise and rare spikes, plus genuinely noisy
metrics. Every (endpoint, metric) stream draws from its own RNG keyed by
(profile seed, stream), so a fixed seed reproduces the stream byte for
byte regardless of generation order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path

from ..errors import InvalidProfile
from ..model import EndpointId
from .tracefile import TraceRecord

STEADY = "steady"
NOISY = "noisy"


@dataclass(frozen=True)
class MetricShape:
    """Value regime of one metric across all endpoints."""

    name: str
    base: float
    amp: float  # bounded uniform noise half-width
    lo: float
    hi: float
    regime: str = STEADY
    spike_prob: float = 0.002  # per tick, steady regime only
    spike_mag: float = 0.0

    def check(self) -> "MetricShape":
        if self.regime not in (STEADY, NOISY):
            raise InvalidProfile(f"{self.name}: unknown regime {self.regime!r}")
        if self.amp < 0 or not self.lo < self.hi:
            raise InvalidProfile(f"{self.name}: bad bounds amp={self.amp} lo={self.lo} hi={self.hi}")
        if not self.lo <= self.base <= self.hi:
            raise InvalidProfile(f"{self.name}: base {self.base} outside [{self.lo}, {self.hi}]")
        if not 0 <= self.spike_prob < 1:
            raise InvalidProfile(f"{self.name}: bad spike_prob {self.spike_prob}")
        return self

    @property
    def noise_half_width(self) -> float:
        return self.amp if self.regime == STEADY else 3.0 * self.amp


# Shapes loosely following the seven default metrics' natural ranges.
DEFAULT_SHAPES: tuple[MetricShape, ...] = (
    MetricShape("user_cpu", base=35.0, amp=6.0, lo=0.0, hi=100.0, spike_mag=45.0),
    MetricShape("system_cpu", base=12.0, amp=3.0, lo=0.0, hi=100.0, spike_mag=30.0),
    MetricShape("used_disk", base=4.2e10, amp=1.5e9, lo=0.0, hi=1.0e11, spike_mag=2.0e10),
    MetricShape("free_mem", base=6.0e9, amp=8.0e8, lo=0.0, hi=1.6e10, regime=NOISY),
    MetricShape("buffer_mem", base=1.2e9, amp=2.0e8, lo=0.0, hi=8.0e9, regime=NOISY),
    MetricShape("entropy", base=2600.0, amp=300.0, lo=0.0, hi=4096.0, regime=NOISY),
    MetricShape("ambient_temp", base=24.5, amp=1.5, lo=10.0, hi=45.0, spike_mag=8.0),
)


@dataclass(frozen=True)
class SynthProfile:
    hosts: tuple[str, ...]
    vms_per_host: int = 10
    cadence_ms: int = 15_000
    ticks: int = 240
    start_ts: int = 1_000
    shapes: tuple[MetricShape, ...] = DEFAULT_SHAPES

    def check(self) -> "SynthProfile":
        if self.vms_per_host < 0:
            raise InvalidProfile(f"vms_per_host {self.vms_per_host} < 0")
        if self.cadence_ms < 1:
            raise InvalidProfile(f"cadence_ms {self.cadence_ms} < 1")
        if self.ticks < 0:
            raise InvalidProfile(f"ticks {self.ticks} < 0")
        if not self.shapes:
            raise InvalidProfile("no metric shapes")
        if len({s.name for s in self.shapes}) != len(self.shapes):
            raise InvalidProfile("duplicate metric shape names")
        for s in self.shapes:
            s.check()
        return self

    def endpoints(self) -> list[EndpointId]:
        out = []
        for host in self.hosts:
            out.append(EndpointId(host))
            out.extend(EndpointId(host, i) for i in range(self.vms_per_host))
        return out

    def shape(self, metric: str) -> MetricShape:
        for s in self.shapes:
            if s.name == metric:
                return s
        raise InvalidProfile(f"no shape for metric {metric!r}")

    def ts_of_tick(self, tick: int) -> int:
        return self.start_ts + tick * self.cadence_ms


def default_profile(
    n_hosts: int,
    vms_per_host: int = 10,
    cadence_ms: int = 15_000,
    ticks: int = 240,
    host_prefix: str = "h",
) -> SynthProfile:
    hosts = tuple(f"{host_prefix}{i + 1:03d}" for i in range(n_hosts))
    return SynthProfile(hosts=hosts, vms_per_host=vms_per_host,
                        cadence_ms=cadence_ms, ticks=ticks).check()


def profile_to_json(profile: SynthProfile) -> str:
    return json.dumps(
        {
            "hosts": list(profile.hosts),
            "vms_per_host": profile.vms_per_host,
            "cadence_ms": profile.cadence_ms,
            "ticks": profile.ticks,
            "start_ts": profile.start_ts,
            "shapes": [dataclasses.asdict(s) for s in profile.shapes],
        },
        indent=2,
    )


def profile_from_json(source: str | Path) -> SynthProfile:
    text = Path(source).read_text() if isinstance(source, Path) else source
    try:
        data = json.loads(text)
        shapes = tuple(MetricShape(**row) for row in data.pop("shapes", []))
        if not shapes:
            shapes = DEFAULT_SHAPES
        profile = SynthProfile(hosts=tuple(data.pop("hosts")), shapes=shapes, **data)
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidProfile(f"bad profile: {e}") from None
    return profile.check()


class _StreamGen:
    __slots__ = ("shape", "rng")

    def __init__(self, shape: MetricShape, seed: int, endpoint: EndpointId):
        self.shape = shape
        digest = hashlib.blake2b(
            f"{seed}/{endpoint}/{shape.name}".encode(), digest_size=8
        ).digest()
        self.rng = random.Random(int.from_bytes(digest, "big"))

    def value(self) -> float:
        s = self.shape
        v = s.base + self.rng.uniform(-s.noise_half_width, s.noise_half_width)
        if s.regime == STEADY and s.spike_mag and self.rng.random() < s.spike_prob:
            v += s.spike_mag
        return min(max(v, s.lo), s.hi)


def generate(profile: SynthProfile, seed: int) -> list[TraceRecord]:
    """The whole synthetic trace, ts-ordered; deterministic in (profile, seed)."""
    profile.check()
    endpoints = profile.endpoints()
    gens = {
        (ep, s.name): _StreamGen(s, seed, ep) for ep in endpoints for s in profile.shapes
    }
    records: list[TraceRecord] = []
    for tick in range(profile.ticks):
        ts = profile.ts_of_tick(tick)
        for ep in endpoints:
            for s in profile.shapes:
                records.append(TraceRecord(ts, ep, s.name, gens[(ep, s.name)].value()))
    return records
