"""Shared vocabulary: endpoints, metrics, samples, batches, and groups.

Registries are built once from config at startup and treated as read-only
afterwards; samples and batches are plain values, safe to pass between
threads.
"""

from __future__ import annotations

import functools
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    DcmonError,
    NonFiniteValue,
    SequenceRegression,
    UnknownGroup,
    UnknownMetric,
)

# The default metric set: name -> unit, in registration order.
DEFAULT_METRICS: tuple[tuple[str, str], ...] = (
    ("user_cpu", "percent"),
    ("system_cpu", "percent"),
    ("used_disk", "bytes"),
    ("free_mem", "bytes"),
    ("buffer_mem", "bytes"),
    ("entropy", "bits"),
    ("ambient_temp", "celsius"),
)

_VM_SUFFIX = re.compile(r"^vm(\d+)$")


@functools.total_ordering
@dataclass(frozen=True, slots=True)
class EndpointId:
    """A monitored target: a physical host, or one VM on it (vm index set)."""

    host: str
    vm: int | None = field(default=None)

    def __post_init__(self):
        if not self.host:
            raise DcmonError("endpoint host must be nonempty")
        if self.vm is not None and self.vm < 0:
            raise DcmonError("vm index must be >= 0")

    def __str__(self) -> str:
        return self.host if self.vm is None else f"{self.host}/vm{self.vm}"

    # None sorts before any vm index so the physical host leads its VMs.
    def __lt__(self, other: "EndpointId") -> bool:
        return (self.host, -1 if self.vm is None else self.vm) < (
            other.host,
            -1 if other.vm is None else other.vm,
        )

    @classmethod
    def parse(cls, text: str) -> "EndpointId":
        """Parse `host` or `host/vmN`."""
        if "/" in text:
            host, _, suffix = text.rpartition("/")
            m = _VM_SUFFIX.match(suffix)
            if not m or not host:
                raise DcmonError(f"bad endpoint syntax: {text!r} (want host or host/vmN)")
            return cls(host, int(m.group(1)))
        return cls(text)


@dataclass(slots=True)
class MetricSample:
    """One reading from one endpoint, in the metric's natural unit."""

    endpoint: EndpointId
    metric: str
    value: float
    ts: int  # ms since epoch
    seq: int  # per (endpoint, metric), strictly increasing


@dataclass(slots=True)
class MetricBatch:
    """Everything one publisher collected in one tick."""

    publisher: str
    samples: list[MetricSample]
    collected_at: int
    batch_seq: int

    def check(self) -> "MetricBatch":
        if not self.samples:
            raise DcmonError("batch must carry at least one sample")
        for s in self.samples:
            if s.endpoint.host != self.publisher:
                raise DcmonError(
                    f"sample endpoint {s.endpoint} does not belong to publisher {self.publisher}"
                )
        return self


class MetricRegistry:
    """Registered metric names and their units. Write-once at startup."""

    def __init__(self, metrics: tuple[tuple[str, str], ...] | list[tuple[str, str]] = DEFAULT_METRICS):
        self._units: dict[str, str] = {}
        for name, unit in metrics:
            if name in self._units:
                raise DcmonError(f"duplicate metric {name!r}")
            self._units[name] = unit

    def __contains__(self, name: str) -> bool:
        return name in self._units

    def __len__(self) -> int:
        return len(self._units)

    def names(self) -> list[str]:
        return list(self._units)

    def unit(self, name: str) -> str:
        try:
            return self._units[name]
        except KeyError:
            raise UnknownMetric(name) from None

    def require(self, name: str) -> str:
        if name not in self._units:
            raise UnknownMetric(name)
        return name


@dataclass(frozen=True)
class Group:
    name: str
    members: tuple[EndpointId, ...]


class GroupRegistry:
    def __init__(self):
        self._groups: dict[str, Group] = {}

    def add(self, name: str, members: list[EndpointId]) -> Group:
        if name in self._groups:
            raise DcmonError(f"duplicate group {name!r}")
        if not members:
            raise DcmonError(f"group {name!r} has no members")
        if len(set(members)) != len(members):
            raise DcmonError(f"group {name!r} has duplicate members")
        g = Group(name, tuple(members))
        self._groups[name] = g
        return g

    def __contains__(self, name: str) -> bool:
        return name in self._groups

    def names(self) -> list[str]:
        return list(self._groups)

    def expand(self, name: str) -> list[EndpointId]:
        """Members in registration order."""
        try:
            return list(self._groups[name].members)
        except KeyError:
            raise UnknownGroup(f"unknown group {name!r}") from None


class StreamValidator:
    """Enforces per-stream ordering invariants on incoming samples.

    seq must strictly increase per (endpoint, metric); ts must be
    non-decreasing per endpoint. Gaps are fine (missed ticks), regressions
    are not.
    """

    def __init__(self, metrics: MetricRegistry):
        self.metrics = metrics
        self._last_seq: dict[tuple[EndpointId, str], int] = {}
        self._last_ts: dict[EndpointId, int] = {}

    def validate(self, sample: MetricSample) -> MetricSample:
        if not math.isfinite(sample.value):
            raise NonFiniteValue(f"{sample.endpoint}/{sample.metric}: {sample.value!r}")
        if sample.metric not in self.metrics:
            raise UnknownMetric(sample.metric)
        key = (sample.endpoint, sample.metric)
        last = self._last_seq.get(key)
        if last is not None and sample.seq <= last:
            raise SequenceRegression(
                f"{sample.endpoint}/{sample.metric}: seq {sample.seq} <= {last}"
            )
        last_ts = self._last_ts.get(sample.endpoint)
        if last_ts is not None and sample.ts < last_ts:
            raise SequenceRegression(
                f"{sample.endpoint}: ts {sample.ts} < {last_ts}"
            )
        self._last_seq[key] = sample.seq
        self._last_ts[sample.endpoint] = sample.ts
        return sample


def load_config(path: str | Path) -> tuple[MetricRegistry, GroupRegistry]:
    """Load `metrics = [{name, unit}]` and `groups = [{name, members}]`.

    Accepts TOML or JSON, keyed off the file suffix. Group members use the
    `host` / `host/vmN` syntax.
    """
    p = Path(path)
    raw = p.read_bytes()
    if p.suffix == ".json":
        data = json.loads(raw)
    else:
        try:
            import tomllib  # type: ignore[import-not-found]
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(raw.decode("utf-8"))

    metric_rows = data.get("metrics") or []
    metrics = MetricRegistry([(row["name"], row.get("unit", "")) for row in metric_rows]) \
        if metric_rows else MetricRegistry()
    groups = GroupRegistry()
    for row in data.get("groups") or []:
        groups.add(row["name"], [EndpointId.parse(m) for m in row["members"]])
    return metrics, groups
