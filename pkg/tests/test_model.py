import math

import pytest

from dcmon.errors import (
    DcmonError,
    NonFiniteValue,
    SequenceRegression,
    UnknownGroup,
    UnknownMetric,
)
from dcmon.model import (
    DEFAULT_METRICS,
    EndpointId,
    GroupRegistry,
    MetricBatch,
    MetricRegistry,
    MetricSample,
    StreamValidator,
)


def test_endpoint_parse_and_str():
    assert EndpointId.parse("h1") == EndpointId("h1")
    assert EndpointId.parse("h1/vm3") == EndpointId("h1", 3)
    assert str(EndpointId("h1", 3)) == "h1/vm3"
    assert str(EndpointId("h1")) == "h1"


def test_endpoint_parse_rejects_non_vm_suffix():
    # A slash is only legal in front of a vmN suffix; anything else is
    # more likely a typo in a rule than a real host name.
    for bad in ("h1/3", "h1/vm", "h1/vmx", "/vm1"):
        with pytest.raises(DcmonError):
            EndpointId.parse(bad)
    nested = EndpointId.parse("rack2/a-b.c/vm7")
    assert nested == EndpointId("rack2/a-b.c", 7)


def test_endpoint_ordering_physical_first():
    eps = [EndpointId("a", 2), EndpointId("a"), EndpointId("b"), EndpointId("a", 0)]
    assert sorted(eps) == [
        EndpointId("a"),
        EndpointId("a", 0),
        EndpointId("a", 2),
        EndpointId("b"),
    ]


def test_endpoint_is_hashable_and_frozen():
    ep = EndpointId("h1", 1)
    assert len({ep, EndpointId("h1", 1)}) == 1
    with pytest.raises(AttributeError):
        ep.host = "x"


def test_metric_registry_defaults_and_lookup():
    reg = MetricRegistry()
    assert reg.unit("user_cpu") == "percent"
    assert len(DEFAULT_METRICS) == 7
    with pytest.raises(UnknownMetric):
        reg.require("nope")


def test_metric_registry_rejects_duplicates():
    with pytest.raises(DcmonError):
        MetricRegistry([("a", "x"), ("a", "y")])


def test_group_registry():
    g = GroupRegistry()
    g.add("web", [EndpointId("h1"), EndpointId("h2", 0)])
    assert g.expand("web") == [EndpointId("h1"), EndpointId("h2", 0)]
    with pytest.raises(UnknownGroup):
        g.expand("db")
    with pytest.raises(DcmonError):
        g.add("web", [EndpointId("h3")])
    with pytest.raises(DcmonError):
        g.add("empty", [])
    with pytest.raises(DcmonError):
        g.add("dup", [EndpointId("h1"), EndpointId("h1")])


def test_batch_check_rejects_foreign_samples():
    ep = EndpointId("h1")
    good = MetricBatch(
        publisher="h1",
        samples=[MetricSample(ep, "user_cpu", 1.0, 1000, 1)],
        collected_at=1000,
        batch_seq=1,
    )
    good.check()
    bad = MetricBatch(
        publisher="h2",
        samples=[MetricSample(ep, "user_cpu", 1.0, 1000, 1)],
        collected_at=1000,
        batch_seq=1,
    )
    with pytest.raises(DcmonError):
        bad.check()
    with pytest.raises(DcmonError):
        MetricBatch("h1", [], 1000, 1).check()


class TestStreamValidator:
    def _sample(self, value=1.0, ts=1000, seq=1, metric="user_cpu"):
        return MetricSample(EndpointId("h1"), metric, value, ts, seq)

    def test_accepts_monotone(self):
        v = StreamValidator(MetricRegistry())
        v.validate(self._sample(ts=1000, seq=1))
        v.validate(self._sample(ts=2000, seq=2))

    def test_rejects_nonfinite(self):
        v = StreamValidator(MetricRegistry())
        for bad in (math.nan, math.inf, -math.inf):
            with pytest.raises(NonFiniteValue):
                v.validate(self._sample(value=bad))

    def test_rejects_unknown_metric(self):
        v = StreamValidator(MetricRegistry())
        with pytest.raises(UnknownMetric):
            v.validate(self._sample(metric="bogus"))

    def test_rejects_seq_regression_per_stream(self):
        v = StreamValidator(MetricRegistry())
        v.validate(self._sample(seq=5))
        with pytest.raises(SequenceRegression):
            v.validate(self._sample(ts=2000, seq=5))
        # Different metric has its own sequence space.
        v.validate(self._sample(ts=2000, seq=1, metric="system_cpu"))

    def test_rejects_time_regression_per_endpoint(self):
        v = StreamValidator(MetricRegistry())
        v.validate(self._sample(ts=2000, seq=1))
        with pytest.raises(SequenceRegression):
            v.validate(self._sample(ts=1000, seq=2, metric="system_cpu"))
