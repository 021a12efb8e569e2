"""Context store: retention window, query shape, expiry boundary."""

from dcmon.model import EndpointId, MetricSample
from dcmon.storage import DEFAULT_TTL_MS, ContextStore

H1 = EndpointId.parse("h1")
VM = EndpointId.parse("h1/vm0")


def _sample(ep, metric, ts, v=1.0):
    return MetricSample(ep, metric, v, ts, 1)


def test_query_ordering_and_range():
    store = ContextStore()
    store.append(H1, [_sample(H1, "user_cpu", 2000, 2.0), _sample(H1, "user_cpu", 3000, 3.0)])
    store.append(H1, [_sample(H1, "free_mem", 2000, 9.0)])
    store.append(VM, [_sample(VM, "user_cpu", 1000, 1.0)])
    rows = store.query([VM, H1], 1000, 3000)
    # Sorted by endpoint, metric, ts regardless of insertion or query order.
    assert rows == [
        (H1, "free_mem", 2000, 9.0),
        (H1, "user_cpu", 2000, 2.0),
        (H1, "user_cpu", 3000, 3.0),
        (VM, "user_cpu", 1000, 1.0),
    ]
    # Bounds are inclusive on both ends.
    assert len(store.query([H1], 2000, 2000)) == 2
    assert store.query([H1], 2001, 2999) == []
    assert store.query([EndpointId.parse("h9")], 0, 10_000) == []


def test_expiry_is_strictly_older_than_ttl():
    store = ContextStore(ttl_ms=10_000)
    store.append(H1, [_sample(H1, "user_cpu", 1000)])
    assert store.expire(11_000) == 0  # age exactly ttl: retained
    assert store.sample_count(H1) == 1
    assert store.expire(11_001) == 1
    assert not store.has(H1)
    assert store.endpoints() == []


def test_expiry_leaves_newer_samples():
    store = ContextStore(ttl_ms=10_000)
    store.append(H1, [_sample(H1, "user_cpu", ts) for ts in (1000, 5000, 9000)])
    assert store.expire(16_000) == 2
    assert store.sample_count() == 1
    assert store.query([H1], 0, 99_999)[0][2] == 9000


def test_counts():
    store = ContextStore()
    store.append(H1, [_sample(H1, "user_cpu", 1000)])
    store.append(VM, [_sample(VM, "user_cpu", 1000), _sample(VM, "free_mem", 1000)])
    assert store.sample_count(H1) == 1
    assert store.sample_count(VM) == 2
    assert store.sample_count() == 3
    assert set(store.endpoints()) == {H1, VM}


def test_default_ttl_is_24_hours():
    assert DEFAULT_TTL_MS == 24 * 3600 * 1000
