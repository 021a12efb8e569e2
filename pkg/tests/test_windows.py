import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcmon.dsl import AggKind, Aggregator, WindowKind, WindowSpec
from dcmon.errors import EmptyWindow
from dcmon.harness.oracle import window_aggregate
from dcmon.windows import WindowState, WindowTable

ALL_AGGS = [
    Aggregator(AggKind.VALUE),
    Aggregator(AggKind.MIN),
    Aggregator(AggKind.MAX),
    Aggregator(AggKind.MEAN),
    Aggregator(AggKind.VARIANCE),
    Aggregator(AggKind.STDDEV),
    Aggregator(AggKind.MEDIAN),
    Aggregator(AggKind.PERCENTILE, 95.0),
    Aggregator(AggKind.PERCENTILE, 5.0),
    Aggregator(AggKind.PERCENTILE, 50.0),
]


def _state_for_all(spec: WindowSpec) -> WindowState:
    st_ = WindowState(spec)
    for agg in ALL_AGGS:
        st_.require(agg.kind)
    return st_


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def test_count_window_evicts_to_length():
    s = _state_for_all(WindowSpec(WindowKind.COUNT, 3))
    for i, v in enumerate([1.0, 2.0, 3.0, 4.0, 5.0]):
        s.push(v, 1000 + i)
    assert s.aggregate(Aggregator(AggKind.MIN)) == 3.0
    assert s.aggregate(Aggregator(AggKind.VALUE)) == 5.0
    assert s.aggregate(Aggregator(AggKind.MEAN)) == pytest.approx(4.0)


def test_duration_window_evicts_strictly_older():
    s = _state_for_all(WindowSpec(WindowKind.DURATION, 10))
    s.push(1.0, 1_000)
    s.push(2.0, 6_000)
    s.push(3.0, 11_000)  # horizon 1_000: sample at 1_000 leaves (ts <= horizon)
    assert s.aggregate(Aggregator(AggKind.MIN)) == 2.0
    s.push(4.0, 16_000)  # horizon 6_000 drops the 6_000 sample
    assert s.aggregate(Aggregator(AggKind.MIN)) == 3.0


def test_empty_window_raises():
    s = _state_for_all(WindowSpec(WindowKind.DURATION, 1))
    with pytest.raises(EmptyWindow):
        s.aggregate(Aggregator(AggKind.MEAN))
    s.push(1.0, 1000)
    s.push(2.0, 500_000)
    assert s.aggregate(Aggregator(AggKind.VALUE)) == 2.0


def test_aggregate_without_accumulator_fails_fast():
    s = WindowState(WindowSpec(WindowKind.COUNT, 4))
    s.push(1.0, 1)
    with pytest.raises(RuntimeError):
        s.aggregate(Aggregator(AggKind.MEDIAN))


def test_median_even_averages_middles():
    s = _state_for_all(WindowSpec(WindowKind.COUNT, 4))
    for i, v in enumerate([4.0, 1.0, 3.0, 2.0]):
        s.push(v, i)
    assert s.aggregate(Aggregator(AggKind.MEDIAN)) == 2.5


def test_percentile_nearest_rank():
    s = _state_for_all(WindowSpec(WindowKind.COUNT, 10))
    for i in range(10):
        s.push(float(i + 1), i)
    # ceil(95/100 * 10) = 10th smallest
    assert s.aggregate(Aggregator(AggKind.PERCENTILE, 95.0)) == 10.0
    # ceil(5/100 * 10) = 1st smallest
    assert s.aggregate(Aggregator(AggKind.PERCENTILE, 5.0)) == 1.0
    assert s.aggregate(Aggregator(AggKind.PERCENTILE, 50.0)) == 5.0


def test_variance_is_population_variance():
    s = _state_for_all(WindowSpec(WindowKind.COUNT, 4))
    for i, v in enumerate([2.0, 4.0, 4.0, 6.0]):
        s.push(v, i)
    assert s.aggregate(Aggregator(AggKind.VARIANCE)) == pytest.approx(2.0)
    assert s.aggregate(Aggregator(AggKind.STDDEV)) == pytest.approx(math.sqrt(2.0))


def test_ten_thousand_random_windows_match_oracle():
    """Every aggregator against the sort/two-pass reference on 10^4
    random windows, 1e-9 relative."""
    rng = random.Random(0xA77E)
    worst = 0.0
    for case in range(10_000):
        n = rng.randint(1, 60)
        scale = 10.0 ** rng.randint(-3, 10)
        base = rng.uniform(-4, 4) * scale
        values = [base + rng.uniform(-1, 1) * scale for _ in range(n)]
        if rng.random() < 0.1:  # occasional outlier, the hard case for removal
            values[rng.randrange(n)] = base + rng.uniform(20, 50) * scale
        keep = rng.randint(1, n)
        spec = WindowSpec(WindowKind.COUNT, keep)
        state = _state_for_all(spec)
        for i, v in enumerate(values):
            state.push(v, 1000 + i)
        tail = values[-keep:]
        for agg in ALL_AGGS:
            got = state.aggregate(agg)
            want = window_aggregate(tail, agg)
            worst = max(worst, _rel_err(got, want))
            assert _rel_err(got, want) < 1e-9, (case, agg, got, want)
    assert worst < 1e-9


@given(
    st.lists(
        st.floats(min_value=-1e12, max_value=1e12, allow_nan=False),
        min_size=1,
        max_size=50,
    ),
    st.integers(min_value=1, max_value=50),
)
@settings(max_examples=300, deadline=None)
def test_moment_removal_matches_two_pass(values, keep):
    spec = WindowSpec(WindowKind.COUNT, keep)
    state = _state_for_all(spec)
    for i, v in enumerate(values):
        state.push(v, i)
    tail = values[-keep:]
    got = state.aggregate(Aggregator(AggKind.VARIANCE))
    want = window_aggregate(tail, Aggregator(AggKind.VARIANCE))
    assert _rel_err(got, want) < 1e-9 or abs(got - want) < 1e-9 * max(
        1.0, max(abs(v) for v in tail) ** 2
    )


def test_window_table_shares_states_by_key():
    from dcmon.model import EndpointId

    table = WindowTable()
    ep = EndpointId("h1")
    a = table.acquire(ep, "user_cpu", WindowSpec(WindowKind.COUNT, 5), AggKind.MEAN)
    b = table.acquire(ep, "user_cpu", WindowSpec(WindowKind.COUNT, 5), AggKind.MAX)
    assert a is b
    # INSTANT and COUNT(1) share one state: same normalized window.
    c = table.acquire(ep, "user_cpu", WindowSpec(WindowKind.INSTANT, 1), AggKind.VALUE)
    d = table.acquire(ep, "user_cpu", WindowSpec(WindowKind.COUNT, 1), AggKind.VALUE)
    assert c is d
    assert len(table) == 2

    table.push(ep, "user_cpu", 7.0, 1000)
    assert a.aggregate(Aggregator(AggKind.MEAN)) == 7.0
    assert c.aggregate(Aggregator(AggKind.VALUE)) == 7.0

    table.release(ep, "user_cpu", WindowSpec(WindowKind.COUNT, 5))
    assert len(table) == 2  # still held by the second acquire
    table.release(ep, "user_cpu", WindowSpec(WindowKind.COUNT, 5))
    assert len(table) == 1


def test_push_to_unwatched_stream_is_noop():
    from dcmon.model import EndpointId

    table = WindowTable()
    table.push(EndpointId("h9"), "user_cpu", 1.0, 1000)
    assert len(table) == 0
