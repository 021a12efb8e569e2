"""Engine behavior: edge-triggered alerts, pipelines, offload replay, and
context retention tied to alert involvement."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcmon.clock import SimClock
from dcmon.dsl import compile_subscription, parse
from dcmon.engine import AlertKind, CepEngine
from dcmon.errors import DcmonError, SequenceRegression, UnknownSubscription
from dcmon.model import EndpointId, GroupRegistry, MetricBatch, MetricRegistry, MetricSample

H1 = EndpointId.parse("h1")
H2 = EndpointId.parse("h2")

REG = MetricRegistry()
METRIC = "user_cpu"


def _engine(**kw) -> CepEngine:
    kw.setdefault("clock", SimClock())
    return CepEngine("e1", **kw)


def _compile(text, sub_id="s", groups=None):
    sub = parse(text).with_identity(sub_id, "t", 0)
    return compile_subscription(sub, groups)


def _add(engine, text, sub_id="s", groups=None):
    css = _compile(text, sub_id, groups)
    for cs in css:
        engine.add_subscription(cs)
    return css


def _batch(values_by_endpoint, ts, seq, publisher="h1"):
    samples = [
        MetricSample(ep, METRIC, v, ts, seq) for ep, v in values_by_endpoint.items()
    ]
    return MetricBatch(publisher=publisher, samples=samples, collected_at=ts, batch_seq=seq)


def _feed(engine, values, threshold_rule=None, endpoint=H1):
    """Push one sample per tick; return the alert kinds that came out."""
    out = []
    for i, v in enumerate(values):
        engine.clock.set((i + 1) * 1000)
        em = engine.ingest_batch(_batch({endpoint: v}, (i + 1) * 1000, i + 1))
        out.extend(a.kind for a in em.alerts)
    return out


class TestEdgeTrigger:
    def test_consecutive_matches_raise_exactly_once(self):
        eng = _engine()
        _add(eng, f"WHEN VALUE({METRIC}) > 50 ON NODE h1")
        kinds = _feed(eng, [80.0] * 6)
        assert kinds == [AlertKind.RAISED]

    def test_clear_emits_exactly_once(self):
        eng = _engine()
        _add(eng, f"WHEN VALUE({METRIC}) > 50 ON NODE h1")
        kinds = _feed(eng, [80.0, 80.0, 10.0, 10.0, 80.0])
        assert kinds == [AlertKind.RAISED, AlertKind.CLEARED, AlertKind.RAISED]

    def test_never_matching_rule_is_silent(self):
        eng = _engine()
        _add(eng, f"WHEN VALUE({METRIC}) > 1e9 ON NODE h1")
        assert _feed(eng, [80.0] * 10) == []

    @given(
        st.lists(st.booleans(), min_size=1, max_size=40),
        st.sampled_from(["VALUE", "MEAN", "MAX"]),
    )
    @settings(max_examples=150, deadline=None)
    def test_alert_count_equals_edge_count(self, pattern, agg):
        """Criterion: n consecutive matching evaluations produce exactly one
        RAISED, and exactly one CLEARED when the state flips back."""
        window = "" if agg == "VALUE" else " OVER LAST 1 SAMPLES"
        eng = _engine()
        _add(eng, f"WHEN {agg}({METRIC}){window} > 50 ON NODE h1")
        values = [80.0 if m else 10.0 for m in pattern]
        kinds = _feed(eng, values)
        raises = sum(1 for k in kinds if k is AlertKind.RAISED)
        clears = sum(1 for k in kinds if k is AlertKind.CLEARED)
        edges_up = sum(
            1 for i, m in enumerate(pattern) if m and (i == 0 or not pattern[i - 1])
        )
        edges_down = sum(
            1 for i, m in enumerate(pattern) if not m and i > 0 and pattern[i - 1]
        )
        assert raises == edges_up and clears == edges_down

    def test_alert_fields(self):
        eng = _engine()
        _add(eng, f"WHEN MEAN({METRIC}) OVER LAST 2 SAMPLES > 50 ON NODE h1", "cpu-hot")
        eng.clock.set(1000)
        em = eng.ingest_batch(_batch({H1: 90.0}, 1000, 1))
        [a] = em.alerts
        assert a.sub_id == "cpu-hot"
        assert a.kind is AlertKind.RAISED
        assert a.endpoints == (H1,)
        assert a.group is None
        assert a.observed == 90.0 and a.threshold == 50.0
        assert a.sample_ts == 1000 and a.collected_at == 1000
        assert a.detect_ts == 1000


class TestSubscriptionLifecycle:
    def test_duplicate_rejected(self):
        eng = _engine()
        [cs] = _compile(f"WHEN VALUE({METRIC}) > 1 ON NODE h1")
        eng.add_subscription(cs)
        with pytest.raises(DcmonError):
            eng.add_subscription(cs)

    def test_remove_unknown(self):
        with pytest.raises(UnknownSubscription):
            _engine().remove_subscription("nope/h1")

    def test_remove_clears_state_and_involvement(self):
        eng = _engine()
        [cs] = _add(eng, f"WHEN VALUE({METRIC}) > 50 ON NODE h1")
        _feed(eng, [80.0])
        assert eng.match_state(cs.compiled_id) and eng.is_involved(H1)
        eng.remove_subscription(cs.compiled_id)
        assert not eng.match_state(cs.compiled_id)
        assert not eng.is_involved(H1)
        assert eng.subscription_count() == 0

    def test_validator_rejects_seq_regression(self):
        eng = _engine()
        eng.ingest_batch(_batch({H1: 1.0}, 1000, 5))
        with pytest.raises(SequenceRegression):
            eng.ingest_batch(_batch({H1: 1.0}, 2000, 5))


class TestPipelines:
    def test_multi_mode_flushes_per_cost_class(self):
        seen: list[list[str]] = []
        eng = _engine(alert_sink=lambda alerts: seen.append([a.sub_id for a in alerts]))
        _add(eng, f"WHEN VALUE({METRIC}) > 50 ON NODE h1", "fast")
        _add(eng, f"WHEN MEDIAN({METRIC}) OVER LAST 1 SAMPLES > 50 ON NODE h1", "slow")
        eng.clock.set(1000)
        eng.ingest_batch(_batch({H1: 90.0}, 1000, 1))
        # Two flushes: the value pipeline's alert leaves before the order
        # statistics pipeline runs.
        assert seen == [["fast"], ["slow"]]

    def test_single_mode_flushes_once(self):
        seen = []
        eng = _engine(
            pipeline_mode="single",
            alert_sink=lambda alerts: seen.append([a.sub_id for a in alerts]),
        )
        _add(eng, f"WHEN VALUE({METRIC}) > 50 ON NODE h1", "fast")
        _add(eng, f"WHEN MEDIAN({METRIC}) OVER LAST 1 SAMPLES > 50 ON NODE h1", "slow")
        eng.clock.set(1000)
        eng.ingest_batch(_batch({H1: 90.0}, 1000, 1))
        assert seen == [["fast", "slow"]]

    def test_modes_produce_identical_alerts(self):
        runs = {}
        for mode in ("multi", "single"):
            eng = _engine(pipeline_mode=mode)
            for i, agg in enumerate(("VALUE", "MEAN", "MAX", "MEDIAN")):
                window = "" if agg == "VALUE" else " OVER LAST 3 SAMPLES"
                _add(eng, f"WHEN {agg}({METRIC}){window} > 50 ON NODE h1", f"r{i}")
            alerts = []
            for i, v in enumerate([10.0, 90.0, 90.0, 10.0, 10.0, 95.0]):
                eng.clock.set((i + 1) * 1000)
                em = eng.ingest_batch(_batch({H1: v}, (i + 1) * 1000, i + 1))
                alerts.extend((a.sub_id, a.kind.value, a.sample_ts) for a in em.alerts)
            runs[mode] = alerts
        assert set(runs["multi"]) == set(runs["single"])
        assert len(runs["multi"]) == len(runs["single"])

    def test_unknown_mode_rejected(self):
        with pytest.raises(DcmonError):
            CepEngine("e1", pipeline_mode="both")


class TestOffloadReplay:
    def _offloaded_engine(self):
        from dcmon.publisher import Publisher

        eng = _engine()
        [cs] = _compile(f"WHEN VALUE({METRIC}) > 50 ON NODE h1")
        eng.add_subscription(cs, offloaded=True)
        pub = Publisher("h1")
        pub.apply_offload(cs)
        return eng, pub, cs

    def test_state_reconstructed_from_deltas(self):
        eng, pub, cs = self._offloaded_engine()
        for i, v in enumerate([10.0, 80.0, 80.0, 10.0]):
            ts = (i + 1) * 1000
            eng.clock.set(ts)
            batch, matches = pub.tick([(H1, METRIC, v)], ts)
            em = eng.ingest_offload_matches(matches, batch.collected_at)
            if v == 80.0 and i == 1:
                assert [a.kind for a in em.alerts] == [AlertKind.RAISED]
            elif i == 3:
                assert [a.kind for a in em.alerts] == [AlertKind.CLEARED]
            else:
                assert em.alerts == []
            assert eng.match_state(cs.compiled_id) == (v > 50)

    def test_involvement_follows_offloaded_state(self):
        eng, pub, _ = self._offloaded_engine()
        eng.clock.set(1000)
        _, matches = pub.tick([(H1, METRIC, 80.0)], 1000)
        eng.ingest_offload_matches(matches, 1000)
        assert eng.is_involved(H1)
        eng.clock.set(2000)
        _, matches = pub.tick([(H1, METRIC, 10.0)], 2000)
        eng.ingest_offload_matches(matches, 2000)
        assert not eng.is_involved(H1)

    def test_late_frame_for_removed_rule_ignored(self):
        eng, pub, cs = self._offloaded_engine()
        _, matches = pub.tick([(H1, METRIC, 80.0)], 1000)
        eng.remove_subscription(cs.compiled_id)
        em = eng.ingest_offload_matches(matches, 1000)
        assert em.alerts == []

    def test_duplicate_delta_is_idempotent(self):
        eng, pub, _ = self._offloaded_engine()
        _, matches = pub.tick([(H1, METRIC, 80.0)], 1000)
        eng.clock.set(1000)
        assert len(eng.ingest_offload_matches(matches, 1000).alerts) == 1
        assert eng.ingest_offload_matches(matches, 1000).alerts == []


class TestGroupCompletion:
    def test_local_ledger_raises_group_alert(self):
        groups = GroupRegistry()
        groups.add("web", [H1, H2])
        eng = _engine()
        _add(eng, f"WHEN VALUE({METRIC}) > 50 ON GROUP web", "g", groups)
        eng.install_local_ledger("g", interval_ms=2000)
        eng.clock.set(1000)
        em = eng.ingest_batch(_batch({H1: 80.0, H2: 80.0}, 1000, 1))
        [a] = em.alerts
        assert a.kind is AlertKind.RAISED and a.group == "web"
        assert a.endpoints == (H1, H2)
        assert em.partials == []
        assert eng.is_involved(H1) and eng.is_involved(H2)

    def test_partial_subs_emit_votes_not_alerts(self):
        groups = GroupRegistry()
        groups.add("web", [H1, H2])
        eng = _engine()
        _add(eng, f"WHEN VALUE({METRIC}) > 50 ON GROUP web", "g", groups)
        eng.mark_partial("g")
        eng.clock.set(1000)
        em = eng.ingest_batch(_batch({H1: 80.0}, 1000, 1))
        assert em.alerts == []
        [v] = em.partials
        assert v.sub_id == "g" and v.endpoint == H1 and v.matched
        assert v.observed == 80.0 and v.sample_ts == 1000

    def test_install_ledger_requires_members(self):
        with pytest.raises(UnknownSubscription):
            _engine().install_local_ledger("nope", 2000)

    def test_manager_directed_involvement(self):
        eng = _engine()
        eng.apply_involve([H1], "g", True)
        assert eng.is_involved(H1)
        eng.apply_involve([H1], "g", False)
        assert not eng.is_involved(H1)


class TestContextRetention:
    def test_storage_only_for_involved_endpoints(self):
        eng = _engine()
        _add(eng, f"WHEN VALUE({METRIC}) > 50 ON NODE h1")
        for i, (v1, v2) in enumerate([(10.0, 10.0), (80.0, 10.0), (80.0, 10.0)]):
            ts = (i + 1) * 1000
            eng.clock.set(ts)
            eng.ingest_batch(_batch({H1: v1, H2: v2}, ts, i + 1))
        # h1 stored from the batch that raised; h2 never involved, never stored.
        assert eng.store.sample_count(H1) == 2
        assert eng.store.sample_count(H2) == 0
        rows = eng.query_context([H1, H2], 0, 10_000)
        assert [(r[0], r[2]) for r in rows] == [(H1, 2000), (H1, 3000)]

    def test_retention_survives_clear_until_ttl(self):
        eng = _engine(storage_ttl_ms=5_000)
        _add(eng, f"WHEN VALUE({METRIC}) > 50 ON NODE h1")
        _feed(eng, [80.0, 10.0])  # raise at 1000, clear at 2000
        assert eng.store.sample_count(H1) == 1  # the raising batch
        assert eng.expire_storage(5_999) == 0  # 1000 is not yet older than ttl
        assert eng.expire_storage(6_001) == 1
        assert not eng.store.has(H1)

    def test_ttl_expiry_time_compressed(self):
        # Default 24 h ttl exercised on a simulated clock: samples written at
        # t0 vanish exactly when the clock jumps past t0 + 24 h.
        eng = _engine()
        _add(eng, f"WHEN VALUE({METRIC}) > 50 ON NODE h1")
        _feed(eng, [80.0])
        day_ms = 24 * 3600 * 1000
        assert eng.expire_storage(1000 + day_ms) == 0  # boundary sample retained
        assert eng.expire_storage(1001 + day_ms) == 1

    def test_periodic_sweep_runs_during_ingest(self):
        eng = _engine(storage_ttl_ms=1_000)
        _add(eng, f"WHEN VALUE({METRIC}) > 50 ON NODE h1")
        eng.clock.set(1000)
        eng.ingest_batch(_batch({H1: 80.0}, 1000, 1))
        assert eng.store.sample_count(H1) == 1
        # Next ingest lands a minute later; the sweep drops the stale sample
        # and the new one (batch still matching, still involved) replaces it.
        eng.clock.set(61_000)
        eng.ingest_batch(_batch({H1: 80.0}, 61_000, 2))
        assert [ts for ts, _, _ in eng.store._data[H1]] == [61_000]


class TestLoadReport:
    def test_fields_reflect_activity(self):
        eng = _engine()
        _add(eng, f"WHEN VALUE({METRIC}) > 50 ON NODE h1")
        eng.clock.set(1000)
        eng.ingest_batch(_batch({H1: 80.0}, 1000, 1))
        rep = eng.report_load()
        assert rep.engine_id == "e1"
        assert rep.subscription_count == 1
        assert rep.batches_per_sec == pytest.approx(1 / 60)
        assert rep.windows >= 1
        assert rep.involved_endpoints == 1
        assert rep.stored_samples == 1
