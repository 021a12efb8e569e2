"""Band-level behavior: sorted entries, boundary sweeps, on-the-fly adds."""

import pytest

from dcmon.dsl import AggKind, Aggregator, Cmp, Direction, WindowKind, WindowSpec, parse
from dcmon.matching import BandSet, ThresholdBand
from dcmon.model import EndpointId
from dcmon.windows import WindowState, WindowTable


def _cs(sub_id, threshold, cmp=Cmp.GT, agg=AggKind.VALUE, endpoint="h1"):
    from dcmon.dsl import compile_subscription

    text = f"WHEN {agg.value}(m) {cmp.value} {threshold!r} ON NODE {endpoint}"
    sub = parse(text).with_identity(sub_id, "t", 0)
    [cs] = compile_subscription(sub, None)
    return cs


def _band(direction=Direction.GREATER, kind=WindowKind.COUNT, length=1):
    state = WindowState(WindowSpec(kind, length))
    state.require(AggKind.VALUE)
    return state, ThresholdBand(Aggregator(AggKind.VALUE), direction, state)


class TestGreaterBand:
    def test_first_evaluation_surfaces_only_matched_side(self):
        # Entries present before the first evaluation need no first-flag
        # bookkeeping: the boundary sweep reports the matched ones and the
        # engine's own (absent) previous state makes them RAISED; the
        # unmatched side stays silent.
        state, band = _band()
        band.add(_cs("a", 10.0))
        band.add(_cs("b", 90.0))
        state.push(50.0, 1000)
        res = band.evaluate(1000)
        [t] = res.transitions
        assert t.compiled_id == "a/h1" and t.matched and not t.first

    def test_cross_up_then_down(self):
        state, band = _band()
        band.add(_cs("a", 10.0))
        state.push(5.0, 1000)
        assert band.evaluate(1000).transitions == []
        state.push(15.0, 2000)
        [t] = band.evaluate(2000).transitions
        assert t.compiled_id == "a/h1" and t.matched and not t.first
        state.push(15.5, 3000)
        assert band.evaluate(3000).transitions == []  # suppressed repeat
        state.push(9.0, 4000)
        [t] = band.evaluate(4000).transitions
        assert not t.matched

    def test_gt_vs_ge_at_exact_threshold(self):
        state, band = _band()
        band.add(_cs("gt", 10.0, Cmp.GT))
        band.add(_cs("ge", 10.0, Cmp.GE))
        state.push(10.0, 1000)
        res = band.evaluate(1000)
        trs = {t.compiled_id: t.matched for t in res.transitions}
        assert trs == {"ge/h1": True}

    def test_threshold_sweep_hits_exact_slice(self):
        state, band = _band()
        for i, thr in enumerate([10.0, 20.0, 30.0, 40.0]):
            band.add(_cs(f"s{i}", thr))
        state.push(25.0, 1000)
        res = band.evaluate(1000)
        assert {t.compiled_id for t in res.transitions if t.matched} == {"s0/h1", "s1/h1"}
        state.push(35.0, 2000)
        res = band.evaluate(2000)
        assert {t.compiled_id for t in res.transitions} == {"s2/h1"}
        state.push(5.0, 3000)
        res = band.evaluate(3000)
        assert {t.compiled_id for t in res.transitions} == {"s0/h1", "s1/h1", "s2/h1"}
        assert not any(t.matched for t in res.transitions)


class TestLessBand:
    def test_lt_le_and_sweep(self):
        state, band = _band(Direction.LESS)
        band.add(_cs("lt", 10.0, Cmp.LT))
        band.add(_cs("le", 10.0, Cmp.LE))
        band.add(_cs("deep", 2.0, Cmp.LT))
        state.push(10.0, 1000)
        res = band.evaluate(1000)
        matched = {t.compiled_id for t in res.transitions if t.matched}
        assert matched == {"le/h1"}
        state.push(1.0, 2000)
        res = band.evaluate(2000)
        assert {t.compiled_id for t in res.transitions} == {"lt/h1", "deep/h1"}
        state.push(50.0, 3000)
        res = band.evaluate(3000)
        assert {t.compiled_id: t.matched for t in res.transitions} == {
            "lt/h1": False,
            "le/h1": False,
            "deep/h1": False,
        }


class TestPendingInserts:
    def test_add_between_evaluations_gets_first_flag(self):
        state, band = _band()
        band.add(_cs("old", 10.0))
        state.push(50.0, 1000)
        band.evaluate(1000)
        # Insert while the band already has a boundary; value still above.
        band.add(_cs("new", 20.0))
        state.push(55.0, 2000)
        res = band.evaluate(2000)
        trs = {t.compiled_id: t for t in res.transitions}
        assert set(trs) == {"new/h1"}
        assert trs["new/h1"].matched and trs["new/h1"].first

    def test_add_unmatched_side_stays_silent(self):
        state, band = _band()
        band.add(_cs("old", 10.0))
        state.push(50.0, 1000)
        band.evaluate(1000)
        band.add(_cs("high", 90.0))  # not matched at 45
        state.push(45.0, 2000)
        [t] = band.evaluate(2000).transitions
        assert t.compiled_id == "high/h1" and not t.matched and t.first
        # It behaves as armed-unmatched afterwards: crossing raises.
        state.push(95.0, 3000)
        [t] = band.evaluate(3000).transitions
        assert t.compiled_id == "high/h1" and t.matched and not t.first

    def test_remove_prunes_entry_and_boundary(self):
        state, band = _band()
        band.add(_cs("a", 10.0))
        band.add(_cs("b", 20.0))
        state.push(30.0, 1000)
        band.evaluate(1000)
        assert band.remove("a/h1")
        assert not band.remove("a/h1")
        state.push(5.0, 2000)
        res = band.evaluate(2000)
        assert {t.compiled_id for t in res.transitions} == {"b/h1"}


class TestSpatialEntries:
    def test_spatial_votes_not_transitions(self):
        from dcmon.dsl import compile_subscription
        from dcmon.model import GroupRegistry

        groups = GroupRegistry()
        groups.add("g", [EndpointId("h1"), EndpointId("h2")])
        sub = parse("WHEN VALUE(m) > 10 ON GROUP g").with_identity("s-1", "t", 0)
        members = compile_subscription(sub, groups)

        state, band = _band()
        band.add(members[0])
        state.push(50.0, 1000)
        res = band.evaluate(1000)
        assert res.transitions == []
        [(cid, matched)] = res.votes
        assert cid == "s-1/h1" and matched
        state.push(51.0, 2000)
        res = band.evaluate(2000)
        # Votes are absolute, emitted every evaluation.
        assert [m for _, m in res.votes] == [True]


class TestBandSet:
    def test_routes_by_stream_and_window(self):
        table = WindowTable()
        bands = BandSet(table)
        bands.add(_cs("a", 10.0))
        bands.add(_cs("b", 10.0, endpoint="h2"))
        table.push(EndpointId("h1"), "m", 50.0, 1000)
        results = bands.evaluate_stream(EndpointId("h1"), "m", 1000)
        assert len(results) == 1
        assert [t.compiled_id for t in results[0].transitions] == ["a/h1"]
        assert "a/h1" in bands and "b/h2" in bands
        assert bands.remove("a/h1")
        assert "a/h1" not in bands
        assert len(table) == 1  # h2 window still acquired

    def test_duplicate_compiled_id_rejected(self):
        from dcmon.errors import DcmonError

        bands = BandSet(WindowTable())
        bands.add(_cs("a", 10.0))
        with pytest.raises(DcmonError):
            bands.add(_cs("a", 10.0))
