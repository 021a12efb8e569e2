"""Edge-triggered threshold matching, amortized across subscriptions.

Every subscription on the same (endpoint, metric, aggregate, window) and
the same comparison direction lands in one ThresholdBand: a list of
thresholds kept sorted. One evaluation is a binary search for the new
boundary between matched and unmatched, and only the entries the boundary
swept over change state. Cost is O(log n + transitions), not O(n).

GREATER bands (>, >=) sort ascending with >= before > at equal thresholds:
the matched set is a prefix. LESS bands (<, <=) sort with < before <=:
the matched set is a suffix.

Entries added while the band is live start in a pending set. They resolve
at their first evaluation: positionally matched becomes a first transition
(matched), positionally unmatched resolves silently, and a boundary sweep
over a pending entry never fabricates a CLEARED for a rule that was never
raised.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

from .dsl import Aggregator, Cmp, CompiledSubscription, Direction
from .errors import DcmonError, EmptyWindow
from .model import EndpointId
from .windows import WindowState, WindowTable


class _Entry:
    __slots__ = ("compiled_id", "key", "spatial")

    def __init__(self, compiled_id: str, key: tuple[float, int], spatial: bool):
        self.compiled_id = compiled_id
        self.key = key
        self.spatial = spatial


@dataclass(slots=True)
class Transition:
    """One rule's match state changed (or was established, if first)."""

    compiled_id: str
    matched: bool
    first: bool = False


@dataclass(slots=True)
class BandResult:
    observed: float
    sample_ts: int
    transitions: list[Transition] = field(default_factory=list)
    votes: list[tuple[str, bool]] = field(default_factory=list)  # spatial members


class ThresholdBand:
    """Sorted thresholds of one direction over one aggregate stream."""

    __slots__ = ("agg", "direction", "state", "_keys", "_entries", "_boundary",
                 "_pending", "_evaluated", "_spatial")

    def __init__(self, agg: Aggregator, direction: Direction, state: WindowState):
        self.agg = agg
        self.direction = direction
        self.state = state
        self._keys: list[tuple[float, int]] = []
        self._entries: list[_Entry] = []
        self._boundary = 0  # GREATER: matched prefix end; LESS: matched suffix start
        self._pending: set[_Entry] = set()
        self._evaluated = False
        self._spatial: list[_Entry] = []

    def __len__(self) -> int:
        return len(self._entries)

    def _key_for(self, cs: CompiledSubscription) -> tuple[float, int]:
        # Tiebreak places the inclusive comparison on the matched side of
        # an exactly-equal observation.
        if self.direction is Direction.GREATER:
            return (cs.threshold, 0 if cs.cmp is Cmp.GE else 1)
        return (cs.threshold, 0 if cs.cmp is Cmp.LT else 1)

    def add(self, cs: CompiledSubscription) -> None:
        entry = _Entry(cs.compiled_id, self._key_for(cs), cs.spatial)
        pos = bisect_right(self._keys, entry.key)
        self._keys.insert(pos, entry.key)
        self._entries.insert(pos, entry)
        if self._evaluated:
            if pos < self._boundary:
                self._boundary += 1
            self._pending.add(entry)
        elif self.direction is Direction.LESS:
            self._boundary = len(self._entries)
        if entry.spatial:
            self._spatial.append(entry)

    def remove(self, compiled_id: str) -> bool:
        for i, entry in enumerate(self._entries):
            if entry.compiled_id == compiled_id:
                del self._keys[i]
                del self._entries[i]
                if i < self._boundary:
                    self._boundary -= 1
                self._pending.discard(entry)
                if entry.spatial:
                    self._spatial.remove(entry)
                return True
        return False

    def _matched_key(self, key: tuple[float, int], v: float) -> bool:
        if self.direction is Direction.GREATER:
            return key < (v, 1)
        return key > (v, 0)

    def evaluate(self, sample_ts: int) -> BandResult | None:
        """Recompute the boundary for the window's current aggregate."""
        try:
            v = self.state.aggregate(self.agg)
        except EmptyWindow:
            return None
        result = BandResult(observed=v, sample_ts=sample_ts)
        ob = self._boundary
        if self.direction is Direction.GREATER:
            nb = bisect_left(self._keys, (v, 1))
            raised = self._entries[ob:nb] if nb > ob else ()
            cleared = self._entries[nb:ob] if nb < ob else ()
        else:
            nb = bisect_right(self._keys, (v, 0))
            raised = self._entries[nb:ob] if nb < ob else ()
            cleared = self._entries[ob:nb] if nb > ob else ()

        out = result.transitions
        pending = self._pending
        for e in raised:
            first = e in pending
            if first:
                pending.discard(e)
            if not e.spatial:
                out.append(Transition(e.compiled_id, True, first))
        for e in cleared:
            if e in pending:
                # Inserted into the matched region but never evaluated:
                # its first result is simply "unmatched", not a CLEARED.
                pending.discard(e)
                if not e.spatial:
                    out.append(Transition(e.compiled_id, False, True))
            elif not e.spatial:
                out.append(Transition(e.compiled_id, False))
        if pending:
            for e in list(pending):
                matched = self._matched_key(e.key, v)
                if not e.spatial:
                    out.append(Transition(e.compiled_id, matched, True))
            pending.clear()

        self._boundary = nb
        self._evaluated = True
        if self._spatial:
            result.votes = [
                (e.compiled_id, self._matched_key(e.key, v)) for e in self._spatial
            ]
        return result


class BandSet:
    """The bands of one evaluation pipeline, indexed by stream."""

    def __init__(self, windows: WindowTable):
        self._windows = windows
        self._bands: dict[tuple, ThresholdBand] = {}
        self._by_stream: dict[tuple[EndpointId, str], list[ThresholdBand]] = {}
        self._home: dict[str, tuple] = {}  # compiled_id -> band key

    def __len__(self) -> int:
        return sum(len(b) for b in self._bands.values())

    def add(self, cs: CompiledSubscription) -> None:
        if cs.compiled_id in self._home:
            raise DcmonError(f"duplicate compiled subscription {cs.compiled_id}")
        norm = cs.window.normalized()
        key = (cs.endpoint, cs.metric, cs.agg, norm, cs.cmp.direction)
        band = self._bands.get(key)
        if band is None:
            state = self._windows.acquire(cs.endpoint, cs.metric, norm, cs.agg.kind)
            band = ThresholdBand(cs.agg, cs.cmp.direction, state)
            self._bands[key] = band
            self._by_stream.setdefault((cs.endpoint, cs.metric), []).append(band)
        else:
            self._windows.acquire(cs.endpoint, cs.metric, norm, cs.agg.kind)
        band.add(cs)
        self._home[cs.compiled_id] = key

    def remove(self, compiled_id: str) -> bool:
        key = self._home.pop(compiled_id, None)
        if key is None:
            return False
        band = self._bands[key]
        band.remove(compiled_id)
        endpoint, metric, _agg, norm, _direction = key
        self._windows.release(endpoint, metric, norm)
        if not len(band):
            del self._bands[key]
            stream = (endpoint, metric)
            bands = self._by_stream[stream]
            bands.remove(band)
            if not bands:
                del self._by_stream[stream]
        return True

    def __contains__(self, compiled_id: str) -> bool:
        return compiled_id in self._home

    def evaluate_stream(self, endpoint: EndpointId, metric: str, sample_ts: int) -> list[BandResult]:
        results = []
        for band in self._by_stream.get((endpoint, metric), ()):
            r = band.evaluate(sample_ts)
            if r is not None:
                results.append(r)
        return results
