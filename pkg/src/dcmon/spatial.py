"""Completion of group-scoped (spatial AND) subscriptions.

Member votes arrive in whatever order the engines emit them. To keep the
group's state independent of arrival order, the ledger only evaluates when
its watermark (the oldest member timestamp) advances, i.e. once every
member has reported for the tick. A member that stops reporting would
freeze the watermark, so a second trigger fires when the spread between
newest and oldest vote exceeds the completion interval; a member that
stale (older than newest - interval) or has never voted counts unmatched,
which is how a silent member eventually clears the group.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DcmonError


@dataclass(slots=True)
class SpatialTransition:
    """The group's combined state changed at sample_ts."""

    sub_id: str
    matched: bool
    sample_ts: int
    observed: float  # the newest member's observation at evaluation


class SpatialLedger:
    """Vote book for one group subscription."""

    __slots__ = ("sub_id", "interval_ms", "_expected", "_votes", "_last_wm", "matched")

    def __init__(self, sub_id: str, members, interval_ms: int):
        self.sub_id = sub_id
        self.interval_ms = interval_ms
        self._expected = frozenset(members)
        if not self._expected:
            raise DcmonError(f"spatial subscription {sub_id} has no members")
        # member -> (matched, observed, ts)
        self._votes: dict[str, tuple[bool, float, int]] = {}
        self._last_wm: int | None = None
        self.matched = False

    def vote(self, member: str, matched: bool, observed: float, ts: int) -> SpatialTransition | None:
        if member not in self._expected:
            raise DcmonError(f"unexpected spatial member {member} for {self.sub_id}")
        self._votes[member] = (matched, observed, ts)
        if len(self._votes) < len(self._expected):
            # Missing members force the group unmatched, and it has never
            # been complete, so no transition is possible yet.
            return None
        wm = min(ts for _, _, ts in self._votes.values())
        mx = max(ts for _, _, ts in self._votes.values())
        advanced = self._last_wm is None or wm > self._last_wm
        if not advanced and mx - wm <= self.interval_ms:
            return None
        self._last_wm = wm
        horizon = mx - self.interval_ms
        new_matched = all(m and t >= horizon for m, _, t in self._votes.values())
        if new_matched == self.matched:
            return None
        self.matched = new_matched
        obs = next(
            o for k in sorted(self._votes) for m, o, t in (self._votes[k],) if t == mx
        )
        return SpatialTransition(self.sub_id, new_matched, sample_ts=mx, observed=obs)
