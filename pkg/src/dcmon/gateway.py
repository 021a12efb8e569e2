"""Push channel to subscriber clients.

Alerts queue per session (bounded, drop-oldest) and flush in order on
drain, so a reconnecting client sees exactly what it missed, newest 1,000
at most. Delivery is at-most-once per (subscription, transition,
sample_ts), including across reconnects. Byte counters keep alert, context,
and keepalive traffic separate because the bandwidth experiments compare
them independently.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

from . import wire
from .clock import Clock, WallClock
from .engine import AlertEvent
from .errors import DcmonError, UnknownClient
from .model import EndpointId

PENDING_LIMIT = 1000
KEEPALIVE_EVERY_MS = 30_000
DEDUPE_REMEMBER = 100_000

# rows -> (rows, partial_flag); injected by the hosting layer
ContextSource = Callable[[list[EndpointId], int, int], tuple[list, bool]]
Registrar = Callable[[str, str], str]  # (dsl, subscriber) -> sub_id


@dataclass(slots=True)
class ClientAccount:
    alert_bytes: int = 0
    ctx_bytes: int = 0
    keepalive_bytes: int = 0
    bytes_from_client: int = 0
    alerts_delivered: int = 0
    alerts_dropped: int = 0

    @property
    def bytes_to_client(self) -> int:
        return self.alert_bytes + self.ctx_bytes + self.keepalive_bytes


@dataclass(slots=True)
class DeliveredAlert:
    client_id: str
    alert: AlertEvent
    frame: bytes
    deliver_ts: int


class SubscriberSession:
    __slots__ = (
        "client_id",
        "connected",
        "subscriptions",
        "pending",
        "account",
        "last_send_ms",
        "_seen",
        "_seen_order",
    )

    def __init__(self, client_id: str):
        self.client_id = client_id
        self.connected = False
        self.subscriptions: set[str] = set()
        self.pending: deque[AlertEvent] = deque()
        self.account = ClientAccount()
        self.last_send_ms: int | None = None
        self._seen: set[tuple[str, str, int]] = set()
        self._seen_order: deque[tuple[str, str, int]] = deque()

    def offer(self, alert: AlertEvent) -> bool:
        """Queue one alert; False if it was a duplicate transition."""
        key = (alert.sub_id, alert.kind.value, alert.sample_ts)
        if key in self._seen:
            return False
        self._seen.add(key)
        self._seen_order.append(key)
        if len(self._seen_order) > DEDUPE_REMEMBER:
            self._seen.discard(self._seen_order.popleft())
        if len(self.pending) >= PENDING_LIMIT:
            self.pending.popleft()
            self.account.alerts_dropped += 1
        self.pending.append(alert)
        return True


class Gateway:
    def __init__(
        self,
        clock: Clock | None = None,
        context_source: ContextSource | None = None,
        registrar: Registrar | None = None,
    ):
        self.clock = clock or WallClock()
        self.context_source = context_source
        self.registrar = registrar
        self._sessions: dict[str, SubscriberSession] = {}
        self._by_sub: dict[str, set[str]] = {}  # sub_id -> client ids

    # --- sessions ---------------------------------------------------------

    def register_client(self, client_id: str, connected: bool = True) -> SubscriberSession:
        if client_id in self._sessions:
            raise DcmonError(f"duplicate client {client_id}")
        session = SubscriberSession(client_id)
        session.connected = connected
        self._sessions[client_id] = session
        return session

    def session(self, client_id: str) -> SubscriberSession:
        try:
            return self._sessions[client_id]
        except KeyError:
            raise UnknownClient(client_id) from None

    def connect(self, client_id: str) -> None:
        self.session(client_id).connected = True

    def disconnect(self, client_id: str) -> None:
        self.session(client_id).connected = False

    def subscribe_client(self, client_id: str, sub_id: str) -> None:
        self.session(client_id).subscriptions.add(sub_id)
        self._by_sub.setdefault(sub_id, set()).add(client_id)

    def unsubscribe_client(self, client_id: str, sub_id: str) -> None:
        self.session(client_id).subscriptions.discard(sub_id)
        clients = self._by_sub.get(sub_id)
        if clients is not None:
            clients.discard(client_id)
            if not clients:
                del self._by_sub[sub_id]

    def handle_sub(self, client_id: str, dsl_text: str, subscriber: str | None = None) -> dict:
        """Client SUB frame -> SUB_OK/SUB_ERR reply object."""
        session = self.session(client_id)
        if self.registrar is None:
            return wire.sub_err_to_obj("subscription registration unavailable")
        try:
            sub_id = self.registrar(dsl_text, subscriber or client_id)
        except DcmonError as e:
            return wire.sub_err_to_obj(str(e))
        session.subscriptions.add(sub_id)
        self._by_sub.setdefault(sub_id, set()).add(client_id)
        return wire.sub_ok_to_obj(sub_id)

    # --- alert delivery ------------------------------------------------------

    def deliver(self, alert: AlertEvent) -> int:
        """Queue an alert for every session subscribed to it."""
        queued = 0
        for client_id in self._by_sub.get(alert.sub_id, ()):
            if self._sessions[client_id].offer(alert):
                queued += 1
        return queued

    def drain(self, client_id: str) -> list[DeliveredAlert]:
        """Send this session's queue, in order. No-op while disconnected."""
        session = self.session(client_id)
        if not session.connected:
            return []
        now = self.clock.now_ms()
        out = []
        while session.pending:
            alert = session.pending.popleft()
            frame = wire.encode(wire.alert_to_obj(alert))
            session.account.alert_bytes += len(frame)
            session.account.alerts_delivered += 1
            session.last_send_ms = now
            out.append(DeliveredAlert(client_id, alert, frame, now))
        return out

    def drain_all(self) -> list[DeliveredAlert]:
        out = []
        for client_id, session in self._sessions.items():
            if session.pending and session.connected:
                out.extend(self.drain(client_id))
        return out

    # --- keepalive --------------------------------------------------------------

    def keepalive(self) -> list[tuple[str, bytes]]:
        """PING idle connected sessions; returns the frames to send."""
        now = self.clock.now_ms()
        frames = []
        for session in self._sessions.values():
            if not session.connected:
                continue
            last = session.last_send_ms
            if last is None or now - last >= KEEPALIVE_EVERY_MS:
                session.account.keepalive_bytes += len(wire.PING_BYTES)
                session.last_send_ms = now
                frames.append((session.client_id, wire.PING_BYTES))
        return frames

    # --- context brokering ---------------------------------------------------

    def broker_context(
        self, client_id: str, endpoints: list[EndpointId], from_ts: int, to_ts: int
    ) -> tuple[dict, bytes]:
        """Fan a context query out to the owning engines, merge, account."""
        session = self.session(client_id)
        if self.context_source is None:
            rows, partial = [], False
        else:
            rows, partial = self.context_source(endpoints, from_ts, to_ts)
        obj = wire.ctx_resp_to_obj(rows, partial=partial)
        frame = wire.encode(obj)
        session.account.ctx_bytes += len(frame)
        session.last_send_ms = self.clock.now_ms()
        return obj, frame

    # --- accounting ------------------------------------------------------------

    def note_received(self, client_id: str, nbytes: int) -> None:
        self.session(client_id).account.bytes_from_client += nbytes

    def account(self, client_id: str) -> ClientAccount:
        return self.session(client_id).account

    def reset_accounts(self) -> None:
        for session in self._sessions.values():
            session.account = ClientAccount()

    def client_ids(self) -> list[str]:
        return list(self._sessions)
