"""CEP engine as a TCP process.

Listens for publisher and gateway connections, dials the manager once,
and bridges frames to an in-process `CepEngine`. Everything runs on one
event loop, so engine state needs no locking; writes of whole frames to
a shared peer never interleave.
"""

import asyncio
import logging

from .. import wire
from ..engine import CepEngine, EngineEmission
from ..errors import DcmonError
from . import frames

log = logging.getLogger(__name__)

MANAGER_DIAL_ATTEMPTS = 30
MANAGER_DIAL_WAIT_S = 1.0
LOAD_EVERY_MS = 2_000


class EngineServer:
    def __init__(
        self,
        engine: CepEngine,
        listen_host: str = "127.0.0.1",
        listen_port: int = 0,
        manager_addr: tuple[str, int] | None = None,
    ):
        self.engine = engine
        self.listen_host = listen_host
        self.listen_port = listen_port
        self.manager_addr = manager_addr
        self._server: asyncio.Server | None = None
        self._mgr_writer: asyncio.StreamWriter | None = None
        self._mgr_task: asyncio.Task | None = None
        self._publishers: dict[str, asyncio.StreamWriter] = {}
        # Offload directives for hosts whose publisher has not connected yet.
        self._pending_pub: dict[str, list[dict]] = {}
        self._last_load_ms = 0

    @property
    def port(self) -> int:
        assert self._server is not None, "not started"
        return self._server.sockets[0].getsockname()[1]

    async def start(self) -> None:
        if self.manager_addr is not None:
            reader = await self._dial_manager()
            self._mgr_task = asyncio.create_task(self._manager_link(reader))
        self._server = await asyncio.start_server(
            self._on_connection,
            self.listen_host,
            self.listen_port,
            **frames.connection_limit(),
        )

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        if self._mgr_task is not None:
            self._mgr_task.cancel()
        if self._mgr_writer is not None:
            self._mgr_writer.close()

    # --- manager link -------------------------------------------------------

    async def _dial_manager(self) -> asyncio.StreamReader:
        reader, writer = await _dial(*self.manager_addr)
        await frames.send_obj(
            writer, frames.hello_to_obj("engine", self.engine.engine_id)
        )
        self._mgr_writer = writer
        return reader

    async def _manager_link(self, reader: asyncio.StreamReader) -> None:
        """Keep the manager session alive; re-dial and re-announce on a drop."""
        while True:
            try:
                await self._manager_loop(reader)
                log.warning("engine %s: manager closed the link",
                            self.engine.engine_id)
            except asyncio.CancelledError:
                raise
            except Exception:
                log.exception("engine %s: manager link failed",
                              self.engine.engine_id)
            self._mgr_writer = None
            try:
                reader = await self._dial_manager()
            except DcmonError:
                log.error("engine %s: manager unreachable, giving up",
                          self.engine.engine_id)
                return
            log.info("engine %s: manager link re-established",
                     self.engine.engine_id)
            for host in list(self._publishers):
                await self._to_manager(frames.host_to_obj(host))

    async def _manager_loop(self, reader: asyncio.StreamReader) -> None:
        """Apply placement directives; relay offloads to publishers."""
        while (obj := await frames.read_obj(reader)) is not None:
            if obj["t"] in frames.PUBLISHER_FRAMES:
                await self._relay_to_publisher(obj)
            else:
                frames.apply_engine_frame(self.engine, obj)

    async def _relay_to_publisher(self, obj: dict) -> None:
        host = obj["host"]
        writer = self._publishers.get(host)
        if writer is None:
            self._pending_pub.setdefault(host, []).append(obj)
            return
        await frames.send_obj(writer, obj)

    async def _to_manager(self, obj: dict) -> None:
        writer = self._mgr_writer
        if writer is None:
            return
        try:
            await frames.send_obj(writer, obj)
        except (ConnectionError, OSError):
            # _manager_link re-dials; drop the frame, don't kill the caller.
            if self._mgr_writer is writer:
                self._mgr_writer = None

    # --- inbound connections --------------------------------------------------

    async def _on_connection(self, reader, writer) -> None:
        peer = writer.get_extra_info("peername")
        try:
            hello = await frames.read_obj(reader)
            if hello is None or hello.get("t") != "HELLO":
                raise DcmonError(f"expected HELLO, got {hello!r}")
            role, name = hello["role"], hello["name"]
            if role == "publisher":
                await self._serve_publisher(name, reader, writer)
            elif role == "gateway":
                await self._serve_gateway(reader, writer)
            else:
                raise DcmonError(f"unexpected role {role!r}")
        except (DcmonError, ConnectionError, asyncio.IncompleteReadError) as e:
            log.warning("engine %s: connection %s dropped: %s",
                        self.engine.engine_id, peer, e)
        finally:
            writer.close()

    async def _serve_publisher(self, host, reader, writer) -> None:
        self._publishers[host] = writer
        await self._to_manager(frames.host_to_obj(host))
        for pending in self._pending_pub.pop(host, []):
            await frames.send_obj(writer, pending)
        try:
            while (obj := await frames.read_obj(reader)) is not None:
                t = obj["t"]
                if t == "METRIC_BATCH":
                    emission = self.engine.ingest_batch(wire.batch_from_obj(obj))
                elif t == "OFFLOAD_MATCH":
                    matches = wire.offload_matches_from_obj(obj)
                    at = max(m.ts for m in matches)
                    emission = self.engine.ingest_offload_matches(matches, at)
                else:
                    raise DcmonError(f"unexpected publisher frame {t!r}")
                await self._emit(emission)
        finally:
            if self._publishers.get(host) is writer:
                del self._publishers[host]

    async def _serve_gateway(self, reader, writer) -> None:
        while (obj := await frames.read_obj(reader)) is not None:
            if obj["t"] != "CTX_REQ":
                raise DcmonError(f"unexpected gateway frame {obj['t']!r}")
            eps, from_ts, to_ts = wire.ctx_req_from_obj(obj)
            rows = self.engine.query_context(eps, from_ts, to_ts)
            await frames.send_obj(writer, wire.ctx_resp_to_obj(rows))

    async def _emit(self, emission: EngineEmission) -> None:
        for alert in emission.alerts:
            await self._to_manager(wire.internal_alert_to_obj(alert))
        for vote in emission.partials:
            await self._to_manager(wire.partial_to_obj(vote))
        now = self.engine.clock.now_ms()
        if now - self._last_load_ms >= LOAD_EVERY_MS:
            self._last_load_ms = now
            await self._to_manager(wire.load_to_obj(self.engine.report_load()))
            # Announces are idempotent upstream, so repeating them with the
            # load heartbeat heals a HOST frame lost to a link drop.
            for host in list(self._publishers):
                await self._to_manager(frames.host_to_obj(host))


async def _dial(host: str, port: int):
    last: Exception | None = None
    for _ in range(MANAGER_DIAL_ATTEMPTS):
        try:
            return await asyncio.open_connection(
                host, port, **frames.connection_limit()
            )
        except OSError as e:
            last = e
            await asyncio.sleep(MANAGER_DIAL_WAIT_S)
    raise DcmonError(f"cannot reach {host}:{port}: {last}")
