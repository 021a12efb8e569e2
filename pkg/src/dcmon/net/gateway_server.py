"""Push gateway as an HTTP/WebSocket process.

Clients hold one WebSocket at /ws; every message is one JSON object in
the client protocol (SUB, ALERT, CTX_REQ/CTX_RESP, PING/PONG). Alerts
arrive from the manager over TCP; context queries fan out to every
engine and merge. The manager's control API is proxied under the same
origin so a browser UI needs exactly one address, and a built UI bundle
can be mounted at / with --static.
"""

import asyncio
import json
import logging
import uuid

import httpx
import uvicorn
from fastapi import FastAPI, Request, Response, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles

from .. import wire
from ..errors import DcmonError
from ..gateway import Gateway
from . import frames
from .engine_server import _dial

log = logging.getLogger(__name__)

KEEPALIVE_SWEEP_S = 1.0


class GatewayServer:
    def __init__(
        self,
        gateway: Gateway,
        manager_addr: tuple[str, int],
        manager_http: str,
        engine_addrs: dict[str, tuple[str, int]],
        listen_host: str = "127.0.0.1",
        listen_port: int = 0,
        static_dir: str | None = None,
    ):
        self.gateway = gateway
        self.manager_addr = manager_addr
        self.manager_http = manager_http.rstrip("/")
        self.engine_addrs = engine_addrs
        self.listen_host = listen_host
        self.listen_port = listen_port
        self.static_dir = static_dir
        self._sockets: dict[str, WebSocket] = {}
        self._engines: dict[str, tuple] = {}  # id -> (reader, writer, lock)
        self._mgr_writer: asyncio.StreamWriter | None = None
        self._mgr_task: asyncio.Task | None = None
        self._keepalive_task: asyncio.Task | None = None
        self._http: uvicorn.Server | None = None
        self._http_task: asyncio.Task | None = None
        self._proxy = httpx.AsyncClient(base_url=self.manager_http)

    @property
    def http_url(self) -> str:
        assert self._http is not None and self._http.started, "not started"
        sock = self._http.servers[0].sockets[0]
        host, port = sock.getsockname()[:2]
        return f"http://{host}:{port}"

    async def start(self) -> None:
        reader = await self._dial_manager()
        self._mgr_task = asyncio.create_task(self._manager_link(reader))
        for engine_id, addr in self.engine_addrs.items():
            er, ew = await _dial(*addr)
            await frames.send_obj(ew, frames.hello_to_obj("gateway", "gw"))
            self._engines[engine_id] = (er, ew, asyncio.Lock())
        self._keepalive_task = asyncio.create_task(self._keepalive_loop())
        config = uvicorn.Config(
            build_gateway_app(self),
            host=self.listen_host,
            port=self.listen_port,
            log_level="warning",
        )
        self._http = uvicorn.Server(config)
        self._http_task = asyncio.create_task(self._http.serve())
        while not self._http.started:
            if self._http_task.done():
                self._http_task.result()
                raise DcmonError("gateway HTTP failed to start")
            await asyncio.sleep(0.01)

    async def stop(self) -> None:
        for task in (self._mgr_task, self._keepalive_task):
            if task is not None:
                task.cancel()
        for _, ew, _lock in self._engines.values():
            ew.close()
        if self._mgr_writer is not None:
            self._mgr_writer.close()
        await self._proxy.aclose()
        if self._http is not None:
            self._http.should_exit = True
        if self._http_task is not None:
            await self._http_task

    # --- manager link -------------------------------------------------------

    async def _dial_manager(self):
        reader, writer = await _dial(*self.manager_addr)
        await frames.send_obj(writer, frames.hello_to_obj("gateway", "gw"))
        self._mgr_writer = writer
        return reader

    async def _manager_link(self, reader) -> None:
        """Keep the alert feed alive; re-dial the manager after a drop."""
        while True:
            try:
                await self._manager_loop(reader)
                log.warning("gateway: manager closed the link")
            except asyncio.CancelledError:
                raise
            except Exception:
                log.exception("gateway: manager link failed")
            self._mgr_writer = None
            try:
                reader = await self._dial_manager()
            except DcmonError:
                log.error("gateway: manager unreachable, giving up")
                return
            log.info("gateway: manager link re-established")

    async def _manager_loop(self, reader) -> None:
        while (obj := await frames.read_obj(reader)) is not None:
            if obj.get("t") != "ALERT":
                raise DcmonError(f"unexpected manager frame {obj.get('t')!r}")
            self.gateway.deliver(wire.alert_from_obj(obj))
            await self._pump()

    async def _pump(self) -> None:
        """Flush queued alerts to every attached socket, in queue order."""
        for client_id, ws in list(self._sockets.items()):
            for d in self.gateway.drain(client_id):
                await ws.send_text(d.frame.decode("utf-8"))

    async def _keepalive_loop(self) -> None:
        while True:
            await asyncio.sleep(KEEPALIVE_SWEEP_S)
            await self._pump()
            for client_id, frame in self.gateway.keepalive():
                ws = self._sockets.get(client_id)
                if ws is not None:
                    await ws.send_text(frame.decode("utf-8"))

    # --- client protocol ------------------------------------------------------

    async def handle_socket(self, ws: WebSocket) -> None:
        client_id = ws.query_params.get("client") or f"c-{uuid.uuid4().hex[:8]}"
        await ws.accept()
        if client_id in self.gateway.client_ids():
            self.gateway.connect(client_id)
        else:
            self.gateway.register_client(client_id)
        self._sockets[client_id] = ws
        try:
            await self._pump()  # queued-while-away backlog flushes first
            while True:
                raw = await ws.receive_text()
                self.gateway.note_received(client_id, len(raw.encode("utf-8")))
                await self._on_client_frame(client_id, ws, wire.decode(raw))
        except WebSocketDisconnect:
            pass
        finally:
            if self._sockets.get(client_id) is ws:
                del self._sockets[client_id]
            self.gateway.disconnect(client_id)

    async def _on_client_frame(self, client_id: str, ws: WebSocket, obj: dict) -> None:
        t = obj.get("t")
        if t == "SUB":
            reply = await self._register(client_id, obj.get("dsl", ""))
            await ws.send_text(wire.dumps(reply))
        elif t == "CTX_REQ":
            eps, from_ts, to_ts = wire.ctx_req_from_obj(obj)
            rows, partial = await self._fan_context(eps, from_ts, to_ts)
            resp = wire.ctx_resp_to_obj(rows, partial=partial)
            frame = wire.encode(resp)
            session = self.gateway.session(client_id)
            session.account.ctx_bytes += len(frame)
            session.last_send_ms = self.gateway.clock.now_ms()
            await ws.send_text(frame.decode("utf-8"))
        elif t == "PING":
            await ws.send_text(wire.dumps(wire.PONG))
        else:
            await ws.send_text(wire.dumps(wire.sub_err_to_obj(f"unknown frame {t!r}")))

    async def _register(self, client_id: str, dsl_text: str) -> dict:
        resp = await self._proxy.post("/subscriptions", content=dsl_text.encode())
        if resp.status_code != 200:
            try:
                msg = resp.json().get("error", resp.text)
            except json.JSONDecodeError:
                msg = resp.text
            return wire.sub_err_to_obj(msg)
        sub_id = resp.json()["id"]
        self.gateway.subscribe_client(client_id, sub_id)
        return wire.sub_ok_to_obj(sub_id)

    # --- context fan-out --------------------------------------------------------

    async def _fan_context(self, endpoints, from_ts, to_ts):
        rows: list = []
        partial = False
        req = wire.ctx_req_to_obj(endpoints, from_ts, to_ts)
        for engine_id, (reader, writer, lock) in self._engines.items():
            try:
                async with lock:  # one in-flight query per engine link
                    await frames.send_obj(writer, req)
                    resp = await frames.read_obj(reader)
                if resp is None:
                    raise DcmonError("engine closed")
                rows.extend(wire.ctx_resp_from_obj(resp))
            except (DcmonError, ConnectionError, OSError) as e:
                log.warning("gateway: context from %s failed: %s", engine_id, e)
                partial = True
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        return rows, partial


def build_gateway_app(server: GatewayServer) -> FastAPI:
    app = FastAPI(title="dcmon gateway")

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await server.handle_socket(ws)

    # Control API proxied 1:1 so the UI sees a single origin.
    @app.post("/subscriptions")
    async def create_subscription(request: Request):
        upstream = await server._proxy.post("/subscriptions", content=await request.body())
        return _relay(upstream)

    @app.delete("/subscriptions/{sub_id}")
    async def delete_subscription(sub_id: str):
        return _relay(await server._proxy.delete(f"/subscriptions/{sub_id}"))

    @app.get("/subscriptions")
    async def list_subscriptions():
        return _relay(await server._proxy.get("/subscriptions"))

    @app.get("/engines")
    async def list_engines():
        return _relay(await server._proxy.get("/engines"))

    @app.get("/groups")
    async def list_groups():
        return _relay(await server._proxy.get("/groups"))

    if server.static_dir is not None:
        app.mount("/", StaticFiles(directory=server.static_dir, html=True), name="ui")

    return app


def _relay(upstream: httpx.Response) -> Response:
    return Response(
        content=upstream.content,
        status_code=upstream.status_code,
        media_type=upstream.headers.get("content-type", "application/json"),
    )
