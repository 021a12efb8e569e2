"""Subscription manager as a TCP + HTTP process.

Engines and gateways dial in over TCP (HELLO identifies which). The
control API the UI and harness consume is HTTP, served by uvicorn on a
second port:

    POST   /subscriptions    body = DSL text (or {"dsl": ...}) -> {"id": ...}
    DELETE /subscriptions/{id}
    GET    /subscriptions
    GET    /engines
    GET    /groups
"""

import asyncio
import dataclasses
import json
import logging

import uvicorn
from fastapi import FastAPI, Request, Response

from .. import wire
from ..errors import DcmonError, UnknownSubscription
from ..manager import SubscriptionManager
from . import frames

log = logging.getLogger(__name__)


class ManagerServer:
    def __init__(
        self,
        manager: SubscriptionManager,
        listen_host: str = "127.0.0.1",
        listen_port: int = 0,
        http_port: int = 0,
        snapshot_path: str | None = None,
        initial_directives: list | None = None,
        max_engines: int = 0,
        watermark: int = 231_000,
    ):
        self.manager = manager
        self.listen_host = listen_host
        self.listen_port = listen_port
        self.http_port = http_port
        self.snapshot_path = snapshot_path
        self.max_engines = max_engines  # 0 = unbounded
        self.watermark = watermark
        self._server: asyncio.Server | None = None
        self._http: uvicorn.Server | None = None
        self._http_task: asyncio.Task | None = None
        self._engines: dict[str, asyncio.StreamWriter] = {}
        self._pending: dict[str, list[dict]] = {}
        self._gateways: list[asyncio.StreamWriter] = []
        # Snapshot restore emits placement directives before any engine
        # connects; they wait in the per-engine queues.
        for d in initial_directives or []:
            self._queue_directive(d)

    @property
    def port(self) -> int:
        assert self._server is not None, "not started"
        return self._server.sockets[0].getsockname()[1]

    @property
    def http_url(self) -> str:
        assert self._http is not None and self._http.started, "not started"
        sock = self._http.servers[0].sockets[0]
        host, port = sock.getsockname()[:2]
        return f"http://{host}:{port}"

    async def start(self) -> None:
        self._server = await asyncio.start_server(
            self._on_connection,
            self.listen_host,
            self.listen_port,
            **frames.connection_limit(),
        )
        config = uvicorn.Config(
            build_control_app(self),
            host=self.listen_host,
            port=self.http_port,
            log_level="warning",
        )
        self._http = uvicorn.Server(config)
        self._http_task = asyncio.create_task(self._http.serve())
        while not self._http.started:
            if self._http_task.done():
                self._http_task.result()
                raise DcmonError("control API failed to start")
            await asyncio.sleep(0.01)

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        if self._http is not None:
            self._http.should_exit = True
        if self._http_task is not None:
            await self._http_task

    # --- directive fan-out ------------------------------------------------------

    def _queue_directive(self, d) -> None:
        engine_id, frame = frames.directive_to_frame(d)
        if not engine_id:  # publisher-bound, relayed via the host's engine
            engine_id = self.manager.engine_of(frame["host"])
        self._pending.setdefault(engine_id, []).append(frame)

    async def dispatch(self, directives: list) -> None:
        for d in directives:
            self._queue_directive(d)
        await self._flush()

    async def _flush(self) -> None:
        for engine_id, queue in self._pending.items():
            writer = self._engines.get(engine_id)
            if writer is None:
                continue
            while queue:
                await frames.send_obj(writer, queue.pop(0))

    def save_snapshot(self) -> None:
        if self.snapshot_path is not None:
            self.manager.save(self.snapshot_path)

    # --- TCP plane ---------------------------------------------------------------

    async def _on_connection(self, reader, writer) -> None:
        peer = writer.get_extra_info("peername")
        try:
            hello = await frames.read_obj(reader)
            if hello is None or hello.get("t") != "HELLO":
                raise DcmonError(f"expected HELLO, got {hello!r}")
            role, name = hello["role"], hello["name"]
            if role == "engine":
                await self._serve_engine(name, reader, writer)
            elif role == "gateway":
                await self._serve_gateway(name, reader, writer)
            else:
                raise DcmonError(f"unexpected role {role!r}")
        except (DcmonError, ConnectionError, asyncio.IncompleteReadError) as e:
            log.warning("manager: connection %s dropped: %s", peer, e)
        finally:
            writer.close()

    async def _serve_engine(self, engine_id, reader, writer) -> None:
        if (
            engine_id not in self.manager.engines
            and self.max_engines
            and len(self.manager.engines) >= self.max_engines
        ):
            raise DcmonError(f"engine cap {self.max_engines} reached, refusing {engine_id}")
        self.manager.register_engine(engine_id)
        self._engines[engine_id] = writer
        await self._flush()
        try:
            while (obj := await frames.read_obj(reader)) is not None:
                t = obj["t"]
                try:
                    if t == "HOST":
                        self.manager.register_host(obj["host"], engine_id)
                    elif t == "ALERT":
                        await self._broadcast(self.manager.route(wire.alert_from_obj(obj)))
                    elif t == "PARTIAL":
                        alert, directives = self.manager.on_partial(wire.partial_from_obj(obj))
                        await self.dispatch(directives)
                        if alert is not None:
                            await self._broadcast(alert)
                    elif t == "LOAD":
                        self.manager.on_load(wire.load_from_obj(obj))
                    else:
                        raise DcmonError(f"unexpected engine frame {t!r}")
                except DcmonError as e:
                    # One rejected frame (an alert racing a subscription
                    # delete, say) must not sever the whole engine link.
                    log.warning("manager: engine %s frame %s rejected: %s",
                                engine_id, t, e)
        finally:
            if self._engines.get(engine_id) is writer:
                del self._engines[engine_id]

    async def _serve_gateway(self, name, reader, writer) -> None:
        self._gateways.append(writer)
        try:
            # Gateways only listen on this link; wait for EOF.
            while await frames.read_obj(reader) is not None:
                pass
        finally:
            self._gateways.remove(writer)

    async def _broadcast(self, alert) -> None:
        obj = wire.internal_alert_to_obj(alert)
        for writer in self._gateways:
            await frames.send_obj(writer, obj)


def build_control_app(server: ManagerServer) -> FastAPI:
    app = FastAPI(title="dcmon manager control API")
    mgr = server.manager

    @app.post("/subscriptions")
    async def create_subscription(request: Request):
        body = (await request.body()).decode("utf-8")
        try:
            obj = json.loads(body)
            dsl_text = obj["dsl"] if isinstance(obj, dict) and "dsl" in obj else body
        except json.JSONDecodeError:
            dsl_text = body
        try:
            sub, directives = mgr.register(dsl_text, subscriber="control-api")
        except DcmonError as e:
            return _error(400, e)
        await server.dispatch(directives)
        server.save_snapshot()
        return {"id": sub.id}

    @app.delete("/subscriptions/{sub_id}")
    async def delete_subscription(sub_id: str):
        try:
            directives = mgr.unregister(sub_id)
        except UnknownSubscription as e:
            return _error(404, e)
        await server.dispatch(directives)
        server.save_snapshot()
        return {"id": sub_id}

    @app.get("/subscriptions")
    async def list_subscriptions():
        return [
            {
                "id": info.sub.id,
                "dsl": info.dsl,
                "arity": info.arity,
                "offloaded": info.offloaded,
                "engines": list(info.engines),
                "raised": info.raised,
            }
            for info in mgr.list_subscriptions()
        ]

    @app.get("/engines")
    async def list_engines():
        loads = mgr.engine_loads()
        return {
            engine_id: (
                dataclasses.asdict(loads[engine_id]) if engine_id in loads else None
            )
            for engine_id in mgr.engines
        }

    @app.get("/groups")
    async def list_groups():
        return {
            name: [str(ep) for ep in mgr.groups.expand(name)]
            for name in mgr.groups.names()
        }

    @app.post("/rebalance")
    async def rebalance(request: Request):
        body = await request.body()
        watermark = server.watermark
        if body:
            try:
                watermark = int(json.loads(body).get("watermark", watermark))
            except (json.JSONDecodeError, AttributeError, TypeError, ValueError) as e:
                return _error(400, e)
        try:
            assignment = mgr.plan_rebalance(watermark)
            moved = sum(1 for h, e in assignment.items() if mgr.assignment.get(h) != e)
            directives = mgr.apply_rebalance(assignment)
        except DcmonError as e:
            return _error(409, e)
        await server.dispatch(directives)
        server.save_snapshot()
        return {"moved_hosts": moved, "epoch": mgr.epoch}

    return app


def _error(code: int, exc: Exception) -> Response:
    return Response(
        content=json.dumps({"error": str(exc)}),
        status_code=code,
        media_type="application/json",
    )
