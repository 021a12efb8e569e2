"""TCP/WebSocket servers and clients wiring the in-process components
into separate OS processes. Everything speaks newline-delimited JSON;
frame layouts live in `dcmon.wire` (data plane) and `dcmon.net.frames`
(control plane)."""

from .engine_server import EngineServer
from .gateway_server import GatewayServer
from .manager_server import ManagerServer
from .publisher_client import PublisherClient, SyntheticSource, TraceSource

__all__ = [
    "EngineServer",
    "GatewayServer",
    "ManagerServer",
    "PublisherClient",
    "SyntheticSource",
    "TraceSource",
]
