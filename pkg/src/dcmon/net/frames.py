"""Control-plane frames and asyncio line IO.

The data plane (batches, matches, alerts, partials, loads, context) is
fixed by `dcmon.wire`. This module adds the frames processes need to
find each other and to ship manager directives: HELLO/HOST for session
setup, PLACE/UNPLACE/OFFLOAD/UNOFFLOAD/LEDGER_*/INVOLVE for placement.
"""

import asyncio

from .. import wire
from ..dsl import AggKind, Aggregator, Cmp, CompiledSubscription, WindowKind, WindowSpec
from ..engine import CepEngine
from ..errors import DcmonError
from ..manager import (
    Involve,
    LedgerLocal,
    LedgerPartial,
    Offload,
    Place,
    Unoffload,
    Unplace,
)
from ..model import EndpointId
from ..publisher import Publisher

# A CTX_RESP for a long range is the largest legitimate frame by far.
MAX_FRAME_BYTES = 8 * 1024 * 1024


# --- line IO -----------------------------------------------------------------

async def read_obj(reader: asyncio.StreamReader) -> dict | None:
    """One decoded frame, or None on clean EOF."""
    try:
        line = await reader.readuntil(b"\n")
    except asyncio.IncompleteReadError as e:
        if e.partial:
            raise DcmonError("connection closed mid-frame") from None
        return None
    except asyncio.LimitOverrunError:
        raise DcmonError(f"frame exceeds {MAX_FRAME_BYTES} bytes") from None
    return wire.decode(line)


async def send_obj(writer: asyncio.StreamWriter, obj: dict) -> int:
    frame = wire.encode(obj)
    writer.write(frame)
    await writer.drain()
    return len(frame)


def connection_limit() -> dict:
    return {"limit": MAX_FRAME_BYTES}


# --- session setup -----------------------------------------------------------

def hello_to_obj(role: str, name: str) -> dict:
    return {"t": "HELLO", "role": role, "name": name}


def host_to_obj(host: str) -> dict:
    return {"t": "HOST", "host": host}


# --- compiled subscriptions ---------------------------------------------------

def cs_to_obj(cs: CompiledSubscription) -> dict:
    return {
        "cid": cs.compiled_id,
        "sub": cs.sub_id,
        "ep": [cs.endpoint.host, cs.endpoint.vm],
        "metric": cs.metric,
        "agg": cs.agg.kind.value,
        "p": cs.agg.p,
        "win": [cs.window.kind.value, cs.window.length],
        "cmp": cs.cmp.value,
        "thr": cs.threshold,
        "ar": cs.spatial_arity,
        "grp": cs.group,
    }


def cs_from_obj(obj: dict) -> CompiledSubscription:
    host, vm = obj["ep"]
    return CompiledSubscription(
        compiled_id=obj["cid"],
        sub_id=obj["sub"],
        endpoint=EndpointId(host, vm),
        metric=obj["metric"],
        agg=Aggregator(AggKind(obj["agg"]), obj["p"]),
        window=WindowSpec(WindowKind(obj["win"][0]), obj["win"][1]),
        cmp=Cmp(obj["cmp"]),
        threshold=obj["thr"],
        spatial_arity=obj["ar"],
        group=obj["grp"],
    )


# --- directives ---------------------------------------------------------------

def directive_to_frame(d) -> tuple[str, dict]:
    """(engine_id the frame must reach, frame). Offloads travel via the
    host's engine, which relays them to the publisher connection."""
    if isinstance(d, Place):
        return d.engine_id, {"t": "PLACE", "off": d.offloaded, "cs": cs_to_obj(d.cs)}
    if isinstance(d, Unplace):
        return d.engine_id, {"t": "UNPLACE", "cid": d.compiled_id}
    if isinstance(d, LedgerLocal):
        return d.engine_id, {"t": "LEDGER_LOCAL", "sub": d.sub_id, "iv": d.interval_ms}
    if isinstance(d, LedgerPartial):
        return d.engine_id, {"t": "LEDGER_PARTIAL", "sub": d.sub_id}
    if isinstance(d, Involve):
        return d.engine_id, {
            "t": "INVOLVE",
            "sub": d.sub_id,
            "on": d.on,
            "eps": [[ep.host, ep.vm] for ep in d.endpoints],
        }
    if isinstance(d, Offload):
        return "", {"t": "OFFLOAD", "host": d.host, "cs": cs_to_obj(d.cs)}
    if isinstance(d, Unoffload):
        return "", {"t": "UNOFFLOAD", "host": d.host, "cid": d.compiled_id}
    raise DcmonError(f"unknown directive {d!r}")


PUBLISHER_FRAMES = frozenset({"OFFLOAD", "UNOFFLOAD"})


def apply_engine_frame(engine: CepEngine, obj: dict) -> None:
    t = obj["t"]
    if t == "PLACE":
        engine.add_subscription(cs_from_obj(obj["cs"]), offloaded=obj["off"])
    elif t == "UNPLACE":
        engine.remove_subscription(obj["cid"])
    elif t == "LEDGER_LOCAL":
        engine.install_local_ledger(obj["sub"], obj["iv"])
    elif t == "LEDGER_PARTIAL":
        engine.mark_partial(obj["sub"])
    elif t == "INVOLVE":
        eps = tuple(EndpointId(h, v) for h, v in obj["eps"])
        engine.apply_involve(eps, obj["sub"], obj["on"])
    else:
        raise DcmonError(f"engine cannot apply frame {t!r}")


def apply_publisher_frame(publisher: Publisher, obj: dict) -> None:
    t = obj["t"]
    if t == "OFFLOAD":
        publisher.apply_offload(cs_from_obj(obj["cs"]))
    elif t == "UNOFFLOAD":
        publisher.remove_offload(obj["cid"])
    else:
        raise DcmonError(f"publisher cannot apply frame {t!r}")
