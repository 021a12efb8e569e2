"""Publisher agent: collect, evaluate offloaded rules, ship.

A source yields this host's readings tick by tick (trace replay or the
synthetic generator); the client pushes each tick's batch to its engine
and applies OFFLOAD/UNOFFLOAD directives the engine relays back between
ticks.
"""

import asyncio
import logging
from pathlib import Path

from .. import wire
from ..harness.synth import SynthProfile, generate, profile_from_json
from ..harness.tracefile import load_trace, to_ticks
from ..model import EndpointId
from ..publisher import Publisher
from . import frames
from .engine_server import _dial

log = logging.getLogger(__name__)

Readings = list[tuple[EndpointId, str, float]]


class TraceSource:
    """One host's slice of a recorded trace."""

    def __init__(self, path: str | Path, host: str):
        self.host = host
        self.ticks: list[tuple[int, Readings]] = []
        for ts, by_host in to_ticks(load_trace(path)):
            readings = by_host.get(host)
            if readings:
                self.ticks.append((ts, readings))


class SyntheticSource:
    """One host's slice of a generated stream."""

    def __init__(self, profile: SynthProfile | str | Path, seed: int, host: str):
        if not isinstance(profile, SynthProfile):
            profile = profile_from_json(Path(profile))
        self.host = host
        self.ticks: list[tuple[int, Readings]] = []
        for ts, by_host in to_ticks(generate(profile, seed)):
            readings = by_host.get(host)
            if readings:
                self.ticks.append((ts, readings))


class PublisherClient:
    def __init__(
        self,
        publisher: Publisher,
        engine_addr: tuple[str, int],
        source,
        interval_s: float = 0.0,
    ):
        self.publisher = publisher
        self.engine_addr = engine_addr
        self.source = source
        self.interval_s = interval_s
        self.batches_sent = 0
        self.matches_sent = 0
        self._writer: asyncio.StreamWriter | None = None
        self._directives: asyncio.Task | None = None

    async def connect(self) -> None:
        """Dial the engine and announce the host; rules for this host can
        be registered once this returns."""
        reader, writer = await _dial(*self.engine_addr)
        await frames.send_obj(
            writer, frames.hello_to_obj("publisher", self.publisher.host)
        )
        self._writer = writer
        self._directives = asyncio.create_task(self._directive_loop(reader))

    async def send_tick(self, ts: int, readings: Readings) -> None:
        batch, matches = self.publisher.tick(readings, ts)
        await frames.send_obj(self._writer, wire.batch_to_obj(batch))
        self.batches_sent += 1
        if matches:
            await frames.send_obj(self._writer, wire.offload_matches_to_obj(matches))
            self.matches_sent += len(matches)

    async def stream(self) -> None:
        for ts, readings in self.source.ticks:
            await self.send_tick(ts, readings)
            if self.interval_s > 0:
                await asyncio.sleep(self.interval_s)

    async def close(self) -> None:
        if self._directives is not None:
            self._directives.cancel()
        if self._writer is not None:
            self._writer.close()

    async def run(self) -> None:
        await self.connect()
        try:
            await self.stream()
        finally:
            await self.close()

    async def _directive_loop(self, reader) -> None:
        try:
            while (obj := await frames.read_obj(reader)) is not None:
                frames.apply_publisher_frame(self.publisher, obj)
        except asyncio.CancelledError:
            raise
        except Exception:
            log.exception("publisher %s: engine link failed", self.publisher.host)
