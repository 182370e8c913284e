"""
Frame transports.

Links carry raw 512-byte frames in order. Services (bastions, gatekeeper,
echo) are reached from an exit relay with one length-prefixed request and
one length-prefixed response.

``SimNetwork`` keeps everything in one asyncio loop and delays each frame by
a per-direction latency; ``TcpNetwork`` uses localhost sockets.
"""

from __future__ import annotations

import asyncio
import hashlib
import inspect
import random
import struct
from dataclasses import dataclass
from typing import Awaitable, Callable, Union

from .cells import CELL_LEN

ServiceHandler = Callable[[bytes, str], Union[bytes, Awaitable[bytes]]]
LinkHandler = Callable[["Link"], Awaitable[None]]
Tap = Callable[[str, str, bytes], None]
Mutator = Callable[[str, str, bytes], bytes]

_LEN = struct.Struct(">I")
MAX_SERVICE_MESSAGE = 64 << 20


class LinkClosed(ConnectionError):
    pass


class Link:
    """One end of an ordered frame pipe. ``peer`` is the far end's address."""

    peer: str
    local: str

    def __init__(self, local: str, peer: str) -> None:
        self.local = local
        self.peer = peer
        self._send_lock = asyncio.Lock()
        self.frames_sent = 0
        self.frames_received = 0

    async def send(self, frame: bytes) -> None:
        raise NotImplementedError

    async def recv(self) -> bytes:
        raise NotImplementedError

    async def close(self) -> None:
        raise NotImplementedError

    async def send_frames(self, frames: list[bytes]) -> None:
        """Send a message's frames without interleaving other senders."""
        async with self._send_lock:
            for f in frames:
                await self.send(f)


def _check_frame(frame: bytes) -> None:
    if len(frame) != CELL_LEN:
        raise ValueError(f"frames must be {CELL_LEN} bytes, got {len(frame)}")


@dataclass(frozen=True)
class LatencyModel:
    """
    One-way delay per link direction, in milliseconds.

    Forward is initiator to acceptor (towards the exit); backward is the
    reverse. Jitter is uniform in [-jitter_ms, +jitter_ms], clamped at zero.
    ``service_ms`` is the one-way delay between an exit and a service.
    """

    forward_ms: float = 0.0
    backward_ms: float | None = None
    jitter_ms: float = 0.0
    service_ms: float = 0.0
    seed: int = 0

    @property
    def backward(self) -> float:
        return self.forward_ms if self.backward_ms is None else self.backward_ms

    @classmethod
    def from_rtt(cls, rtt_ms: float, links: int = 3, jitter_ms: float = 0.0, seed: int = 0) -> "LatencyModel":
        """Symmetric model whose client-to-exit round trip is ``rtt_ms``."""
        one_way = rtt_ms / (2 * links)
        return cls(one_way, one_way, jitter_ms, 0.0, seed)

    def rng_for(self, src: str, dst: str) -> random.Random:
        digest = hashlib.sha256(f"{self.seed}|{src}|{dst}".encode()).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))

    def sample(self, base_ms: float, rng: random.Random) -> float:
        if self.jitter_ms <= 0:
            return base_ms / 1e3
        return max(0.0, base_ms + rng.uniform(-self.jitter_ms, self.jitter_ms)) / 1e3


class _SimEnd(Link):
    def __init__(self, net: "SimNetwork", local: str, peer: str, delay_ms: float, rng: random.Random) -> None:
        super().__init__(local, peer)
        self._net = net
        self._delay_ms = delay_ms
        self._rng = rng
        self._inbox: asyncio.Queue = asyncio.Queue()
        self._other: _SimEnd | None = None
        self._last_delivery = 0.0
        self.closed = False

    async def send(self, frame: bytes) -> None:
        _check_frame(frame)
        if self.closed or self._other is None or self._other.closed:
            raise LinkClosed(f"link {self.local}->{self.peer} closed")
        frame = self._net._observe(self.local, self.peer, frame)
        loop = asyncio.get_running_loop()
        # links are FIFO, so jitter never reorders frames
        at = max(loop.time() + self._net.latency.sample(self._delay_ms, self._rng), self._last_delivery)
        self._last_delivery = at
        self.frames_sent += 1
        self._other._inbox.put_nowait((at, frame))

    async def recv(self) -> bytes:
        item = await self._inbox.get()
        if item is None:
            self._inbox.put_nowait(None)
            raise LinkClosed(f"link {self.peer}->{self.local} closed")
        at, frame = item
        wait = at - asyncio.get_running_loop().time()
        if wait > 0:
            await asyncio.sleep(wait)
        self.frames_received += 1
        return frame

    async def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self._inbox.put_nowait(None)
        if self._other is not None:
            self._other._inbox.put_nowait(None)


class SimNetwork:
    """In-process network with latency injection, taps and fault hooks."""

    def __init__(self, latency: LatencyModel | None = None) -> None:
        self.latency = latency or LatencyModel()
        self._listeners: dict[str, LinkHandler] = {}
        self._services: dict[str, ServiceHandler] = {}
        self._tasks: set[asyncio.Task] = set()
        self.taps: list[Tap] = []
        self.mutators: list[Mutator] = []
        self.service_bytes: dict[str, int] = {}

    def _observe(self, src: str, dst: str, frame: bytes) -> bytes:
        for m in self.mutators:
            frame = m(src, dst, frame)
        for tap in self.taps:
            tap(src, dst, frame)
        return frame

    def _spawn(self, coro) -> asyncio.Task:
        task = asyncio.get_running_loop().create_task(coro)
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)
        return task

    def listen(self, address: str, on_link: LinkHandler) -> None:
        self._listeners[address] = on_link

    def unlisten(self, address: str) -> None:
        self._listeners.pop(address, None)

    def register_service(self, address: str, handler: ServiceHandler) -> None:
        self._services[address] = handler

    def unregister_service(self, address: str) -> None:
        self._services.pop(address, None)

    async def open_link(self, src: str, dst: str) -> Link:
        on_link = self._listeners.get(dst)
        if on_link is None:
            raise ConnectionRefusedError(f"nothing listening at {dst}")
        fwd = _SimEnd(self, src, dst, self.latency.forward_ms, self.latency.rng_for(src, dst))
        bwd = _SimEnd(self, dst, src, self.latency.backward, self.latency.rng_for(dst, src))
        fwd._other, bwd._other = bwd, fwd
        self._spawn(on_link(bwd))
        return fwd

    async def request(self, src: str, dst: str, message: bytes, timeout: float | None = None) -> bytes:
        handler = self._services.get(dst)
        if handler is None:
            raise ConnectionRefusedError(f"no service at {dst}")
        rng = self.latency.rng_for(src, dst)

        async def exchange() -> bytes:
            await asyncio.sleep(self.latency.sample(self.latency.service_ms, rng))
            out = handler(message, src)
            if inspect.isawaitable(out):
                out = await out
            await asyncio.sleep(self.latency.sample(self.latency.service_ms, rng))
            return out

        self.service_bytes[dst] = self.service_bytes.get(dst, 0) + len(message)
        return await asyncio.wait_for(exchange(), timeout)

    async def shutdown(self) -> None:
        for task in list(self._tasks):
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)


def split_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {address!r}")
    return host, int(port)


class TcpLink(Link):
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, local: str, peer: str) -> None:
        super().__init__(local, peer)
        self._reader = reader
        self._writer = writer

    async def send(self, frame: bytes) -> None:
        _check_frame(frame)
        if self._writer.is_closing():
            raise LinkClosed(f"link to {self.peer} closed")
        self._writer.write(frame)
        try:
            await self._writer.drain()
        except (ConnectionError, OSError) as exc:
            raise LinkClosed(str(exc)) from exc
        self.frames_sent += 1

    async def recv(self) -> bytes:
        try:
            frame = await self._reader.readexactly(CELL_LEN)
        except (asyncio.IncompleteReadError, ConnectionError, OSError) as exc:
            raise LinkClosed(f"link from {self.peer} closed") from exc
        self.frames_received += 1
        return frame

    async def close(self) -> None:
        if not self._writer.is_closing():
            self._writer.close()
        try:
            await self._writer.wait_closed()
        except (ConnectionError, OSError):
            pass


async def _read_message(reader: asyncio.StreamReader) -> bytes:
    (n,) = _LEN.unpack(await reader.readexactly(_LEN.size))
    if n > MAX_SERVICE_MESSAGE:
        raise ValueError(f"service message of {n} bytes exceeds limit")
    return await reader.readexactly(n)


class TcpNetwork:
    """Localhost sockets; same interface as SimNetwork where relays and clients need it."""

    def __init__(self) -> None:
        self._servers: list[asyncio.AbstractServer] = []

    async def open_link(self, src: str, dst: str) -> Link:
        host, port = split_address(dst)
        reader, writer = await asyncio.open_connection(host, port)
        return TcpLink(reader, writer, src, dst)

    async def serve_links(self, address: str, on_link: LinkHandler) -> asyncio.AbstractServer:
        host, port = split_address(address)

        async def accept(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
            peer = writer.get_extra_info("peername")
            peer_addr = f"{peer[0]}:{peer[1]}" if peer else "unknown"
            await on_link(TcpLink(reader, writer, address, peer_addr))

        server = await asyncio.start_server(accept, host, port)
        self._servers.append(server)
        return server

    async def serve_service(self, address: str, handler: ServiceHandler) -> asyncio.AbstractServer:
        host, port = split_address(address)

        async def accept(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
            peer = writer.get_extra_info("peername")
            peer_addr = f"{peer[0]}:{peer[1]}" if peer else "unknown"
            try:
                while True:
                    try:
                        msg = await _read_message(reader)
                    except (asyncio.IncompleteReadError, ConnectionError):
                        break
                    out = handler(msg, peer_addr)
                    if inspect.isawaitable(out):
                        out = await out
                    writer.write(_LEN.pack(len(out)) + out)
                    await writer.drain()
            except (ValueError, ConnectionError, OSError):
                pass
            finally:
                writer.close()

        server = await asyncio.start_server(accept, host, port)
        self._servers.append(server)
        return server

    async def request(self, src: str, dst: str, message: bytes, timeout: float | None = None) -> bytes:
        async def exchange() -> bytes:
            host, port = split_address(dst)
            reader, writer = await asyncio.open_connection(host, port)
            try:
                writer.write(_LEN.pack(len(message)) + message)
                await writer.drain()
                return await _read_message(reader)
            finally:
                writer.close()

        return await asyncio.wait_for(exchange(), timeout)

    async def shutdown(self) -> None:
        for server in self._servers:
            server.close()
            await server.wait_closed()
        self._servers.clear()
