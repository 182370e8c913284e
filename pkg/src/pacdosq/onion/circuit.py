"""Client side of a 3-hop telescoping circuit."""

from __future__ import annotations

import asyncio
import enum
import random
from dataclasses import dataclass

from .. import pqc
from ..pqc import Provider
from .cells import Cell, CellError, Command, DestroyReason, Reassembler, fragment
from .directory import Consensus, DirectoryError, RelayDescriptor
from .relay import (
    STATUS_OK,
    STATUS_TIMEOUT,
    destroy_frame,
    encode_exit_request,
    encode_extend,
    key_confirmation,
    parse_destroy_reason,
)
from .transport import Link, LinkClosed

CIRCUIT_HOPS = 3


class CircuitError(Exception):
    pass


class CircuitBuildError(CircuitError):
    def __init__(self, hop: int, reason: str) -> None:
        super().__init__(f"circuit build failed at hop {hop}: {reason}")
        self.hop = hop
        self.reason = reason


class CircuitClosed(CircuitError):
    pass


class DestinationUnreachable(CircuitError):
    pass


class CircuitState(str, enum.Enum):
    BUILDING = "building"
    READY = "ready"
    CLOSED = "closed"


@dataclass
class HopKeys:
    relay_id: bytes
    forward_key: bytes
    backward_key: bytes
    fwd_ctr: int = 0
    bwd_ctr: int = 0


class Circuit:
    def __init__(self, link: Link, circuit_id: int, provider: Provider, path: list[RelayDescriptor]) -> None:
        self.link = link
        self.circuit_id = circuit_id
        self.provider = provider
        self.path = path
        self.hops: list[HopKeys] = []
        self.state = CircuitState.BUILDING
        self.destroy_reason: DestroyReason | None = None
        self._inbox: asyncio.Queue = asyncio.Queue()
        self._lock = asyncio.Lock()
        self._reader: asyncio.Task | None = None
        self.payload_bytes_sent = 0
        self.payload_bytes_received = 0

    @property
    def cells_sent(self) -> int:
        return self.link.frames_sent

    @property
    def cells_received(self) -> int:
        return self.link.frames_received

    def _start_reader(self) -> None:
        self._reader = asyncio.get_running_loop().create_task(self._read_loop())

    async def _read_loop(self) -> None:
        reasm = Reassembler()
        try:
            while True:
                cell = Cell.from_bytes(await self.link.recv())
                if cell.circuit_id != self.circuit_id:
                    continue
                done = reasm.feed(cell)
                if done is not None:
                    self._inbox.put_nowait((cell.command, done[1]))
        except (LinkClosed, CellError):
            pass
        finally:
            self._inbox.put_nowait(None)

    async def _next_message(self, timeout: float | None) -> tuple[Command, bytes]:
        item = await asyncio.wait_for(self._inbox.get(), timeout)
        if item is None:
            self._inbox.put_nowait(None)
            self.state = CircuitState.CLOSED
            raise CircuitClosed("link closed")
        command, msg = item
        if command is Command.DESTROY:
            self.destroy_reason = parse_destroy_reason(msg)
            self.state = CircuitState.CLOSED
            raise CircuitClosed(f"circuit destroyed ({self.destroy_reason.name})")
        return command, msg

    def _wrap(self, command: Command, data: bytes) -> bytes:
        for hop in reversed(self.hops):
            data = self.provider.aead_seal(hop.forward_key, pqc.counter_nonce(hop.fwd_ctr), data, bytes([command]))
            hop.fwd_ctr += 1
        return data

    def _unwrap(self, command: Command, data: bytes) -> bytes:
        for hop in self.hops:
            data = self.provider.aead_open(hop.backward_key, pqc.counter_nonce(hop.bwd_ctr), data, bytes([command]))
            hop.bwd_ctr += 1
        return data

    async def _send_layered(self, command: Command, data: bytes) -> None:
        await self.link.send_frames(fragment(self.circuit_id, command, self._wrap(command, data)))

    async def send(self, dest: str, payload: bytes) -> None:
        if self.state is not CircuitState.READY:
            raise CircuitClosed(f"circuit is {self.state.value}")
        self.payload_bytes_sent += len(payload)
        try:
            await self._send_layered(Command.RELAY_DATA, encode_exit_request(dest, payload))
        except LinkClosed as exc:
            self.state = CircuitState.CLOSED
            raise CircuitClosed("link closed") from exc

    async def recv(self, timeout: float | None = None) -> bytes:
        """Next reply from the exit: the service's response bytes."""
        while True:
            command, msg = await self._next_message(timeout)
            if command is not Command.RELAY_DATA:
                continue
            try:
                plain = self._unwrap(command, msg)
            except pqc.AuthenticationError as exc:
                await self.close(DestroyReason.AUTH_FAILED)
                raise CircuitClosed("backward layer failed authentication") from exc
            if not plain:
                raise CircuitError("empty exit reply")
            status, body = plain[0], plain[1:]
            if status == STATUS_OK:
                self.payload_bytes_received += len(body)
                return body
            if status == STATUS_TIMEOUT:
                raise DestinationUnreachable("destination timed out at exit")
            raise DestinationUnreachable("destination unreachable from exit")

    async def request(self, dest: str, payload: bytes, timeout: float | None = None) -> bytes:
        """One request/response exchange; a timeout closes the circuit."""
        async with self._lock:
            await self.send(dest, payload)
            try:
                return await self.recv(timeout)
            except asyncio.TimeoutError:
                await self.close(DestroyReason.TIMEOUT)
                raise

    async def close(self, reason: DestroyReason = DestroyReason.REQUESTED) -> None:
        if self.state is not CircuitState.CLOSED:
            self.state = CircuitState.CLOSED
            try:
                await self.link.send_frames(destroy_frame(self.circuit_id, reason))
            except LinkClosed:
                pass
        await self.link.close()
        if self._reader is not None:
            self._reader.cancel()
            await asyncio.gather(self._reader, return_exceptions=True)


def _check_path(consensus: Consensus, path: list[bytes]) -> list[RelayDescriptor]:
    if len(path) != CIRCUIT_HOPS:
        raise CircuitError(f"path must have exactly {CIRCUIT_HOPS} relays, got {len(path)}")
    if len(set(path)) != len(path):
        raise CircuitError("path relays must be distinct")
    try:
        return [consensus.relay(rid) for rid in path]
    except DirectoryError as exc:
        raise CircuitError(str(exc)) from exc


def choose_path(consensus: Consensus, rng: random.Random, exclude: set[bytes] = frozenset()) -> list[bytes]:
    pool = sorted(r.relay_id for r in consensus.relays if r.relay_id not in exclude)
    if len(pool) < CIRCUIT_HOPS:
        pool = sorted(r.relay_id for r in consensus.relays)
    return rng.sample(pool, CIRCUIT_HOPS)


def disjoint_paths(consensus: Consensus, count: int, rng: random.Random) -> list[list[bytes]]:
    """``count`` paths that share no relay while the pool lasts, then reuse."""
    used: set[bytes] = set()
    paths = []
    for _ in range(count):
        path = choose_path(consensus, rng, used)
        used.update(path)
        paths.append(path)
    return paths


async def circuit_build(
    network,
    provider: Provider,
    consensus: Consensus,
    path: list[bytes],
    client_address: str,
    timeout: float = 5.0,
    rng: random.Random | None = None,
) -> Circuit:
    relays = _check_path(consensus, path)
    rng = rng or random.Random()
    try:
        link = await network.open_link(client_address, relays[0].address)
    except (ConnectionError, OSError) as exc:
        raise CircuitBuildError(1, f"cannot reach guard: {exc}") from exc
    circ = Circuit(link, rng.getrandbits(32) or 1, provider, relays)
    circ._start_reader()
    try:
        for hop, desc in enumerate(relays, start=1):
            ct, ss = provider.kem_encap(desc.kem_public_key)
            try:
                if hop == 1:
                    await link.send_frames(fragment(circ.circuit_id, Command.CREATE, desc.relay_id + ct))
                    expect = Command.CREATED
                else:
                    await circ._send_layered(Command.EXTEND, encode_extend(desc.address, desc.relay_id, ct))
                    expect = Command.EXTENDED
                command, msg = await circ._next_message(timeout)
                if command is not expect:
                    raise CircuitBuildError(hop, f"expected {expect.name}, got {command.name}")
                confirm = msg if hop == 1 else circ._unwrap(command, msg)
            except (CircuitClosed, LinkClosed) as exc:
                raise CircuitBuildError(hop, str(exc)) from exc
            except asyncio.TimeoutError as exc:
                raise CircuitBuildError(hop, "timed out") from exc
            except pqc.AuthenticationError as exc:
                raise CircuitBuildError(hop, "reply failed authentication") from exc
            if confirm != key_confirmation(ss):
                raise CircuitBuildError(hop, "key confirmation mismatch")
            fwd, bwd = pqc.derive_hop_keys(ss)
            circ.hops.append(HopKeys(desc.relay_id, fwd, bwd))
    except BaseException:
        await circ.close(DestroyReason.PROTOCOL)
        raise
    circ.state = CircuitState.READY
    return circ


async def onion_send(circuit: Circuit, dest: str, payload: bytes) -> None:
    await circuit.send(dest, payload)


async def onion_recv(circuit: Circuit, timeout: float | None = None) -> bytes:
    return await circuit.recv(timeout)
