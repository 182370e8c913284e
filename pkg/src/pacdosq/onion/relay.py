"""
Onion relay.

A relay keeps one state object per circuit. Forward messages (from the
client side) have one AEAD layer removed and are either passed on or, if
this relay is the circuit's last hop, acted upon: EXTEND grows the circuit,
RELAY_DATA is delivered to a service. Backward messages get one layer added.
Each circuit has its own worker, so processing is ordered per circuit and
concurrent across circuits.
"""

from __future__ import annotations

import asyncio
import logging
import random
from dataclasses import dataclass, field

from .. import pqc
from ..pqc import KemKeyPair, Provider
from .cells import Cell, CellError, Command, DestroyReason, Reassembler, fragment
from .directory import RELAY_ID_LEN, RelayDescriptor
from .transport import Link, LinkClosed

log = logging.getLogger(__name__)

CONFIRM_LABEL = b"pacdosq created"
STATUS_OK = 0
STATUS_UNREACHABLE = 1
STATUS_TIMEOUT = 2


def key_confirmation(shared_secret: bytes) -> bytes:
    return pqc.hash(CONFIRM_LABEL + shared_secret)


def encode_extend(address: str, relay_id: bytes, kem_ciphertext: bytes) -> bytes:
    addr = address.encode()
    return bytes([len(addr)]) + addr + relay_id + kem_ciphertext


def decode_extend(data: bytes) -> tuple[str, bytes, bytes]:
    if not data:
        raise CellError("empty EXTEND")
    n = data[0]
    if len(data) < 1 + n + RELAY_ID_LEN:
        raise CellError("truncated EXTEND")
    addr = data[1:1 + n].decode()
    rid = data[1 + n:1 + n + RELAY_ID_LEN]
    return addr, rid, data[1 + n + RELAY_ID_LEN:]


def encode_exit_request(dest: str, data: bytes) -> bytes:
    d = dest.encode()
    if len(d) > 255:
        raise ValueError("destination address too long")
    return bytes([len(d)]) + d + data


def decode_exit_request(data: bytes) -> tuple[str, bytes]:
    if not data or len(data) < 1 + data[0]:
        raise CellError("truncated exit request")
    n = data[0]
    return data[1:1 + n].decode(), data[1 + n:]


def destroy_frame(circuit_id: int, reason: DestroyReason) -> list[bytes]:
    return fragment(circuit_id, Command.DESTROY, bytes([reason]))


async def send_message(link: Link, circuit_id: int, command: Command, data: bytes) -> None:
    await link.send_frames(fragment(circuit_id, command, data))


@dataclass(frozen=True)
class HopObservation:
    """What a relay learned about one circuit: its neighbours, nothing more."""

    circuit_id: int
    previous: str
    next: str


@dataclass
class _Circuit:
    prev_link: Link
    prev_circ: int
    fwd_key: bytes
    bwd_key: bytes
    fwd_ctr: int = 0
    bwd_ctr: int = 0
    next_link: Link | None = None
    next_circ: int | None = None
    pending_created: asyncio.Future | None = None
    inbox: asyncio.Queue = field(default_factory=asyncio.Queue)
    bwd_lock: asyncio.Lock = field(default_factory=asyncio.Lock)
    worker: asyncio.Task | None = None
    closed: bool = False
    destinations: set[str] = field(default_factory=set)


class Relay:
    def __init__(
        self,
        address: str,
        kem_keys: KemKeyPair,
        provider: Provider,
        network,
        seed: int = 0,
        timeout: float = 5.0,
        egress_timeout: float = 5.0,
    ) -> None:
        self.address = address
        self.provider = provider
        self.network = network
        self._kem_keys = kem_keys
        self.descriptor = RelayDescriptor.create(address, kem_keys.public_key)
        self.timeout = timeout
        self.egress_timeout = egress_timeout
        self._rng = random.Random(seed)
        self._by_prev: dict[tuple[int, int], _Circuit] = {}
        self._by_next: dict[tuple[int, int], _Circuit] = {}
        self._out_links: dict[str, Link] = {}
        self._out_lock = asyncio.Lock()
        self._tasks: set[asyncio.Task] = set()
        self._links: set[Link] = set()
        self._closed = False
        self.observations: list[HopObservation] = []
        self.auth_failures = 0

    @property
    def relay_id(self) -> bytes:
        return self.descriptor.relay_id

    def _spawn(self, coro) -> asyncio.Task:
        task = asyncio.get_running_loop().create_task(coro)
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)
        return task

    async def serve_link(self, link: Link) -> None:
        """Read frames from one link until it closes."""
        if self._closed:
            await link.close()
            return
        task = asyncio.current_task()
        if task is not None:
            self._tasks.add(task)
        self._links.add(link)
        reasm = Reassembler()
        try:
            while True:
                frame = await link.recv()
                cell = Cell.from_bytes(frame)
                done = reasm.feed(cell)
                if done is not None:
                    await self._dispatch(link, cell.circuit_id, cell.command, done[1])
        except LinkClosed:
            pass
        except CellError as exc:
            log.debug("%s: dropping link from %s: %s", self.address, link.peer, exc)
        finally:
            self._links.discard(link)
            if task is not None:
                self._tasks.discard(task)
            await self._link_gone(link)

    async def _link_gone(self, link: Link) -> None:
        for key, circ in list(self._by_prev.items()):
            if key[0] == id(link):
                await self._teardown(circ, DestroyReason.CONNECT_FAILED, notify_prev=False)
        for key, circ in list(self._by_next.items()):
            if key[0] == id(link):
                await self._teardown(circ, DestroyReason.CONNECT_FAILED, notify_next=False)
        for addr, out in list(self._out_links.items()):
            if out is link:
                del self._out_links[addr]
        await link.close()

    async def _dispatch(self, link: Link, circ_id: int, command: Command, msg: bytes) -> None:
        key = (id(link), circ_id)
        circ = self._by_prev.get(key)
        if circ is not None:
            if command is Command.DESTROY:
                await self._teardown(circ, parse_destroy_reason(msg), notify_prev=False)
            elif command in (Command.RELAY_DATA, Command.EXTEND):
                circ.inbox.put_nowait((command, msg))
            else:
                await self._teardown(circ, DestroyReason.PROTOCOL)
            return
        circ = self._by_next.get(key)
        if circ is not None:
            if command is Command.CREATED:
                if circ.pending_created is not None and not circ.pending_created.done():
                    circ.pending_created.set_result(msg)
            elif command is Command.DESTROY:
                if circ.pending_created is not None and not circ.pending_created.done():
                    circ.pending_created.set_exception(ConnectionError("next hop destroyed circuit"))
                else:
                    await self._teardown(circ, parse_destroy_reason(msg), notify_next=False)
            elif command in (Command.RELAY_DATA, Command.EXTENDED):
                await self._send_backward(circ, command, msg)
            else:
                await self._teardown(circ, DestroyReason.PROTOCOL)
            return
        if command is Command.CREATE:
            await self._create(link, circ_id, msg)
        elif command is not Command.DESTROY:
            await link.send_frames(destroy_frame(circ_id, DestroyReason.PROTOCOL))

    async def _create(self, link: Link, circ_id: int, msg: bytes) -> None:
        rid, ct = msg[:RELAY_ID_LEN], msg[RELAY_ID_LEN:]
        if rid != self.relay_id:
            await link.send_frames(destroy_frame(circ_id, DestroyReason.PROTOCOL))
            return
        try:
            ss = self.provider.kem_decap(self._kem_keys.secret_key, ct)
        except ValueError:
            await link.send_frames(destroy_frame(circ_id, DestroyReason.PROTOCOL))
            return
        fwd, bwd = pqc.derive_hop_keys(ss)
        circ = _Circuit(link, circ_id, fwd, bwd)
        self._by_prev[(id(link), circ_id)] = circ
        circ.worker = self._spawn(self._work(circ))
        await send_message(link, circ_id, Command.CREATED, key_confirmation(ss))

    async def _work(self, circ: _Circuit) -> None:
        while True:
            item = await circ.inbox.get()
            if item is None or circ.closed:
                return
            command, msg = item
            try:
                inner = self.provider.aead_open(
                    circ.fwd_key, pqc.counter_nonce(circ.fwd_ctr), msg, bytes([command])
                )
            except pqc.AuthenticationError:
                self.auth_failures += 1
                await self._teardown(circ, DestroyReason.AUTH_FAILED)
                return
            circ.fwd_ctr += 1
            try:
                if circ.next_link is not None:
                    await send_message(circ.next_link, circ.next_circ, command, inner)
                elif command is Command.EXTEND:
                    await self._extend(circ, inner)
                else:
                    await self._egress(circ, inner)
            except (LinkClosed, CellError):
                await self._teardown(circ, DestroyReason.PROTOCOL)
                return

    async def _link_to(self, address: str) -> Link:
        async with self._out_lock:
            link = self._out_links.get(address)
            if link is None:
                link = await self.network.open_link(self.address, address)
                self._out_links[address] = link
                self._spawn(self.serve_link(link))
            return link

    def _new_circ_id(self, link: Link) -> int:
        while True:
            cid = self._rng.getrandbits(32) or 1
            if (id(link), cid) not in self._by_next and (id(link), cid) not in self._by_prev:
                return cid

    async def _extend(self, circ: _Circuit, request: bytes) -> None:
        address, rid, ct = decode_extend(request)
        try:
            link = await self._link_to(address)
        except (ConnectionError, OSError):
            await self._teardown(circ, DestroyReason.CONNECT_FAILED, notify_next=False)
            return
        cid = self._new_circ_id(link)
        circ.pending_created = asyncio.get_running_loop().create_future()
        self._by_next[(id(link), cid)] = circ
        circ.next_link, circ.next_circ = link, cid
        try:
            await send_message(link, cid, Command.CREATE, rid + ct)
            confirm = await asyncio.wait_for(circ.pending_created, self.timeout)
        except (ConnectionError, OSError, asyncio.TimeoutError):
            self._by_next.pop((id(link), cid), None)
            circ.next_link = circ.next_circ = None
            await self._teardown(circ, DestroyReason.CONNECT_FAILED, notify_next=False)
            return
        finally:
            circ.pending_created = None
        self.observations.append(HopObservation(circ.prev_circ, circ.prev_link.peer, address))
        await self._reply(circ, Command.EXTENDED, confirm)

    async def _egress(self, circ: _Circuit, request: bytes) -> None:
        dest, data = decode_exit_request(request)
        if dest not in circ.destinations:
            circ.destinations.add(dest)
            self.observations.append(HopObservation(circ.prev_circ, circ.prev_link.peer, dest))
        try:
            out = bytes([STATUS_OK]) + await self.network.request(self.address, dest, data, self.egress_timeout)
        except asyncio.TimeoutError:
            out = bytes([STATUS_TIMEOUT])
        except (ConnectionError, OSError, ValueError, asyncio.IncompleteReadError):
            out = bytes([STATUS_UNREACHABLE])
        await self._reply(circ, Command.RELAY_DATA, out)

    async def _reply(self, circ: _Circuit, command: Command, plaintext: bytes) -> None:
        await self._send_backward(circ, command, plaintext)

    async def _send_backward(self, circ: _Circuit, command: Command, data: bytes) -> None:
        async with circ.bwd_lock:
            if circ.closed:
                return
            sealed = self.provider.aead_seal(circ.bwd_key, pqc.counter_nonce(circ.bwd_ctr), data, bytes([command]))
            circ.bwd_ctr += 1
            try:
                await send_message(circ.prev_link, circ.prev_circ, command, sealed)
            except LinkClosed:
                await self._teardown(circ, DestroyReason.CONNECT_FAILED, notify_prev=False)

    async def _teardown(
        self, circ: _Circuit, reason: DestroyReason, notify_prev: bool = True, notify_next: bool = True
    ) -> None:
        if circ.closed:
            return
        circ.closed = True
        self._by_prev.pop((id(circ.prev_link), circ.prev_circ), None)
        if circ.next_link is not None:
            self._by_next.pop((id(circ.next_link), circ.next_circ), None)
        circ.inbox.put_nowait(None)
        targets = []
        if notify_prev:
            targets.append((circ.prev_link, circ.prev_circ))
        if notify_next and circ.next_link is not None:
            targets.append((circ.next_link, circ.next_circ))
        for link, cid in targets:
            try:
                await link.send_frames(destroy_frame(cid, reason))
            except LinkClosed:
                pass

    @property
    def open_circuits(self) -> int:
        return len(self._by_prev)

    async def close(self) -> None:
        """Stop relaying: tear down circuits and drop every link."""
        self._closed = True
        for circ in list(self._by_prev.values()):
            await self._teardown(circ, DestroyReason.REQUESTED)
        for link in list(self._out_links.values()) + list(self._links):
            await link.close()
        for task in list(self._tasks):
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)


def parse_destroy_reason(msg: bytes) -> DestroyReason:
    try:
        return DestroyReason(msg[0]) if msg else DestroyReason.NONE
    except ValueError:
        return DestroyReason.PROTOCOL

