"""
Client agent: private block retrieval over onion circuits, block
authentication, proof-of-work and token assembly.
"""

from __future__ import annotations

import asyncio
import logging
import random
import time
from dataclasses import dataclass, field

import numpy as np

from . import pir, puzzle
from .bastion.blocks import Block, BlockFormatError, block_len
from .onion.circuit import Circuit, CircuitError, CircuitState, circuit_build, disjoint_paths
from .onion.directory import Consensus
from .pqc import Provider, RandomSource
from .spectrum import GridConfig, SpectrumKey, db_index

log = logging.getLogger(__name__)

# every service exchange is a 4-byte length prefix plus the message
SERVICE_FRAME_OVERHEAD = 4
DEFAULT_TIMEOUT = 2.0


class RetrievalError(Exception):
    pass


class InsufficientResponses(RetrievalError):
    pass


class Unrecoverable(RetrievalError):
    pass


class AuthenticityFailure(RetrievalError):
    pass


class EpochExpired(RetrievalError):
    """The block's puzzle is outside its validity window; fetch again."""


@dataclass(frozen=True)
class ClientContext:
    key: SpectrumKey
    grid: GridConfig
    pir_config: pir.PirConfig
    psb_endpoints: tuple[str, ...]
    psb_pubkey: bytes
    service_id: bytes
    signature_len: int = 2420
    validity_window: int = puzzle.DEFAULT_VALIDITY_WINDOW
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self) -> None:
        if len(self.psb_endpoints) != self.pir_config.ell:
            raise ValueError(f"need {self.pir_config.ell} PSB endpoints, got {len(self.psb_endpoints)}")
        if len(self.service_id) != puzzle.SERVICE_ID_LEN:
            raise ValueError(f"service_id must be {puzzle.SERVICE_ID_LEN} bytes")
        if self.pir_config.r != self.grid.rows:
            raise ValueError("PIR row count does not match the grid")
        if not self.grid.contains(self.key):
            raise ValueError(f"{self.key} is outside the grid")

    @property
    def beta(self) -> int:
        return db_index(self.grid, self.key)


@dataclass
class RetrievalResult:
    block: Block
    responding_servers: set[int]
    recovery_path: str
    corrupted_servers: set[int] = field(default_factory=set)
    dropouts: set[int] = field(default_factory=set)
    bytes_sent: int = 0
    bytes_received: int = 0
    wire_bytes_sent: int = 0
    wire_bytes_received: int = 0
    timings_ms: dict[str, float] = field(default_factory=dict)


@dataclass
class _Exchange:
    server_index: int
    response: pir.ResponseShare | None = None
    error: str = ""
    circuit_ms: float = 0.0
    roundtrip_ms: float = 0.0
    wire_sent: int = 0
    wire_received: int = 0


class Client:
    """One client holding up to one circuit per bastion."""

    def __init__(
        self,
        ctx: ClientContext,
        provider: Provider,
        network,
        consensus: Consensus,
        address: str,
        rng: RandomSource,
        path_seed: int = 0,
        build_timeout: float = 5.0,
    ) -> None:
        self.ctx = ctx
        self.provider = provider
        self.network = network
        self.consensus = consensus
        self.address = address
        self.rng = rng
        self._path_rng = random.Random(path_seed)
        self.build_timeout = build_timeout
        self._circuits: dict[int, Circuit] = {}
        self._paths: list[list[bytes]] | None = None

    def _path_for(self, server_index: int) -> list[bytes]:
        if self._paths is None:
            self._paths = disjoint_paths(self.consensus, self.ctx.pir_config.ell, self._path_rng)
        return self._paths[server_index - 1]

    async def _circuit(self, server_index: int) -> Circuit:
        circ = self._circuits.get(server_index)
        if circ is not None and circ.state is CircuitState.READY:
            return circ
        circ = await circuit_build(
            self.network, self.provider, self.consensus, self._path_for(server_index),
            self.address, timeout=self.build_timeout, rng=self._path_rng,
        )
        self._circuits[server_index] = circ
        return circ

    async def _exchange(self, q: pir.QueryShare) -> _Exchange:
        ex = _Exchange(q.server_index)
        message = q.to_bytes()
        try:
            t0 = time.perf_counter()
            circ = await self._circuit(q.server_index)
            t1 = time.perf_counter()
            sent0, recv0 = circ.cells_sent, circ.cells_received
            reply = await circ.request(self.ctx.psb_endpoints[q.server_index - 1], message, self.ctx.timeout)
            ex.roundtrip_ms = (time.perf_counter() - t1) * 1e3
            ex.circuit_ms = (t1 - t0) * 1e3
            ex.wire_sent = (circ.cells_sent - sent0) * 512
            ex.wire_received = (circ.cells_received - recv0) * 512
        except (CircuitError, asyncio.TimeoutError) as exc:
            ex.error = f"{type(exc).__name__}: {exc}"
            return ex
        if pir.is_error_frame(reply):
            ex.error = "bastion returned an error frame"
            return ex
        try:
            resp = pir.ResponseShare.from_bytes(reply)
        except pir.ProtocolError as exc:
            ex.error = f"malformed response: {exc}"
            return ex
        # the index we asked is authoritative, not the one the server claims
        ex.response = pir.ResponseShare(q.server_index, resp.words)
        return ex

    async def fetch_block(self, now: float | None = None) -> RetrievalResult:
        cfg = self.ctx.pir_config
        t0 = time.perf_counter()
        queries = pir.client_query(cfg, self.ctx.beta, self.rng)
        t1 = time.perf_counter()
        exchanges = await asyncio.gather(*(self._exchange(q) for q in queries))
        t2 = time.perf_counter()

        responses = [ex.response for ex in exchanges if ex.response is not None]
        dropouts = {ex.server_index for ex in exchanges if ex.response is None}
        for ex in exchanges:
            if ex.error:
                log.debug("server %d dropped: %s", ex.server_index, ex.error)
        bad_size = {r.server_index for r in responses if len(r.words) != cfg.s}
        responses = [r for r in responses if r.server_index not in bad_size]
        dropouts |= bad_size
        if len(responses) <= cfg.t:
            raise InsufficientResponses(f"{len(responses)} responses, need more than t={cfg.t}")

        corrupted: set[int] = set()
        try:
            words = pir.easy_recover(cfg, responses)
            path = "easy"
        except pir.RecoveryError:
            try:
                hard = pir.hard_recover(cfg, responses)
            except pir.DecodeFailure as exc:
                raise Unrecoverable(str(exc)) from exc
            words, corrupted, path = hard.block, hard.corrupted, "hard"
        t3 = time.perf_counter()

        block = self._authenticate(words, now)
        t4 = time.perf_counter()
        return RetrievalResult(
            block=block,
            responding_servers={r.server_index for r in responses},
            recovery_path=path,
            corrupted_servers=corrupted,
            dropouts=dropouts,
            bytes_sent=sum(len(q.to_bytes()) + SERVICE_FRAME_OVERHEAD for q in queries),
            bytes_received=sum(pir.HEADER_LEN + cfg.s + SERVICE_FRAME_OVERHEAD for _ in responses),
            wire_bytes_sent=sum(ex.wire_sent for ex in exchanges),
            wire_bytes_received=sum(ex.wire_received for ex in exchanges),
            timings_ms={
                "query": (t1 - t0) * 1e3,
                "circuit": max((ex.circuit_ms for ex in exchanges), default=0.0),
                "respond": max((ex.roundtrip_ms for ex in exchanges), default=0.0),
                "exchange": (t2 - t1) * 1e3,
                "reconstruct": (t3 - t2) * 1e3,
                "verify": (t4 - t3) * 1e3,
            },
        )

    def _authenticate(self, words: np.ndarray, now: float | None) -> Block:
        try:
            block = Block.from_bytes(bytes(words), self.ctx.signature_len)
        except (BlockFormatError, puzzle.PuzzleError, ValueError) as exc:
            raise AuthenticityFailure(f"reconstructed block does not parse: {exc}") from exc
        if len(words) != block_len(self.ctx.signature_len, len(block.puzzles)):
            raise AuthenticityFailure("block length does not match its layout")
        if block.record.key != self.ctx.key:
            raise AuthenticityFailure("block belongs to a different spectrum cell")
        for pz, sigma in block.puzzles:
            if not self.provider.sig_verify(self.ctx.psb_pubkey, pz.binding(), sigma):
                raise AuthenticityFailure("puzzle signature does not verify")
        if now is not None:
            _check_epoch(block.puzzle, now, self.ctx.validity_window)
        return block

    def acquire_token(
        self, result: RetrievalResult, now: float, rng: RandomSource | None = None, slot: int = 0
    ) -> puzzle.Token:
        pz, sigma = result.block.puzzles[slot]
        _check_epoch(pz, now, self.ctx.validity_window)
        ts = int(now)
        solution = puzzle.pow_solve(pz, self.ctx.service_id, ts, rng or self.rng)
        return puzzle.make_token(self.provider, self.ctx.psb_pubkey, pz, sigma, solution, self.ctx.service_id, ts)

    async def close(self) -> None:
        for circ in self._circuits.values():
            await circ.close()
        self._circuits.clear()


def _check_epoch(pz: puzzle.Puzzle, now: float, window: int) -> None:
    if not pz.epoch <= now <= pz.epoch + window:
        raise EpochExpired(f"puzzle epoch {pz.epoch} is not valid at {now:.0f}; fetch a fresh block")


async def fetch_block(client: Client, now: float | None = None) -> RetrievalResult:
    return await client.fetch_block(now)


def acquire_token(client: Client, result: RetrievalResult, now: float) -> puzzle.Token:
    return client.acquire_token(result, now)
