"""PSB query service: answers PIR queries against the current epoch's matrix."""

from __future__ import annotations

import enum
import hashlib
import logging
import time
from dataclasses import dataclass

import numpy as np

from .. import pir
from ..pqc import Provider, RandomSource
from .database import SpectrumDatabase, refresh_epoch

log = logging.getLogger(__name__)

ERR_MALFORMED = 1
ERR_SIZE = 2


class Behavior(str, enum.Enum):
    HONEST = "honest"
    BYZANTINE = "byzantine"
    DOWN = "down"


@dataclass(frozen=True)
class QueryLogEntry:
    peer: str
    server_index: int
    shares: bytes
    epoch: int


class BastionServer:
    """
    One PSB. Readers grab ``self._db`` once per query; ``install`` replaces the
    reference, so a query is always answered against a single epoch.
    """

    def __init__(
        self,
        server_index: int,
        db: SpectrumDatabase,
        behavior: Behavior | str = Behavior.HONEST,
        rng: RandomSource | None = None,
        log_queries: bool = False,
    ) -> None:
        self.server_index = server_index
        self._db = db
        self.behavior = Behavior(behavior)
        self._rng = rng
        self.log_queries = log_queries
        self.query_log: list[QueryLogEntry] = []
        self.respond_ms: list[float] = []

    @property
    def db(self) -> SpectrumDatabase:
        return self._db

    @property
    def is_up(self) -> bool:
        return self.behavior is not Behavior.DOWN

    def install(self, db: SpectrumDatabase) -> None:
        self._db = db

    def refresh(self, new_epoch: int, sig_keys: tuple[bytes, bytes], rng: RandomSource, provider: Provider) -> SpectrumDatabase:
        new = refresh_epoch(self._db, new_epoch, sig_keys, rng, provider)
        self.install(new)
        return new

    def serve_query(self, q: pir.QueryShare, db: SpectrumDatabase | None = None) -> pir.ResponseShare:
        db = self._db if db is None else db
        resp = pir.server_respond(db.matrix, q)
        if self.behavior is Behavior.BYZANTINE:
            if self._rng is not None:
                garbage = self._rng.bytes(db.s)
            else:
                # derived from the query so seeded runs stay reproducible under any scheduling
                garbage = hashlib.shake_256(b"byzantine" + bytes([q.server_index]) + q.shares.tobytes()).digest(db.s)
            resp = pir.ResponseShare(q.server_index, np.frombuffer(garbage, dtype=np.uint8).copy())
        return resp

    def handle(self, message: bytes, peer: str = "") -> bytes:
        """Wire-level entry point: query frame in, response or error frame out."""
        db = self._db
        try:
            q = pir.QueryShare.from_bytes(message)
        except pir.ProtocolError:
            return pir.error_frame(ERR_MALFORMED, "malformed query")
        if self.log_queries:
            self.query_log.append(QueryLogEntry(peer, q.server_index, q.shares.tobytes(), db.epoch))
        start = time.perf_counter()
        try:
            resp = self.serve_query(q, db)
        except pir.ProtocolError:
            return pir.error_frame(ERR_SIZE, "query size does not match database")
        self.respond_ms.append((time.perf_counter() - start) * 1e3)
        return resp.to_bytes()
