"""
Service-side admission control: a request carries a token, and only a token
with a valid bastion signature, enough work, a fresh timestamp and no prior
use is granted.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, TextIO

from . import puzzle
from .pqc import Provider, RandomSource
from .puzzle import Reason, ReplayCache, Token, TokenFormatError
from .spectrum import SpectrumKey

log = logging.getLogger(__name__)

EVICT_INTERVAL = 60.0
PARSE_LOG_INTERVAL = 1.0


@dataclass(frozen=True)
class AccessDecision:
    granted: bool
    reason: Reason
    token_digest: bytes
    decided_at: float

    def __post_init__(self) -> None:
        if self.granted != (self.reason is Reason.OK):
            raise ValueError("granted must hold exactly when reason is OK")

    def to_json(self) -> str:
        return json.dumps(
            {
                "granted": self.granted,
                "reason": self.reason.value,
                "token_digest": self.token_digest.hex(),
                "decided_at": self.decided_at,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str | bytes) -> "AccessDecision":
        d = json.loads(text)
        return cls(bool(d["granted"]), Reason(d["reason"]), bytes.fromhex(d["token_digest"]), float(d["decided_at"]))


class Gatekeeper:
    def __init__(
        self,
        provider: Provider,
        psb_pubkey: bytes,
        service_id: bytes,
        validity_window: int = puzzle.DEFAULT_VALIDITY_WINDOW,
        access_log: TextIO | None = None,
        clock: Callable[[], float] = time.time,
    ) -> None:
        if len(service_id) != puzzle.SERVICE_ID_LEN:
            raise ValueError(f"service_id must be {puzzle.SERVICE_ID_LEN} bytes")
        self.provider = provider
        self.psb_pubkey = psb_pubkey
        self.service_id = service_id
        self.validity_window = validity_window
        self.access_log = access_log
        self.clock = clock
        self.replay_cache = ReplayCache()
        self.counts: Counter[str] = Counter()
        self._log_lock = threading.Lock()
        self._last_evict = float("-inf")
        self._last_parse_log = float("-inf")
        self._parse_failures_unlogged = 0

    def handle_request(self, token: bytes | Token, now: float | None = None) -> AccessDecision:
        """Decide on one request. Never raises on hostile input."""
        now = self.clock() if now is None else now
        if now - self._last_evict >= EVICT_INTERVAL:
            self.replay_cache.evict(now)
            self._last_evict = now
        if isinstance(token, Token):
            reason = self._verify(token, now)
            digest = token.digest()
        else:
            raw = bytes(token)
            try:
                parsed = Token.from_bytes(raw)
            except TokenFormatError:
                self._note_parse_failure(now)
                parsed = None
            if parsed is None:
                reason, digest = Reason.BAD_POW, hashlib.sha256(raw).digest()
            else:
                reason, digest = self._verify(parsed, now), parsed.digest()
        decision = AccessDecision(reason is Reason.OK, reason, digest, now)
        self.counts[reason.value] += 1
        self._write_log(decision)
        return decision

    def _verify(self, token: Token, now: float) -> Reason:
        try:
            return puzzle.verify_token(
                self.provider, token, self.psb_pubkey, now=now,
                validity_window=self.validity_window, replay_cache=self.replay_cache,
                service_id=self.service_id,
            )
        except (ValueError, puzzle.PuzzleError):
            return Reason.BAD_POW

    def _note_parse_failure(self, now: float) -> None:
        self._parse_failures_unlogged += 1
        if now - self._last_parse_log >= PARSE_LOG_INTERVAL:
            log.info("denied %d unparseable requests", self._parse_failures_unlogged)
            self._parse_failures_unlogged = 0
            self._last_parse_log = now

    def _write_log(self, decision: AccessDecision) -> None:
        if self.access_log is None:
            return
        with self._log_lock:
            self.access_log.write(decision.to_json() + "\n")
            self.access_log.flush()

    def handle_wire(self, message: bytes, peer: str = "") -> bytes:
        """Service entry point: token bytes in, one JSON decision out."""
        return self.handle_request(message).to_json().encode()


async def request_access(network, src: str, gatekeeper_address: str, token: Token, timeout: float = 5.0) -> AccessDecision:
    reply = await network.request(src, gatekeeper_address, token.to_bytes(), timeout)
    return AccessDecision.from_json(reply)


@dataclass
class FloodReport:
    rate: float
    valid_fraction: float
    requests: int = 0
    valid_sent: int = 0
    granted: int = 0
    reasons: dict[str, int] = field(default_factory=dict)
    wall_s: float = 0.0
    cpu_s: float = 0.0

    @property
    def cpu_per_verification_us(self) -> float:
        return self.cpu_s / self.requests * 1e6 if self.requests else 0.0

    @property
    def verified_per_second(self) -> float:
        return self.requests / self.wall_s if self.wall_s > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "valid_fraction": self.valid_fraction,
            "requests": self.requests,
            "valid_sent": self.valid_sent,
            "granted": self.granted,
            "reasons": dict(sorted(self.reasons.items())),
            "wall_s": self.wall_s,
            "cpu_s": self.cpu_s,
            "cpu_per_verification_us": self.cpu_per_verification_us,
            "verified_per_second": self.verified_per_second,
        }


def forged_token(
    provider: Provider, sig_sk: bytes, service_id: bytes, kappa: int, epoch: int, ts: int, rng: RandomSource,
    cell_key: SpectrumKey | None = None,
) -> Token:
    """A correctly signed token whose nonce provably fails the work check."""
    pz = puzzle.puzzle_gen(kappa, epoch, cell_key or SpectrumKey(0, 0, 0, 0), rng)
    sigma = puzzle.sign_puzzle(provider, sig_sk, pz)
    while True:
        sol = puzzle.PuzzleSolution(rng.bytes(puzzle.CLIENT_NONCE_LEN))
        if not puzzle.pow_verify(pz, sol, service_id, ts):
            return Token(pz, sigma, sol, service_id, ts)


def solved_token(
    provider: Provider, sig_sk: bytes, psb_pubkey: bytes, service_id: bytes, kappa: int, epoch: int, ts: int,
    rng: RandomSource, cell_key: SpectrumKey | None = None,
) -> Token:
    pz = puzzle.puzzle_gen(kappa, epoch, cell_key or SpectrumKey(0, 0, 0, 0), rng)
    sigma = puzzle.sign_puzzle(provider, sig_sk, pz)
    sol = puzzle.pow_solve(pz, service_id, ts, rng)
    return puzzle.make_token(provider, psb_pubkey, pz, sigma, sol, service_id, ts)


def flood_benchmark(
    gk: Gatekeeper,
    rate: float,
    mix: float,
    valid_tokens: list[Token],
    invalid_tokens: list[Token | bytes],
    duration: float = 1.0,
    now: float | None = None,
) -> FloodReport:
    """
    Offer ``rate * duration`` requests, a ``mix`` fraction of them valid, paced
    at ``rate`` per second. Valid and invalid tokens are drawn in order from the
    supplied pools, interleaved deterministically.
    """
    report = FloodReport(rate, mix)
    total = int(round(rate * duration))
    if total <= 0:
        return report
    n_valid = int(round(total * mix))
    if n_valid > len(valid_tokens) or total - n_valid > len(invalid_tokens):
        raise ValueError("token pools are smaller than the requested flood")
    # valid request i lands at position floor(i * total / n_valid)
    schedule = [False] * total
    for i in range(n_valid):
        schedule[min(total - 1, int(i * total / n_valid))] = True
    vi = ii = 0
    reasons: Counter[str] = Counter()
    wall0, cpu0 = time.perf_counter(), time.process_time()
    for pos, is_valid in enumerate(schedule):
        due = wall0 + pos / rate
        lag = due - time.perf_counter()
        if lag > 0:
            time.sleep(lag)
        if is_valid:
            tok: Token | bytes = valid_tokens[vi]
            vi += 1
        else:
            tok = invalid_tokens[ii]
            ii += 1
        d = gk.handle_request(tok, now)
        reasons[d.reason.value] += 1
        report.granted += d.granted
    report.wall_s = time.perf_counter() - wall0
    report.cpu_s = time.process_time() - cpu0
    report.requests = total
    report.valid_sent = n_valid
    report.reasons = dict(reasons)
    return report

