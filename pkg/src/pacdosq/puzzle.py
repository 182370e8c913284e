"""
Hash-based client puzzles and access tokens.

A PSB issues a puzzle (nonce_b, kappa) bound to a spectrum cell and epoch and
signs that binding. A client proves work by finding nonce_c such that

    SHA-256(service_id || ts || nonce_b || nonce_c)

starts with kappa zero bits. A token carries the puzzle, its signature and the
solution; verifying it costs one signature check and one hash.
"""

from __future__ import annotations

import enum
import hashlib
import struct
import threading
import time
from dataclasses import dataclass, field

from .pqc import Provider, RandomSource
from .spectrum import SPECTRUM_KEY_LEN, SpectrumKey

TOKEN_TAG = 0x54
SERVICE_ID_LEN = 16
CLIENT_NONCE_LEN = 8
MAX_KAPPA = 255
DEFAULT_VALIDITY_WINDOW = 3600
_BINDING_LABEL = b"PACDOSQ-PUZZLE-v1"


class PuzzleError(ValueError):
    """Invalid puzzle parameters or refused token assembly."""


class TokenFormatError(ValueError):
    """Token bytes could not be parsed."""


class Reason(str, enum.Enum):
    OK = "OK"
    BAD_SIG = "BAD_SIG"
    BAD_POW = "BAD_POW"
    EXPIRED = "EXPIRED"
    REPLAY = "REPLAY"


def nonce_len(kappa: int) -> int:
    return (kappa + 7) // 8


def pq_difficulty(kappa_classical: int) -> int:
    """Difficulty giving the same work against a Grover-equipped solver."""
    return 2 * kappa_classical


@dataclass(frozen=True)
class Puzzle:
    nonce_b: bytes
    kappa: int
    epoch: int
    cell_key: SpectrumKey

    def __post_init__(self) -> None:
        if not 1 <= self.kappa <= MAX_KAPPA:
            raise PuzzleError(f"kappa must be in [1, {MAX_KAPPA}], got {self.kappa}")
        if len(self.nonce_b) != nonce_len(self.kappa):
            raise PuzzleError(f"nonce_b must be {nonce_len(self.kappa)} bytes for kappa={self.kappa}")

    def binding(self) -> bytes:
        """The byte string the PSB signs."""
        return (
            _BINDING_LABEL
            + struct.pack(">IQ", self.kappa, self.epoch)
            + self.cell_key.to_bytes()
            + self.nonce_b
        )


@dataclass(frozen=True)
class PuzzleSolution:
    nonce_c: bytes
    attempts: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if len(self.nonce_c) != CLIENT_NONCE_LEN:
            raise PuzzleError(f"client nonce must be {CLIENT_NONCE_LEN} bytes")


@dataclass(frozen=True)
class Token:
    puzzle: Puzzle
    sigma: bytes
    solution: PuzzleSolution
    service_id: bytes
    ts: int

    def to_bytes(self) -> bytes:
        p = self.puzzle
        return b"".join(
            [
                bytes([TOKEN_TAG]),
                struct.pack(">IQ", p.kappa, p.epoch),
                p.cell_key.to_bytes(),
                p.nonce_b,
                struct.pack(">H", len(self.sigma)),
                self.sigma,
                self.service_id,
                struct.pack(">Q", self.ts),
                self.solution.nonce_c,
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Token":
        try:
            if data[0] != TOKEN_TAG:
                raise TokenFormatError("bad token tag")
            kappa, epoch = struct.unpack_from(">IQ", data, 1)
            if not 1 <= kappa <= MAX_KAPPA:
                raise TokenFormatError("kappa out of range")
            off = 13
            key = SpectrumKey.from_bytes(data[off:off + SPECTRUM_KEY_LEN])
            off += SPECTRUM_KEY_LEN
            nl = nonce_len(kappa)
            nonce_b = data[off:off + nl]
            off += nl
            (sig_len,) = struct.unpack_from(">H", data, off)
            off += 2
            sigma = data[off:off + sig_len]
            off += sig_len
            service_id = data[off:off + SERVICE_ID_LEN]
            off += SERVICE_ID_LEN
            (ts,) = struct.unpack_from(">Q", data, off)
            off += 8
            nonce_c = data[off:off + CLIENT_NONCE_LEN]
            off += CLIENT_NONCE_LEN
            if off != len(data) or len(sigma) != sig_len or len(service_id) != SERVICE_ID_LEN:
                raise TokenFormatError("token length mismatch")
            puzzle = Puzzle(bytes(nonce_b), kappa, epoch, key)
            return cls(puzzle, bytes(sigma), PuzzleSolution(bytes(nonce_c)), bytes(service_id), ts)
        except (IndexError, struct.error, PuzzleError, ValueError) as exc:
            if isinstance(exc, TokenFormatError):
                raise
            raise TokenFormatError(str(exc)) from exc

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()


def puzzle_gen(kappa: int, epoch: int, cell_key: SpectrumKey, rng: RandomSource) -> Puzzle:
    if not 1 <= kappa <= MAX_KAPPA:
        raise PuzzleError(f"kappa must be in [1, {MAX_KAPPA}], got {kappa}")
    nl = nonce_len(kappa)
    raw = bytearray(rng.bytes(nl))
    excess = 8 * nl - kappa
    raw[0] &= 0xFF >> excess
    return Puzzle(bytes(raw), kappa, epoch, cell_key)


def pow_preimage_prefix(puzzle: Puzzle, service_id: bytes, ts: int) -> bytes:
    if len(service_id) != SERVICE_ID_LEN:
        raise PuzzleError(f"service_id must be {SERVICE_ID_LEN} bytes")
    return service_id + struct.pack(">Q", ts) + puzzle.nonce_b


def leading_zero_bits_ok(digest: bytes, kappa: int) -> bool:
    full, rest = divmod(kappa, 8)
    if any(digest[:full]):
        return False
    return rest == 0 or digest[full] >> (8 - rest) == 0


def pow_solve(
    puzzle: Puzzle,
    service_id: bytes,
    ts: int,
    rng: RandomSource | None = None,
    max_attempts: int | None = None,
) -> PuzzleSolution:
    """Brute-force nonce_c; the search starts from a random point when rng is given."""
    base = hashlib.sha256(pow_preimage_prefix(puzzle, service_id, ts))
    start = int.from_bytes(rng.bytes(CLIENT_NONCE_LEN), "big") if rng is not None else 0
    kappa = puzzle.kappa
    full, rest = divmod(kappa, 8)
    zeros = bytes(full)
    limit = 0x100 >> rest if rest else 0
    mask = (1 << 64) - 1
    attempts = 0
    n = start
    while True:
        nonce = n.to_bytes(8, "big")
        h = base.copy()
        h.update(nonce)
        d = h.digest()
        attempts += 1
        if d[:full] == zeros and (rest == 0 or d[full] < limit):
            return PuzzleSolution(nonce, attempts)
        if max_attempts is not None and attempts >= max_attempts:
            raise PuzzleError(f"no solution within {max_attempts} attempts")
        n = (n + 1) & mask


def pow_verify(puzzle: Puzzle, solution: PuzzleSolution, service_id: bytes, ts: int) -> bool:
    if len(service_id) != SERVICE_ID_LEN:
        return False
    digest = hashlib.sha256(pow_preimage_prefix(puzzle, service_id, ts) + solution.nonce_c).digest()
    return leading_zero_bits_ok(digest, puzzle.kappa)


def sign_puzzle(provider: Provider, sig_sk: bytes, puzzle: Puzzle) -> bytes:
    return provider.sig_sign(sig_sk, puzzle.binding())


def make_token(
    provider: Provider,
    psb_pubkey: bytes,
    puzzle: Puzzle,
    sigma: bytes,
    solution: PuzzleSolution,
    service_id: bytes,
    ts: int,
) -> Token:
    if not provider.sig_verify(psb_pubkey, puzzle.binding(), sigma):
        raise PuzzleError("refusing to build token: puzzle signature does not verify")
    if not pow_verify(puzzle, solution, service_id, ts):
        raise PuzzleError("refusing to build token: proof of work does not verify")
    return Token(puzzle, sigma, solution, service_id, ts)


class ReplayCache:
    """Set of granted token digests, each remembered until its expiry time."""

    def __init__(self) -> None:
        self._seen: dict[bytes, float] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._seen)

    def __contains__(self, digest: bytes) -> bool:
        return digest in self._seen

    def check_and_insert(self, digest: bytes, expires_at: float, now: float) -> bool:
        """Atomically record ``digest``; False when it was already present."""
        with self._lock:
            exp = self._seen.get(digest)
            if exp is not None and exp >= now:
                return False
            self._seen[digest] = expires_at
            return True

    def evict(self, now: float) -> int:
        with self._lock:
            stale = [d for d, exp in self._seen.items() if exp < now]
            for d in stale:
                del self._seen[d]
            return len(stale)


def verify_token(
    provider: Provider,
    token: Token,
    psb_pubkey: bytes,
    now: float | None = None,
    validity_window: int = DEFAULT_VALIDITY_WINDOW,
    replay_cache: ReplayCache | None = None,
    service_id: bytes | None = None,
) -> Reason:
    """
    Check signature, work, freshness and replay, in that order.

    When ``service_id`` is given the token must have been solved for it; a
    token solved for another service fails as BAD_POW.
    """
    now = time.time() if now is None else now
    puzzle = token.puzzle
    if not provider.sig_verify(psb_pubkey, puzzle.binding(), token.sigma):
        return Reason.BAD_SIG
    if service_id is not None and token.service_id != service_id:
        return Reason.BAD_POW
    if not pow_verify(puzzle, token.solution, token.service_id, token.ts):
        return Reason.BAD_POW
    start, end = puzzle.epoch, puzzle.epoch + validity_window
    if not (start <= token.ts <= end and start <= now <= end):
        return Reason.EXPIRED
    if replay_cache is not None and not replay_cache.check_and_insert(token.digest(), end, now):
        return Reason.REPLAY
    return Reason.OK
