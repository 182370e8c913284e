"""
t-private, Byzantine-robust k-out-of-l information-theoretic PIR over GF(2^8).

The client Shamir-shares the basis vector e_beta across l servers with degree-t
polynomials evaluated at alpha_i = i. Each server returns rho_i . DB. Any k > t
responses interpolate to DB[beta]; with k > t + 2v responses, v wrong ones are
corrected by Berlekamp-Welch decoding word by word.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gf256
from .pqc import RandomSource

QUERY_TAG = 0x51
RESPONSE_TAG = 0x52
ERROR_TAG = 0x45
_HEADER = struct.Struct(">BBI")
HEADER_LEN = _HEADER.size
_CHUNK_ROWS = 16384


class PirError(Exception):
    pass


class ProtocolError(PirError):
    """Malformed or mis-sized PIR message."""


class InsufficientResponses(PirError):
    pass


class RecoveryError(PirError):
    """Responses are not consistent with a single degree-t polynomial."""


class DecodeFailure(PirError):
    """Too many corrupted responses for the decoder to correct."""


@dataclass(frozen=True)
class PirConfig:
    ell: int
    t: int
    r: int
    s: int
    eval_points: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 2 <= self.ell <= 255:
            raise ValueError("ell must be in [2, 255]")
        if not 1 <= self.t <= self.ell - 1:
            raise ValueError(f"t must be in [1, ell-1], got t={self.t}, ell={self.ell}")
        if self.r < 1 or self.s < 1:
            raise ValueError("r and s must be positive")
        if not self.eval_points:
            object.__setattr__(self, "eval_points", tuple(range(1, self.ell + 1)))
        pts = self.eval_points
        if len(pts) != self.ell or len(set(pts)) != self.ell or not all(1 <= a <= 255 for a in pts):
            raise ValueError("eval_points must be ell distinct nonzero field elements")

    def alpha(self, server_index: int) -> int:
        return self.eval_points[server_index - 1]

    @property
    def radius(self) -> int:
        """Byzantine responses correctable when all ell servers answer."""
        return gf256.unique_decoding_radius(self.ell, self.t)


@dataclass(frozen=True)
class QueryShare:
    server_index: int
    shares: np.ndarray

    def to_bytes(self) -> bytes:
        return _HEADER.pack(QUERY_TAG, self.server_index, len(self.shares)) + self.shares.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "QueryShare":
        idx, body = _parse(data, QUERY_TAG)
        return cls(idx, body)


@dataclass(frozen=True)
class ResponseShare:
    server_index: int
    words: np.ndarray

    def to_bytes(self) -> bytes:
        return _HEADER.pack(RESPONSE_TAG, self.server_index, len(self.words)) + self.words.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ResponseShare":
        idx, body = _parse(data, RESPONSE_TAG)
        return cls(idx, body)


def _parse(data: bytes, tag: int) -> tuple[int, np.ndarray]:
    if len(data) < HEADER_LEN:
        raise ProtocolError("truncated PIR message")
    got, idx, n = _HEADER.unpack_from(data)
    if got != tag:
        raise ProtocolError(f"expected tag {tag:#x}, got {got:#x}")
    if len(data) != HEADER_LEN + n:
        raise ProtocolError(f"declared length {n} does not match body {len(data) - HEADER_LEN}")
    return idx, np.frombuffer(data, dtype=np.uint8, offset=HEADER_LEN).copy()


def error_frame(code: int, message: str = "") -> bytes:
    body = message.encode()[:255]
    return bytes([ERROR_TAG, code & 0xFF, len(body)]) + body


def is_error_frame(data: bytes) -> bool:
    return len(data) >= 1 and data[0] == ERROR_TAG


def _random_field(rng: RandomSource, shape: tuple[int, ...]) -> np.ndarray:
    n = int(np.prod(shape))
    return np.frombuffer(rng.bytes(n), dtype=np.uint8).reshape(shape).copy()


def client_query(config: PirConfig, beta: int, rng: RandomSource) -> list[QueryShare]:
    """Shamir-share e_beta: row j gets a random degree-t polynomial with f_j(0) = [j == beta]."""
    if not 0 <= beta < config.r:
        raise ValueError(f"block index {beta} out of range [0, {config.r})")
    coeffs = np.empty((config.r, config.t + 1), dtype=np.uint8)
    coeffs[:, 0] = 0
    coeffs[beta, 0] = 1
    coeffs[:, 1:] = _random_field(rng, (config.r, config.t))
    return [
        QueryShare(i, gf256.eval_batch(coeffs, config.alpha(i)))
        for i in range(1, config.ell + 1)
    ]


def server_respond(db: np.ndarray, q: QueryShare) -> ResponseShare:
    """R = rho . DB over GF(2^8)."""
    if q.shares.ndim != 1 or len(q.shares) != db.shape[0]:
        raise ProtocolError(f"query has {len(q.shares)} shares, database has {db.shape[0]} rows")
    out = np.zeros(db.shape[1], dtype=np.uint8)
    # rows sharing a coefficient are XOR-summed first, then multiplied once
    for lo in range(0, db.shape[0], _CHUNK_ROWS):
        rho = q.shares[lo:lo + _CHUNK_ROWS]
        order = np.argsort(rho, kind="stable")
        vals = rho[order]
        starts = np.concatenate(([0], np.flatnonzero(np.diff(vals)) + 1))
        rows = db[lo + order]
        if rows.shape[1] % 8 == 0:
            sums = np.bitwise_xor.reduceat(rows.view(np.uint64), starts, axis=0).view(np.uint8)
        else:
            sums = np.bitwise_xor.reduceat(rows, starts, axis=0)
        coef = vals[starts]
        keep = coef != 0
        if keep.any():
            out ^= np.bitwise_xor.reduce(gf256.MUL_TABLE[coef[keep][:, None], sums[keep]], axis=0)
    return ResponseShare(q.server_index, out)


def _stack(config: PirConfig, responses: Sequence[ResponseShare]) -> tuple[list[int], np.ndarray]:
    seen = set()
    for resp in responses:
        if resp.server_index in seen:
            raise ValueError(f"duplicate response from server {resp.server_index}")
        if not 1 <= resp.server_index <= config.ell:
            raise ProtocolError(f"unknown server index {resp.server_index}")
        if len(resp.words) != config.s:
            raise ProtocolError(f"response from server {resp.server_index} has {len(resp.words)} words, expected {config.s}")
        seen.add(resp.server_index)
    xs = [config.alpha(r.server_index) for r in responses]
    return xs, np.stack([r.words for r in responses])


def easy_recover(config: PirConfig, responses: Sequence[ResponseShare]) -> np.ndarray:
    """
    Interpolate the block from the first t+1 responses.

    Every further response is checked against the interpolated polynomials;
    a mismatch raises RecoveryError so the caller can escalate.
    """
    k = len(responses)
    if k <= config.t:
        raise InsufficientResponses(f"{k} responses, need more than t={config.t}")
    xs, ys = _stack(config, responses)
    base_x, base_y = xs[: config.t + 1], ys[: config.t + 1]
    block = gf256.interpolate_batch(base_x, base_y, 0)
    for x, y in zip(xs[config.t + 1:], ys[config.t + 1:]):
        if not np.array_equal(gf256.interpolate_batch(base_x, base_y, x), y):
            raise RecoveryError("responses inconsistent with a degree-t sharing")
    return block


@dataclass
class HardRecovery:
    block: np.ndarray
    corrupted: set[int] = field(default_factory=set)


def hard_recover(config: PirConfig, responses: Sequence[ResponseShare]) -> HardRecovery:
    """Berlekamp-Welch decode every word position; report servers caught lying."""
    k = len(responses)
    if k <= config.t:
        raise InsufficientResponses(f"{k} responses, need more than t={config.t}")
    xs, ys = _stack(config, responses)
    coeffs, err, ok = gf256.berlekamp_welch_batch(xs, ys, config.t)
    if not ok.all():
        bad = int((~ok).sum())
        raise DecodeFailure(
            f"{bad} of {config.s} words undecodable; more than "
            f"{gf256.unique_decoding_radius(k, config.t)} corrupted responses among {k}"
        )
    corrupted = {responses[i].server_index for i in np.nonzero(err.any(axis=1))[0]}
    return HardRecovery(coeffs[:, 0].copy(), corrupted)
