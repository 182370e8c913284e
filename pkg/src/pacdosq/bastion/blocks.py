"""Fixed-size spectrum records and database blocks."""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..puzzle import Puzzle, nonce_len
from ..spectrum import SPECTRUM_KEY_LEN, SpectrumKey

RECORD_LEN = 560
NONCE_SLOT = 8
MAX_BLOCK_KAPPA = 8 * NONCE_SLOT
BLOCK_LEN = 3000
_RECORD_HEAD = struct.Struct(">BhH")
RECORD_META_MAX = RECORD_LEN - SPECTRUM_KEY_LEN - _RECORD_HEAD.size
_PUZZLE_HEAD = struct.Struct(">IQ")


class BlockFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SpectrumRecord:
    key: SpectrumKey
    availability: bool
    max_eirp_dbm: float
    metadata: bytes = b""

    def to_bytes(self) -> bytes:
        if len(self.metadata) > RECORD_META_MAX:
            raise BlockFormatError(f"metadata exceeds {RECORD_META_MAX} bytes")
        deci = round(self.max_eirp_dbm * 10)
        head = self.key.to_bytes() + _RECORD_HEAD.pack(int(self.availability), deci, len(self.metadata))
        return (head + self.metadata).ljust(RECORD_LEN, b"\0")

    @classmethod
    def from_bytes(cls, data: bytes) -> "SpectrumRecord":
        if len(data) != RECORD_LEN:
            raise BlockFormatError(f"record must be {RECORD_LEN} bytes")
        key = SpectrumKey.from_bytes(data[:SPECTRUM_KEY_LEN])
        avail, deci, mlen = _RECORD_HEAD.unpack_from(data, SPECTRUM_KEY_LEN)
        if mlen > RECORD_META_MAX:
            raise BlockFormatError("bad metadata length")
        off = SPECTRUM_KEY_LEN + _RECORD_HEAD.size
        return cls(key, bool(avail), deci / 10, bytes(data[off:off + mlen]))


def puzzle_slot_len(signature_len: int) -> int:
    return _PUZZLE_HEAD.size + NONCE_SLOT + signature_len


def block_len(signature_len: int, theta: int = 1) -> int:
    return RECORD_LEN + theta * puzzle_slot_len(signature_len)


def encode_puzzle_slot(puzzle: Puzzle, sigma: bytes, signature_len: int) -> bytes:
    if puzzle.kappa > MAX_BLOCK_KAPPA:
        raise BlockFormatError(f"block layout holds kappa <= {MAX_BLOCK_KAPPA}")
    if len(sigma) != signature_len:
        raise BlockFormatError(f"signature must be {signature_len} bytes")
    return _PUZZLE_HEAD.pack(puzzle.kappa, puzzle.epoch) + puzzle.nonce_b.ljust(NONCE_SLOT, b"\0") + sigma


@dataclass(frozen=True)
class Block:
    record: SpectrumRecord
    puzzles: tuple[tuple[Puzzle, bytes], ...]

    @property
    def puzzle(self) -> Puzzle:
        return self.puzzles[0][0]

    @property
    def sigma(self) -> bytes:
        return self.puzzles[0][1]

    def to_bytes(self, signature_len: int) -> bytes:
        return self.record.to_bytes() + b"".join(
            encode_puzzle_slot(p, s, signature_len) for p, s in self.puzzles
        )

    @classmethod
    def from_bytes(cls, data: bytes, signature_len: int) -> "Block":
        slot = puzzle_slot_len(signature_len)
        if len(data) < RECORD_LEN + slot or (len(data) - RECORD_LEN) % slot:
            raise BlockFormatError(f"block of {len(data)} bytes does not fit the layout")
        data = bytes(data)
        record = SpectrumRecord.from_bytes(data[:RECORD_LEN])
        puzzles = []
        for off in range(RECORD_LEN, len(data), slot):
            kappa, epoch = _PUZZLE_HEAD.unpack_from(data, off)
            if not 1 <= kappa <= MAX_BLOCK_KAPPA:
                raise BlockFormatError(f"kappa {kappa} out of range")
            nstart = off + _PUZZLE_HEAD.size
            nonce = data[nstart:nstart + nonce_len(kappa)]
            sigma = data[nstart + NONCE_SLOT:off + slot]
            puzzles.append((Puzzle(nonce, kappa, epoch, record.key), sigma))
        return cls(record, tuple(puzzles))
