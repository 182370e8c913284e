"""
The PSB database: an r x s byte matrix, one signed block per spectrum key.

Matrices are immutable once built. A refresh produces a new matrix and the
server swaps its reference, so every query sees exactly one epoch.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..pqc import Provider, RandomSource
from ..puzzle import puzzle_gen
from ..spectrum import GridConfig, db_key
from .blocks import (
    MAX_BLOCK_KAPPA,
    RECORD_LEN,
    RECORD_META_MAX,
    Block,
    block_len,
    encode_puzzle_slot,
    puzzle_slot_len,
)

log = logging.getLogger(__name__)

DB_MAGIC = b"PSB1"
DB_VERSION = 1
_DB_HEADER = struct.Struct(">4sHIIQH")


class SetupError(RuntimeError):
    pass


@dataclass(frozen=True)
class BastionConfig:
    grid: GridConfig
    kappa: int = 14
    theta: int = 1
    validity_window: int = 3600

    def __post_init__(self) -> None:
        if not 1 <= self.kappa <= MAX_BLOCK_KAPPA:
            raise ValueError(f"kappa must be in [1, {MAX_BLOCK_KAPPA}] for the block layout")
        if self.theta < 1:
            raise ValueError("theta must be at least 1")

    @property
    def rows(self) -> int:
        return self.grid.rows

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BastionConfig":
        d = dict(d)
        d["grid"] = GridConfig(**d["grid"])
        return cls(**d)


@dataclass(frozen=True)
class SpectrumDatabase:
    config: BastionConfig
    epoch: int
    pubkey: bytes
    signature_len: int
    matrix: np.ndarray = field(repr=False)

    @property
    def r(self) -> int:
        return self.matrix.shape[0]

    @property
    def s(self) -> int:
        return self.matrix.shape[1]

    @property
    def nbytes(self) -> int:
        return self.matrix.nbytes

    def row(self, beta: int) -> bytes:
        return self.matrix[beta].tobytes()

    def block(self, beta: int) -> Block:
        return Block.from_bytes(self.row(beta), self.signature_len)

    def audit(self, provider: Provider) -> list[int]:
        """Rows whose signatures fail or whose puzzle is not bound to that row's key/epoch."""
        bad = []
        for beta in range(self.r):
            try:
                blk = self.block(beta)
            except ValueError:
                bad.append(beta)
                continue
            key = db_key(self.config.grid, beta)
            for puzzle, sigma in blk.puzzles:
                if (
                    puzzle.cell_key != key
                    or puzzle.epoch != self.epoch
                    or not provider.sig_verify(self.pubkey, puzzle.binding(), sigma)
                ):
                    bad.append(beta)
                    break
        return bad

    def save(self, path: str | Path) -> None:
        path = Path(path)
        header = _DB_HEADER.pack(DB_MAGIC, DB_VERSION, self.r, self.s, self.epoch, len(self.pubkey))
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.pubkey)
            fh.write(np.ascontiguousarray(self.matrix).tobytes())
        meta = {
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "signature_len": self.signature_len,
            "pubkey": self.pubkey.hex(),
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path: str | Path, mmap: bool = True) -> "SpectrumDatabase":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        with open(path, "rb") as fh:
            head = fh.read(_DB_HEADER.size)
            magic, version, r, s, epoch, pklen = _DB_HEADER.unpack(head)
            if magic != DB_MAGIC or version != DB_VERSION:
                raise ValueError(f"{path} is not a PSB database file")
            pubkey = fh.read(pklen)
        offset = _DB_HEADER.size + pklen
        if mmap:
            matrix = np.memmap(path, dtype=np.uint8, mode="r", offset=offset, shape=(r, s))
        else:
            matrix = np.fromfile(path, dtype=np.uint8, offset=offset).reshape(r, s)
            matrix.setflags(write=False)
        return cls(BastionConfig.from_dict(meta["config"]), epoch, pubkey, meta["signature_len"], matrix)


def _synthetic_records(grid: GridConfig, rng: RandomSource) -> np.ndarray:
    """Key, availability, EIRP bound and opaque metadata for every row."""
    r = grid.rows
    beta = np.arange(r, dtype=np.int64)
    rest, ts_slot = np.divmod(beta, grid.slots)
    rest, ch = np.divmod(rest, grid.channels)
    gy, gx = np.divmod(rest, grid.gx)
    keys = np.stack([gx, gy, ch, ts_slot], axis=1).astype(">u4").view(np.uint8).reshape(r, 16)

    avail = (np.frombuffer(rng.bytes(r), dtype=np.uint8) < 179).astype(np.uint8)
    raw = np.frombuffer(rng.bytes(2 * r), dtype=">u2").astype(np.int32)
    deci = (raw % 461 - 100).astype(">i2").view(np.uint8).reshape(r, 2)
    mlen = np.full(r, RECORD_META_MAX, dtype=">u2").view(np.uint8).reshape(r, 2)
    meta = np.frombuffer(rng.bytes(r * RECORD_META_MAX), dtype=np.uint8).reshape(r, RECORD_META_MAX)
    out = np.concatenate([keys, avail[:, None], deci, mlen, meta], axis=1)
    assert out.shape == (r, RECORD_LEN)
    return out


def _fill_puzzles(
    matrix: np.ndarray,
    config: BastionConfig,
    epoch: int,
    provider: Provider,
    sig_sk: bytes,
    rng: RandomSource,
) -> None:
    sig_len = provider.constants.signature_len
    slot = puzzle_slot_len(sig_len)
    grid = config.grid
    for beta in range(matrix.shape[0]):
        key = db_key(grid, beta)
        off = RECORD_LEN
        for _ in range(config.theta):
            puzzle = puzzle_gen(config.kappa, epoch, key, rng)
            try:
                sigma = provider.sig_sign(sig_sk, puzzle.binding())
            except Exception as exc:
                raise SetupError(f"signing failed at row {beta}") from exc
            matrix[beta, off:off + slot] = np.frombuffer(encode_puzzle_slot(puzzle, sigma, sig_len), dtype=np.uint8)
            off += slot


def db_setup(
    config: BastionConfig,
    epoch: int,
    sig_keys: tuple[bytes, bytes],
    rng: RandomSource,
    provider: Provider,
) -> SpectrumDatabase:
    """
    Build the full signed database for ``epoch``.

    ``sig_keys`` is (public_key, secret_key). With a deterministic signature
    provider the same (config, epoch, keys, rng seed) gives byte-identical
    matrices on every PSB.
    """
    pk, sk = sig_keys
    sig_len = provider.constants.signature_len
    s = block_len(sig_len, config.theta)
    matrix = np.empty((config.rows, s), dtype=np.uint8)
    matrix[:, :RECORD_LEN] = _synthetic_records(config.grid, rng)
    _fill_puzzles(matrix, config, epoch, provider, sk, rng)
    matrix.setflags(write=False)
    log.info("database ready: r=%d s=%d epoch=%d", config.rows, s, epoch)
    return SpectrumDatabase(config, epoch, pk, sig_len, matrix)


def refresh_epoch(
    db: SpectrumDatabase,
    new_epoch: int,
    sig_keys: tuple[bytes, bytes],
    rng: RandomSource,
    provider: Provider,
) -> SpectrumDatabase:
    """Fresh puzzles and signatures for ``new_epoch``; spectrum records carried over."""
    pk, sk = sig_keys
    matrix = np.empty_like(np.asarray(db.matrix))
    matrix[:, :RECORD_LEN] = db.matrix[:, :RECORD_LEN]
    _fill_puzzles(matrix, db.config, new_epoch, provider, sk, rng)
    matrix.setflags(write=False)
    return SpectrumDatabase(db.config, new_epoch, pk, db.signature_len, matrix)

