"""
512-byte cells and message fragmentation.

Cell: circuit_id (4) | command (1) | payload (507).
Payload: stream_id (2) | length (2) | frag_index (2) | frag_count (2) | flags (1) | data (498).

Every command uses the same fragment framing, so KEM ciphertexts (768 bytes
for ML-KEM-512) naturally span two cells.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass

CELL_LEN = 512
PAYLOAD_LEN = 507
_CELL_HEAD = struct.Struct(">IB")
_FRAG_HEAD = struct.Struct(">HHHHB")
FRAG_DATA_LEN = PAYLOAD_LEN - _FRAG_HEAD.size  # 498
MAX_FRAGMENTS = 0xFFFF


class CellError(ValueError):
    pass


class Command(enum.IntEnum):
    CREATE = 1
    CREATED = 2
    EXTEND = 3
    EXTENDED = 4
    RELAY_DATA = 5
    DESTROY = 6


class DestroyReason(enum.IntEnum):
    NONE = 0
    PROTOCOL = 1
    CONNECT_FAILED = 2
    REQUESTED = 3
    TIMEOUT = 4
    AUTH_FAILED = 5


@dataclass(frozen=True)
class Cell:
    circuit_id: int
    command: Command
    payload: bytes

    def __post_init__(self) -> None:
        if len(self.payload) > PAYLOAD_LEN:
            raise CellError(f"cell payload holds at most {PAYLOAD_LEN} bytes, got {len(self.payload)}")
        if len(self.payload) < PAYLOAD_LEN:
            object.__setattr__(self, "payload", bytes(self.payload).ljust(PAYLOAD_LEN, b"\0"))

    def to_bytes(self) -> bytes:
        return _CELL_HEAD.pack(self.circuit_id, self.command) + self.payload

    @classmethod
    def from_bytes(cls, frame: bytes) -> "Cell":
        if len(frame) != CELL_LEN:
            raise CellError(f"frame must be {CELL_LEN} bytes, got {len(frame)}")
        circ, cmd = _CELL_HEAD.unpack_from(frame)
        try:
            command = Command(cmd)
        except ValueError as exc:
            raise CellError(f"unknown command {cmd}") from exc
        return cls(circ, command, bytes(frame[_CELL_HEAD.size:]))


def cells_needed(length: int) -> int:
    return max(1, math.ceil(length / FRAG_DATA_LEN))


def fragment(circuit_id: int, command: Command, data: bytes, stream_id: int = 0) -> list[bytes]:
    """Split a message into serialized cells."""
    count = cells_needed(len(data))
    if count > MAX_FRAGMENTS:
        raise CellError(f"message of {len(data)} bytes needs too many cells")
    frames = []
    for i in range(count):
        chunk = data[i * FRAG_DATA_LEN:(i + 1) * FRAG_DATA_LEN]
        flags = 1 if i == count - 1 else 0
        payload = _FRAG_HEAD.pack(stream_id, len(chunk), i, count, flags) + chunk
        frames.append(Cell(circuit_id, command, payload.ljust(PAYLOAD_LEN, b"\0")).to_bytes())
    return frames


@dataclass
class _Partial:
    command: Command
    count: int
    chunks: list[bytes]


class Reassembler:
    """Collects in-order fragments per (circuit, command) into whole messages."""

    def __init__(self) -> None:
        self._partial: dict[int, _Partial] = {}

    def feed(self, cell: Cell) -> tuple[int, bytes] | None:
        """Returns (stream_id, message) once the last fragment arrives."""
        stream_id, length, idx, count, _flags = _FRAG_HEAD.unpack_from(cell.payload)
        if length > FRAG_DATA_LEN or count == 0 or idx >= count:
            raise CellError("bad fragment header")
        chunk = cell.payload[_FRAG_HEAD.size:_FRAG_HEAD.size + length]
        part = self._partial.get(cell.circuit_id)
        if idx == 0:
            if part is not None:
                raise CellError("new message started before previous one completed")
            part = _Partial(cell.command, count, [])
            self._partial[cell.circuit_id] = part
        elif part is None or part.command != cell.command or part.count != count or len(part.chunks) != idx:
            raise CellError("out-of-order or mismatched fragment")
        part.chunks.append(chunk)
        if len(part.chunks) == count:
            del self._partial[cell.circuit_id]
            return stream_id, b"".join(part.chunks)
        return None

    def drop(self, circuit_id: int) -> None:
        self._partial.pop(circuit_id, None)
