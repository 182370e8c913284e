"""Spectrum grid coordinates and the key -> block index mapping."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

_KEY = struct.Struct(">IIII")
SPECTRUM_KEY_LEN = _KEY.size


@dataclass(frozen=True, order=True)
class SpectrumKey:
    grid_x: int
    grid_y: int
    ch: int
    ts_slot: int

    def to_bytes(self) -> bytes:
        return _KEY.pack(self.grid_x, self.grid_y, self.ch, self.ts_slot)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SpectrumKey":
        if len(data) != SPECTRUM_KEY_LEN:
            raise ValueError(f"spectrum key must be {SPECTRUM_KEY_LEN} bytes")
        return cls(*_KEY.unpack(data))


@dataclass(frozen=True)
class GridConfig:
    """Dimensions of one PSB grid segment: G_x x G_y cells, C channels, T slots."""

    gx: int
    gy: int
    channels: int
    slots: int
    cell_size: float = 100.0  # metres per grid cell
    origin_x: float = 0.0
    origin_y: float = 0.0
    slot_seconds: int = 3600

    def __post_init__(self) -> None:
        for name in ("gx", "gy", "channels", "slots"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")

    @property
    def rows(self) -> int:
        return self.gx * self.gy * self.channels * self.slots

    @classmethod
    def for_rows(cls, rows: int, channels: int = 4, slots: int = 4) -> "GridConfig":
        """A square-ish grid with exactly ``rows`` cells; rows must factor accordingly."""
        if rows % (channels * slots):
            raise ValueError("rows must be a multiple of channels * slots")
        cells = rows // (channels * slots)
        if cells & (cells - 1) == 0:
            gx = 1 << (cells.bit_length() // 2)
        else:
            gx = cells
        gy = cells // gx
        return cls(gx=gx, gy=gy, channels=channels, slots=slots)

    def contains(self, key: SpectrumKey) -> bool:
        return (
            0 <= key.grid_x < self.gx
            and 0 <= key.grid_y < self.gy
            and 0 <= key.ch < self.channels
            and 0 <= key.ts_slot < self.slots
        )

    def quantize(self, lx: float, ly: float, ch: int, timestamp: float, epoch_start: float = 0.0) -> SpectrumKey:
        """Map real coordinates and a timestamp onto a grid cell and time slot."""
        gx = math.floor((lx - self.origin_x) / self.cell_size)
        gy = math.floor((ly - self.origin_y) / self.cell_size)
        slot = math.floor((timestamp - epoch_start) / self.slot_seconds) % self.slots
        key = SpectrumKey(gx, gy, ch, slot)
        if not self.contains(key):
            raise ValueError(f"location ({lx}, {ly}) ch={ch} is outside this grid segment")
        return key


def db_index(grid: GridConfig, key: SpectrumKey) -> int:
    if not grid.contains(key):
        raise ValueError(f"{key} is outside grid {grid.gx}x{grid.gy}x{grid.channels}x{grid.slots}")
    return ((key.grid_y * grid.gx + key.grid_x) * grid.channels + key.ch) * grid.slots + key.ts_slot


def db_key(grid: GridConfig, beta: int) -> SpectrumKey:
    """Inverse of :func:`db_index`."""
    if not 0 <= beta < grid.rows:
        raise ValueError(f"block index {beta} out of range [0, {grid.rows})")
    beta, ts_slot = divmod(beta, grid.slots)
    beta, ch = divmod(beta, grid.channels)
    grid_y, grid_x = divmod(beta, grid.gx)
    return SpectrumKey(grid_x, grid_y, ch, ts_slot)
