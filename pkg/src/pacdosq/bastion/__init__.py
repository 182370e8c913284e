"""Private Spectrum Bastion: signed spectrum + puzzle database and its PIR service."""

from ..spectrum import GridConfig, SpectrumKey, db_index, db_key
from .blocks import BLOCK_LEN, RECORD_LEN, Block, BlockFormatError, SpectrumRecord, block_len
from .database import BastionConfig, SetupError, SpectrumDatabase, db_setup, refresh_epoch
from .server import BastionServer, Behavior, QueryLogEntry

__all__ = [
    "BLOCK_LEN",
    "RECORD_LEN",
    "BastionConfig",
    "BastionServer",
    "Behavior",
    "Block",
    "BlockFormatError",
    "GridConfig",
    "QueryLogEntry",
    "SetupError",
    "SpectrumDatabase",
    "SpectrumKey",
    "SpectrumRecord",
    "block_len",
    "db_index",
    "db_key",
    "db_setup",
    "refresh_epoch",
]
