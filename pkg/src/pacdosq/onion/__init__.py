"""Three-hop onion transport with KEM-based telescoping circuits."""

from .cells import CELL_LEN, FRAG_DATA_LEN, PAYLOAD_LEN, Cell, CellError, Command, DestroyReason, Reassembler, fragment
from .circuit import (
    Circuit,
    CircuitBuildError,
    CircuitClosed,
    CircuitError,
    CircuitState,
    DestinationUnreachable,
    choose_path,
    circuit_build,
    disjoint_paths,
    onion_recv,
    onion_send,
)
from .directory import (
    Consensus,
    ConsensusVerificationError,
    DirectoryError,
    InsufficientRelays,
    PsbDescriptor,
    RelayDescriptor,
    directory_publish,
    relay_id_for,
    verify_consensus,
)
from .relay import HopObservation, Relay
from .transport import LatencyModel, Link, LinkClosed, SimNetwork, TcpNetwork

__all__ = [
    "CELL_LEN",
    "FRAG_DATA_LEN",
    "PAYLOAD_LEN",
    "Cell",
    "CellError",
    "Circuit",
    "CircuitBuildError",
    "CircuitClosed",
    "CircuitError",
    "CircuitState",
    "Command",
    "Consensus",
    "ConsensusVerificationError",
    "DestinationUnreachable",
    "DestroyReason",
    "DirectoryError",
    "HopObservation",
    "InsufficientRelays",
    "LatencyModel",
    "Link",
    "LinkClosed",
    "PsbDescriptor",
    "Reassembler",
    "Relay",
    "RelayDescriptor",
    "SimNetwork",
    "TcpNetwork",
    "choose_path",
    "circuit_build",
    "directory_publish",
    "disjoint_paths",
    "fragment",
    "onion_recv",
    "onion_send",
    "relay_id_for",
    "verify_consensus",
]
