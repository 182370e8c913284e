"""Relay descriptors and the signed directory consensus."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from ..pqc import Provider

RELAY_ID_LEN = 16
CONSENSUS_MAGIC = b"PQCN"


class DirectoryError(Exception):
    pass


class InsufficientRelays(DirectoryError):
    pass


class ConsensusVerificationError(DirectoryError):
    pass


def relay_id_for(kem_public_key: bytes) -> bytes:
    return hashlib.sha256(kem_public_key).digest()[:RELAY_ID_LEN]


def _put(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DirectoryError("truncated consensus")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def field(self) -> bytes:
        (n,) = struct.unpack(">I", self.take(4))
        return self.take(n)


@dataclass(frozen=True)
class RelayDescriptor:
    relay_id: bytes
    address: str
    kem_public_key: bytes
    sig_public_key: bytes = b""

    def __post_init__(self) -> None:
        if self.relay_id != relay_id_for(self.kem_public_key):
            raise DirectoryError("relay_id does not match KEM public key")

    @classmethod
    def create(cls, address: str, kem_public_key: bytes, sig_public_key: bytes = b"") -> "RelayDescriptor":
        return cls(relay_id_for(kem_public_key), address, kem_public_key, sig_public_key)

    def to_bytes(self) -> bytes:
        return (
            _put(self.relay_id) + _put(self.address.encode())
            + _put(self.kem_public_key) + _put(self.sig_public_key)
        )


@dataclass(frozen=True)
class PsbDescriptor:
    """A bastion endpoint as advertised in the consensus."""

    server_index: int
    address: str
    sig_public_key: bytes

    def to_bytes(self) -> bytes:
        return struct.pack(">I", self.server_index) + _put(self.address.encode()) + _put(self.sig_public_key)


@dataclass(frozen=True)
class Consensus:
    relays: tuple[RelayDescriptor, ...]
    issued_at: int
    psbs: tuple[PsbDescriptor, ...] = ()
    authority_signature: bytes = field(default=b"", compare=False)

    def body(self) -> bytes:
        """Canonical serialization covered by the authority signature."""
        out = [CONSENSUS_MAGIC, struct.pack(">QI", self.issued_at, len(self.relays))]
        out += [_put(r.to_bytes()) for r in self.relays]
        out.append(struct.pack(">I", len(self.psbs)))
        out += [_put(p.to_bytes()) for p in self.psbs]
        return b"".join(out)

    def to_bytes(self) -> bytes:
        return self.body() + _put(self.authority_signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Consensus":
        rd = _Reader(data)
        if rd.take(4) != CONSENSUS_MAGIC:
            raise DirectoryError("bad consensus magic")
        issued_at, n = struct.unpack(">QI", rd.take(12))
        relays = []
        for _ in range(n):
            sub = _Reader(rd.field())
            rid, addr, kem_pk, sig_pk = sub.field(), sub.field(), sub.field(), sub.field()
            relays.append(RelayDescriptor(rid, addr.decode(), kem_pk, sig_pk))
        (m,) = struct.unpack(">I", rd.take(4))
        psbs = []
        for _ in range(m):
            sub = _Reader(rd.field())
            (idx,) = struct.unpack(">I", sub.take(4))
            psbs.append(PsbDescriptor(idx, sub.field().decode(), sub.field()))
        sig = rd.field()
        if rd.pos != len(data):
            raise DirectoryError("trailing bytes after consensus")
        return cls(tuple(relays), issued_at, tuple(psbs), sig)

    def relay(self, relay_id: bytes) -> RelayDescriptor:
        for r in self.relays:
            if r.relay_id == relay_id:
                return r
        raise DirectoryError(f"relay {relay_id.hex()} not in consensus")

    def psb(self, server_index: int) -> PsbDescriptor:
        for p in self.psbs:
            if p.server_index == server_index:
                return p
        raise DirectoryError(f"PSB {server_index} not in consensus")


def directory_publish(
    provider: Provider,
    authority_sig_sk: bytes,
    relays: list[RelayDescriptor],
    issued_at: int,
    psbs: list[PsbDescriptor] | None = None,
) -> Consensus:
    if len({r.relay_id for r in relays}) < 3:
        raise InsufficientRelays(f"need at least 3 distinct relays, got {len({r.relay_id for r in relays})}")
    unsigned = Consensus(tuple(relays), issued_at, tuple(psbs or ()))
    return Consensus(unsigned.relays, issued_at, unsigned.psbs, provider.sig_sign(authority_sig_sk, unsigned.body()))


def verify_consensus(provider: Provider, authority_sig_pk: bytes, consensus: Consensus) -> Consensus:
    """Return the consensus if its signature checks out, raise otherwise."""
    if not provider.sig_verify(authority_sig_pk, consensus.body(), consensus.authority_signature):
        raise ConsensusVerificationError("consensus signature does not verify")
    return consensus
