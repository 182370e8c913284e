"""
Post-quantum primitive providers.

Two profiles share one interface:

``pq-production``
    ML-KEM-512 (via ``pqcrypto``), ML-DSA-44 (via ``cryptography``), AES-256-GCM,
    SHA-256. NIST level I for the lattice schemes.

``test-deterministic``
    Same sizes and AEAD/hash, but the KEM and signature are lightweight,
    INSECURE stand-ins driven by a seeded generator, so whole simulations are
    reproducible and fast. Never use it outside tests and simulations.
"""

from __future__ import annotations

import functools
import hashlib
import hmac
import os
from dataclasses import dataclass
from typing import Protocol

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDFExpand

PRODUCTION = "pq-production"
TEST_DETERMINISTIC = "test-deterministic"

SHARED_SECRET_LEN = 32
AEAD_KEY_LEN = 32
AEAD_NONCE_LEN = 12
AEAD_TAG_LEN = 16


class AuthenticationError(Exception):
    """AEAD open failed: wrong key, nonce, aad or tampered ciphertext."""


class RandomSource(Protocol):
    def bytes(self, n: int) -> bytes: ...


class SystemRandom:
    """RandomSource backed by the OS CSPRNG."""

    def bytes(self, n: int) -> bytes:
        return os.urandom(n)


@dataclass(frozen=True)
class ProfileConstants:
    name: str
    kem_public_key_len: int
    kem_secret_key_len: int
    kem_ciphertext_len: int
    sig_public_key_len: int
    sig_secret_key_len: int
    signature_len: int
    shared_secret_len: int = SHARED_SECRET_LEN
    aead_key_len: int = AEAD_KEY_LEN
    aead_tag_len: int = AEAD_TAG_LEN
    deterministic_signatures: bool = False


@dataclass(frozen=True)
class KemKeyPair:
    public_key: bytes
    secret_key: bytes


@dataclass(frozen=True)
class SigKeyPair:
    public_key: bytes
    secret_key: bytes


def hash(data: bytes) -> bytes:  # noqa: A001 - mirrors the primitive's name
    return hashlib.sha256(data).digest()


def aead_seal(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    return AESGCM(key).encrypt(nonce, plaintext, aad)


def aead_open(key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    try:
        return AESGCM(key).decrypt(nonce, ciphertext, aad)
    except (InvalidTag, ValueError) as exc:
        raise AuthenticationError("AEAD authentication failed") from exc


def counter_nonce(counter: int) -> bytes:
    if counter >= 1 << (8 * AEAD_NONCE_LEN):
        raise OverflowError("nonce counter exhausted")
    return counter.to_bytes(AEAD_NONCE_LEN, "big")


def derive_hop_keys(shared_secret: bytes) -> tuple[bytes, bytes]:
    """Expand a KEM shared secret into (forward, backward) AEAD keys."""
    keys = []
    for label in (b"fwd", b"bwd"):
        kdf = HKDFExpand(algorithm=hashes.SHA256(), length=AEAD_KEY_LEN, info=b"pacdosq hop " + label)
        keys.append(kdf.derive(shared_secret))
    return keys[0], keys[1]


class Provider:
    """Base class; subclasses fill in the KEM and signature primitives."""

    constants: ProfileConstants

    @property
    def name(self) -> str:
        return self.constants.name

    def kem_keygen(self, rng: RandomSource | None = None) -> KemKeyPair:
        raise NotImplementedError

    def kem_encap(self, public_key: bytes) -> tuple[bytes, bytes]:
        raise NotImplementedError

    def kem_decap(self, secret_key: bytes, ciphertext: bytes) -> bytes:
        raise NotImplementedError

    def sig_keygen(self, rng: RandomSource | None = None) -> SigKeyPair:
        raise NotImplementedError

    def sig_sign(self, secret_key: bytes, message: bytes) -> bytes:
        raise NotImplementedError

    def sig_verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        raise NotImplementedError

    # symmetric side is profile-independent
    hash = staticmethod(hash)
    aead_seal = staticmethod(aead_seal)
    aead_open = staticmethod(aead_open)


class ProductionProvider(Provider):
    constants = ProfileConstants(
        name=PRODUCTION,
        kem_public_key_len=800,
        kem_secret_key_len=1632,
        kem_ciphertext_len=768,
        sig_public_key_len=1312,
        sig_secret_key_len=32,
        signature_len=2420,
    )

    def __init__(self) -> None:
        from pqcrypto.kem import ml_kem_512
        from cryptography.hazmat.primitives.asymmetric import mldsa

        self._kem = ml_kem_512
        self._mldsa = mldsa

    def kem_keygen(self, rng: RandomSource | None = None) -> KemKeyPair:
        # pqcrypto draws from the OS CSPRNG; rng is accepted for interface parity
        pk, sk = self._kem.keygen()
        return KemKeyPair(bytes(pk), bytes(sk))

    def kem_encap(self, public_key: bytes) -> tuple[bytes, bytes]:
        ct, ss = self._kem.encaps(public_key)
        return bytes(ct), bytes(ss)

    def kem_decap(self, secret_key: bytes, ciphertext: bytes) -> bytes:
        if len(ciphertext) != self.constants.kem_ciphertext_len:
            raise ValueError("malformed KEM ciphertext")
        return bytes(self._kem.decaps(secret_key, ciphertext))

    def sig_keygen(self, rng: RandomSource | None = None) -> SigKeyPair:
        seed = (rng or SystemRandom()).bytes(32)
        sk = self._mldsa.MLDSA44PrivateKey.from_seed_bytes(seed)
        return SigKeyPair(sk.public_key().public_bytes_raw(), seed)

    @functools.lru_cache(maxsize=64)
    def _signer(self, secret_key: bytes):
        return self._mldsa.MLDSA44PrivateKey.from_seed_bytes(secret_key)

    @functools.lru_cache(maxsize=256)
    def _verifier(self, public_key: bytes):
        return self._mldsa.MLDSA44PublicKey.from_public_bytes(public_key)

    def sig_sign(self, secret_key: bytes, message: bytes) -> bytes:
        return self._signer(bytes(secret_key)).sign(message)

    def sig_verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        try:
            self._verifier(bytes(public_key)).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True


class SeededRandom:
    """Reproducible RandomSource: a SHAKE-256 keystream over a seed. Not for key material in production."""

    def __init__(self, seed: int | bytes | str) -> None:
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "big", signed=True)
        elif isinstance(seed, str):
            seed = seed.encode()
        self._seed = seed
        self._counter = 0

    def bytes(self, n: int) -> bytes:
        self._counter += 1
        return hashlib.shake_256(self._seed + self._counter.to_bytes(8, "big")).digest(n)


def _expand(label: bytes, *parts: bytes, length: int) -> bytes:
    h = hashlib.shake_256(label)
    for p in parts:
        h.update(len(p).to_bytes(4, "big") + p)
    return h.digest(length)


class DeterministicTestProvider(Provider):
    """
    Insecure stand-ins with production-sized outputs.

    Public keys embed the 32-byte secret, so anyone holding a public key can
    decapsulate and forge. Only for reproducible simulations and tests.
    """

    constants = ProfileConstants(
        name=TEST_DETERMINISTIC,
        kem_public_key_len=800,
        kem_secret_key_len=32,
        kem_ciphertext_len=768,
        sig_public_key_len=1312,
        sig_secret_key_len=32,
        signature_len=2420,
        deterministic_signatures=True,
    )

    def __init__(self, seed: int | bytes = 0) -> None:
        if isinstance(seed, int):
            seed = seed.to_bytes(8, "big")
        self._rng = SeededRandom(b"pacdosq-test-provider" + seed)

    def _pk_from_secret(self, label: bytes, secret: bytes, length: int) -> bytes:
        return secret + _expand(label, secret, length=length - len(secret))

    def kem_keygen(self, rng: RandomSource | None = None) -> KemKeyPair:
        sk = (rng or self._rng).bytes(32)
        return KemKeyPair(self._pk_from_secret(b"kem-pk", sk, self.constants.kem_public_key_len), sk)

    def kem_encap(self, public_key: bytes) -> tuple[bytes, bytes]:
        if len(public_key) != self.constants.kem_public_key_len:
            raise ValueError("malformed KEM public key")
        key = public_key[:32]
        r = self._rng.bytes(32)
        ct = r + _expand(b"kem-ct", key, r, length=self.constants.kem_ciphertext_len - 32)
        return ct, _expand(b"kem-ss", key, r, length=SHARED_SECRET_LEN)

    def kem_decap(self, secret_key: bytes, ciphertext: bytes) -> bytes:
        if len(ciphertext) != self.constants.kem_ciphertext_len:
            raise ValueError("malformed KEM ciphertext")
        r, check = ciphertext[:32], ciphertext[32:]
        expected = _expand(b"kem-ct", secret_key, r, length=len(check))
        if not hmac.compare_digest(check, expected):
            # implicit rejection, like ML-KEM
            return _expand(b"kem-reject", secret_key, ciphertext, length=SHARED_SECRET_LEN)
        return _expand(b"kem-ss", secret_key, r, length=SHARED_SECRET_LEN)

    def sig_keygen(self, rng: RandomSource | None = None) -> SigKeyPair:
        sk = (rng or self._rng).bytes(32)
        return SigKeyPair(self._pk_from_secret(b"sig-pk", sk, self.constants.sig_public_key_len), sk)

    def sig_sign(self, secret_key: bytes, message: bytes) -> bytes:
        return _expand(b"sig", secret_key, message, length=self.constants.signature_len)

    def sig_verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        if len(public_key) != self.constants.sig_public_key_len or len(signature) != self.constants.signature_len:
            return False
        expected = self.sig_sign(public_key[:32], message)
        return hmac.compare_digest(expected, signature)


PROFILES = {
    PRODUCTION: ProductionProvider.constants,
    TEST_DETERMINISTIC: DeterministicTestProvider.constants,
}


def get_provider(profile: str, seed: int | bytes = 0) -> Provider:
    if profile == PRODUCTION:
        return ProductionProvider()
    if profile == TEST_DETERMINISTIC:
        return DeterministicTestProvider(seed)
    raise ValueError(f"unknown provider profile {profile!r}; expected one of {sorted(PROFILES)}")
