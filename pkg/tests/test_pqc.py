import time

import pytest

from pacdosq import pqc
from pacdosq.pqc import AuthenticationError, SeededRandom, aead_open, aead_seal, get_provider

import oracles

PROFILES = ["test-deterministic", "pq-production"]


@pytest.fixture(params=PROFILES, scope="module")
def prov(request):
    return get_provider(request.param, 1)


def test_sha256_vectors():
    assert pqc.hash(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert pqc.hash(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert pqc.hash(b"xyz") == pqc.hash(b"xyz")
    assert pqc.hash(b"xyz").hex() == oracles.sha256_hex(b"xyz")


def test_kem_round_trip_and_sizes(prov):
    c = prov.constants
    kp = prov.kem_keygen()
    assert len(kp.public_key) == c.kem_public_key_len
    assert len(kp.secret_key) == c.kem_secret_key_len
    ct, ss = prov.kem_encap(kp.public_key)
    assert len(ct) == c.kem_ciphertext_len and len(ss) == 32
    assert prov.kem_decap(kp.secret_key, ct) == ss


def test_kem_ciphertext_flips_disagree(prov):
    kp = prov.kem_keygen()
    ct, ss = prov.kem_encap(kp.public_key)
    for i in range(100):
        bad = bytearray(ct)
        bad[(i * 7) % len(bad)] ^= 1 << (i % 8)
        try:
            assert prov.kem_decap(kp.secret_key, bytes(bad)) != ss
        except (ValueError, AuthenticationError):
            pass


def test_signatures(prov):
    c = prov.constants
    kp = prov.sig_keygen()
    assert len(kp.public_key) == c.sig_public_key_len
    msg = b"spectrum puzzle binding"
    sig = prov.sig_sign(kp.secret_key, msg)
    assert len(sig) == c.signature_len == 2420
    assert prov.sig_verify(kp.public_key, msg, sig)
    for i in range(len(msg)):
        bad = bytearray(msg)
        bad[i] ^= 0x01
        assert not prov.sig_verify(kp.public_key, bytes(bad), sig)
    assert not prov.sig_verify(kp.public_key, msg, sig[:-1] + bytes([sig[-1] ^ 1]))
    assert not prov.sig_verify(kp.public_key, msg, sig[:100])


def test_other_key_rejects(prov):
    a, b = prov.sig_keygen(), prov.sig_keygen()
    sig = prov.sig_sign(a.secret_key, b"m")
    assert not prov.sig_verify(b.public_key, b"m", sig)


def test_aead():
    key = bytes(range(32))
    nonce = pqc.counter_nonce(5)
    ct = aead_seal(key, nonce, b"payload", b"aad")
    assert aead_open(key, nonce, ct, b"aad") == b"payload"
    with pytest.raises(AuthenticationError):
        aead_open(bytes(32), nonce, ct, b"aad")
    with pytest.raises(AuthenticationError):
        aead_open(key, nonce, ct[:-1], b"aad")
    with pytest.raises(AuthenticationError):
        aead_open(key, pqc.counter_nonce(6), ct, b"aad")
    with pytest.raises(AuthenticationError):
        aead_open(key, nonce, ct, b"other")


def test_hop_keys_are_directional():
    fwd, bwd = pqc.derive_hop_keys(bytes(32))
    assert fwd != bwd and len(fwd) == len(bwd) == 32
    assert pqc.derive_hop_keys(bytes(32)) == (fwd, bwd)


def test_deterministic_profile_is_reproducible():
    a = get_provider("test-deterministic", 3)
    b = get_provider("test-deterministic", 3)
    ka, kb = a.sig_keygen(SeededRandom("k")), b.sig_keygen(SeededRandom("k"))
    assert ka == kb
    assert a.sig_sign(ka.secret_key, b"x") == b.sig_sign(kb.secret_key, b"x")
    assert SeededRandom(1).bytes(40) == SeededRandom(1).bytes(40)
    assert SeededRandom(1).bytes(40) != SeededRandom(2).bytes(40)


def test_unknown_profile():
    with pytest.raises(ValueError):
        get_provider("rsa")


def test_production_kem_speed_order_of_magnitude():
    prov = get_provider("pq-production")
    kp = prov.kem_keygen()
    n = 200
    t0 = time.perf_counter()
    for _ in range(n):
        ct, ss = prov.kem_encap(kp.public_key)
        prov.kem_decap(kp.secret_key, ct)
    per_op_us = (time.perf_counter() - t0) / (2 * n) * 1e6
    # reference figures are around 10 us per operation; allow two orders of magnitude for hardware and bindings
    assert per_op_us < 1000
