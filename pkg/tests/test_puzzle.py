import hashlib
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacdosq import puzzle
from pacdosq.pqc import SeededRandom
from pacdosq.puzzle import (
    Puzzle, PuzzleError, PuzzleSolution, Reason, ReplayCache, Token, TokenFormatError,
    make_token, pow_solve, pow_verify, puzzle_gen, sign_puzzle, verify_token,
)
from pacdosq.spectrum import SpectrumKey

SID = hashlib.sha256(b"svc").digest()[:16]
KEY = SpectrumKey(1, 2, 3, 4)
EPOCH = 1_700_000_000


def _token(provider, sig_keys, kappa=8, ts=EPOCH + 5, seed=0):
    pz = puzzle_gen(kappa, EPOCH, KEY, SeededRandom(seed))
    sigma = sign_puzzle(provider, sig_keys.secret_key, pz)
    sol = pow_solve(pz, SID, ts, SeededRandom(seed + 1))
    return make_token(provider, sig_keys.public_key, pz, sigma, sol, SID, ts)


def test_puzzle_gen_shapes():
    pz = puzzle_gen(14, EPOCH, KEY, SeededRandom(1))
    assert len(pz.nonce_b) == 2 and pz.nonce_b[0] >> 6 == 0
    assert len(puzzle_gen(8, EPOCH, KEY, SeededRandom(1)).nonce_b) == 1
    assert len(puzzle_gen(9, EPOCH, KEY, SeededRandom(1)).nonce_b) == 2
    for bad in (0, 256):
        with pytest.raises(PuzzleError):
            puzzle_gen(bad, EPOCH, KEY, SeededRandom(1))


@given(st.integers(1, 255))
def test_nonce_bits_bounded(kappa):
    pz = puzzle_gen(kappa, EPOCH, KEY, SeededRandom(kappa))
    assert len(pz.nonce_b) == (kappa + 7) // 8
    assert int.from_bytes(pz.nonce_b, "big") < 1 << kappa


def test_preimage_layout():
    pz = Puzzle(b"\x01\x02", 14, EPOCH, KEY)
    sol = pow_solve(pz, SID, 77)
    pre = SID + struct.pack(">Q", 77) + b"\x01\x02" + sol.nonce_c
    digest = hashlib.sha256(pre).digest()
    assert int.from_bytes(digest, "big") >> (256 - 14) == 0
    assert pow_verify(pz, sol, SID, 77)


def test_kappa_one():
    pz = puzzle_gen(1, EPOCH, KEY, SeededRandom(0))
    sol = pow_solve(pz, SID, 1)
    assert pow_verify(pz, sol, SID, 1)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10**6))
def test_solve_then_verify(kappa, seed):
    pz = puzzle_gen(kappa, EPOCH, KEY, SeededRandom(seed))
    sol = pow_solve(pz, SID, seed, SeededRandom(seed))
    assert pow_verify(pz, sol, SID, seed)
    assert not pow_verify(pz, sol, b"short", seed)


def test_bit_flips_rejected_at_16():
    pz = puzzle_gen(16, EPOCH, KEY, SeededRandom(4))
    sol = pow_solve(pz, SID, 9, SeededRandom(4))
    accepted = 0
    for i in range(1000):
        nonce = bytearray(sol.nonce_c)
        nonce[(i // 8) % 8] ^= 1 << (i % 8)
        if i >= 64:
            # beyond single flips, flip a second derived bit so the corpus is 1000 distinct nonces
            nonce[(i * 5) % 8] ^= 1 << ((i * 3) % 8)
        if bytes(nonce) != sol.nonce_c:
            accepted += pow_verify(pz, PuzzleSolution(bytes(nonce)), SID, 9)
    assert accepted == 0
    other = hashlib.sha256(b"other").digest()[:16]
    assert not pow_verify(pz, sol, other, 9)


def test_make_token_preconditions(provider, sig_keys):
    pz = puzzle_gen(8, EPOCH, KEY, SeededRandom(0))
    sigma = sign_puzzle(provider, sig_keys.secret_key, pz)
    sol = pow_solve(pz, SID, EPOCH)
    tok = make_token(provider, sig_keys.public_key, pz, sigma, sol, SID, EPOCH)
    assert verify_token(provider, tok, sig_keys.public_key, EPOCH + 1) is Reason.OK
    with pytest.raises(PuzzleError):
        make_token(provider, sig_keys.public_key, pz, bytes(len(sigma)), sol, SID, EPOCH)
    unsolved = next(PuzzleSolution(bytes([i]) * 8) for i in range(256)
                    if not pow_verify(pz, PuzzleSolution(bytes([i]) * 8), SID, EPOCH))
    with pytest.raises(PuzzleError):
        make_token(provider, sig_keys.public_key, pz, sigma, unsolved, SID, EPOCH)


def test_verify_token_reasons(provider, sig_keys):
    tok = _token(provider, sig_keys)
    cache = ReplayCache()
    now = EPOCH + 10
    assert verify_token(provider, tok, sig_keys.public_key, now, replay_cache=cache) is Reason.OK
    assert verify_token(provider, tok, sig_keys.public_key, now, replay_cache=cache) is Reason.REPLAY
    assert verify_token(provider, tok, sig_keys.public_key, EPOCH + 3601) is Reason.EXPIRED
    assert verify_token(provider, tok, sig_keys.public_key, EPOCH - 1) is Reason.EXPIRED
    other = provider.sig_keygen(SeededRandom("other"))
    assert verify_token(provider, tok, other.public_key, now) is Reason.BAD_SIG
    assert verify_token(provider, tok, sig_keys.public_key, now, service_id=bytes(16)) is Reason.BAD_POW
    late = _token(provider, sig_keys, ts=EPOCH + 4000)
    assert verify_token(provider, late, sig_keys.public_key, EPOCH + 10) is Reason.EXPIRED


def test_binding_flips_break_signature(provider, sig_keys):
    tok = _token(provider, sig_keys)
    binding = tok.puzzle.binding()
    for i in range(len(binding) * 8):
        bad = bytearray(binding)
        bad[i // 8] ^= 1 << (i % 8)
        assert not provider.sig_verify(sig_keys.public_key, bytes(bad), tok.sigma)


def test_token_wire_round_trip(provider, sig_keys):
    tok = _token(provider, sig_keys, kappa=12)
    raw = tok.to_bytes()
    assert raw[0] == 0x54
    assert struct.unpack_from(">IQ", raw, 1) == (12, EPOCH)
    assert raw[13:29] == KEY.to_bytes()
    assert len(raw) == 1 + 4 + 8 + 16 + 2 + 2 + 2420 + 16 + 8 + 8
    assert Token.from_bytes(raw) == tok
    for cut in (0, 1, 20, len(raw) - 1):
        with pytest.raises(TokenFormatError):
            Token.from_bytes(raw[:cut])
    with pytest.raises(TokenFormatError):
        Token.from_bytes(raw + b"\0")


def test_replay_cache_expiry():
    cache = ReplayCache()
    assert cache.check_and_insert(b"d", 100.0, 50.0)
    assert not cache.check_and_insert(b"d", 100.0, 60.0)
    assert cache.evict(101.0) == 1 and len(cache) == 0


def test_pq_difficulty_doubles():
    assert puzzle.pq_difficulty(14) == 28
