import io
import json
import os
import threading

import pytest

from pacdosq.gatekeeper import AccessDecision, Gatekeeper, flood_benchmark, forged_token, solved_token
from pacdosq.pqc import SeededRandom
from pacdosq.puzzle import PuzzleSolution, Reason, Token, pow_verify, puzzle_gen, sign_puzzle
from pacdosq.spectrum import SpectrumKey

EPOCH = 1_700_000_000
SID = bytes(range(16))
NOW = EPOCH + 100


@pytest.fixture
def gk(provider, sig_keys):
    return Gatekeeper(provider, sig_keys.public_key, SID, clock=lambda: NOW)


def _valid(provider, sig_keys, seed=0, kappa=8):
    return solved_token(provider, sig_keys.secret_key, sig_keys.public_key, SID, kappa, EPOCH, EPOCH + 10,
                        SeededRandom(seed))


def test_grant_then_replay(gk, provider, sig_keys):
    tok = _valid(provider, sig_keys)
    first = gk.handle_request(tok)
    assert first.granted and first.reason is Reason.OK and first.token_digest == tok.digest()
    assert gk.handle_request(tok.to_bytes()).reason is Reason.REPLAY


def test_random_bytes_denied(gk):
    rng = SeededRandom("blobs")
    for _ in range(200):
        d = gk.handle_request(rng.bytes(512))
        assert not d.granted and d.reason is Reason.BAD_POW
    assert gk.handle_request(b"").reason is Reason.BAD_POW


def test_decision_invariant_and_json():
    d = AccessDecision(True, Reason.OK, bytes(32), 1.5)
    assert AccessDecision.from_json(d.to_json()) == d
    with pytest.raises(ValueError):
        AccessDecision(True, Reason.REPLAY, bytes(32), 1.0)
    with pytest.raises(ValueError):
        AccessDecision(False, Reason.OK, bytes(32), 1.0)


def test_access_log_lines(provider, sig_keys):
    buf = io.StringIO()
    gk = Gatekeeper(provider, sig_keys.public_key, SID, access_log=buf, clock=lambda: NOW)
    tok = _valid(provider, sig_keys)
    gk.handle_request(tok)
    gk.handle_request(tok)
    gk.handle_request(b"junk")
    lines = [json.loads(l) for l in buf.getvalue().splitlines()]
    assert [l["reason"] for l in lines] == ["OK", "REPLAY", "BAD_POW"]


def test_wrong_service_and_expiry(provider, sig_keys):
    tok = _valid(provider, sig_keys)
    other = Gatekeeper(provider, sig_keys.public_key, bytes(16), clock=lambda: NOW)
    assert other.handle_request(tok).reason is Reason.BAD_POW
    late = Gatekeeper(provider, sig_keys.public_key, SID, clock=lambda: EPOCH + 3601)
    assert late.handle_request(tok).reason is Reason.EXPIRED


def test_forged_token_fails_work(provider, sig_keys, gk):
    tok = forged_token(provider, sig_keys.secret_key, SID, 16, EPOCH, EPOCH + 1, SeededRandom(3))
    assert gk.handle_request(tok).reason is Reason.BAD_POW


def test_concurrent_replays_grant_once(provider, sig_keys, gk):
    tok = _valid(provider, sig_keys, seed=5)
    raw = tok.to_bytes()
    results = []
    barrier = threading.Barrier(8)

    def worker():
        barrier.wait()
        results.append(gk.handle_request(raw).granted)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert sum(results) == 1


def test_unworked_tokens_at_kappa_20(provider, sig_keys, gk):
    """
    A million seeded random nonces against one signed kappa=20 puzzle. The
    expected number of nonces that satisfy the work check by luck is
    1e6 * 2**-20 ~ 0.95, so zero hits is not guaranteed; what must hold is that
    only those lucky nonces are ever granted, and that their count is
    binomially plausible (P[more than 7] < 1e-5).
    """
    pz = puzzle_gen(20, EPOCH, SpectrumKey(0, 0, 0, 0), SeededRandom("k20"))
    sigma = sign_puzzle(provider, sig_keys.secret_key, pz)
    stream = SeededRandom("nonces").bytes(8 * 10**6)

    def nonce(i):
        return PuzzleSolution(stream[8 * i:8 * i + 8])

    hits = {i for i in range(10**6) if pow_verify(pz, nonce(i), SID, EPOCH + 1)}
    assert len(hits) <= 7
    probe = set(range(2000)) | hits
    granted = {i for i in probe if gk.handle_request(Token(pz, sigma, nonce(i), SID, EPOCH + 1)).granted}
    assert granted == hits


def test_flood_zero_rate(gk):
    report = flood_benchmark(gk, 0, 0.5, [], [])
    assert report.requests == 0 and report.granted == 0 and report.cpu_per_verification_us == 0.0


def test_flood_mixed_exact(provider, sig_keys):
    gk = Gatekeeper(provider, sig_keys.public_key, SID, clock=lambda: NOW)
    valid = [_valid(provider, sig_keys, seed=100 + i, kappa=6) for i in range(250)]
    rng = SeededRandom("flood")
    invalid = [forged_token(provider, sig_keys.secret_key, SID, 12, EPOCH, EPOCH + 1, rng) for i in range(125)]
    invalid += [os.urandom(300) for _ in range(125)]
    report = flood_benchmark(gk, 1000, 0.5, valid, invalid, duration=0.5)
    assert report.requests == 500 and report.valid_sent == 250
    assert report.granted == 250
    assert report.reasons == {"OK": 250, "BAD_POW": 250}
    assert report.to_dict()["verified_per_second"] > 0


def test_invalid_flood_cost_order_of_magnitude(provider, sig_keys):
    gk = Gatekeeper(provider, sig_keys.public_key, SID, clock=lambda: NOW)
    rng = SeededRandom("cost")
    invalid = [forged_token(provider, sig_keys.secret_key, SID, 16, EPOCH, EPOCH + 1, rng) for _ in range(400)]
    report = flood_benchmark(gk, 100_000, 0.0, [], invalid, duration=0.004)
    # one signature check plus one hash; references are tens of microseconds
    assert report.cpu_per_verification_us < 3000
