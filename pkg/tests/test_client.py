import asyncio

import numpy as np
import pytest

from pacdosq import pir
from pacdosq.bastion.server import BastionServer
from pacdosq.client import (
    AuthenticityFailure, Client, ClientContext, EpochExpired, InsufficientResponses, Unrecoverable,
)
from pacdosq.gatekeeper import Gatekeeper
from pacdosq.onion import PsbDescriptor, directory_publish
from pacdosq.pqc import SeededRandom
from pacdosq.puzzle import Reason
from pacdosq.spectrum import db_key

from simworld import make_world

EPOCH = 1_700_000_000
SID = bytes(range(16))


def fetch(db, ell, t, behaviors=None, beta=9, now=EPOCH + 60, pubkey=None, relays=None, keep=None):
    """Run one retrieval against ``ell`` simulated bastions; returns (result or exception, servers, world)."""
    behaviors = behaviors or {}

    async def go():
        world = make_world(relays or 3 * ell)
        servers = {}
        for i in range(1, ell + 1):
            srv = BastionServer(i, db, behaviors.get(i, "honest"), log_queries=True)
            servers[i] = srv
            if behaviors.get(i) != "down":
                world.net.register_service(f"psb-{i}", srv.handle)
        cons = directory_publish(world.provider, world.authority.secret_key, [r.descriptor for r in world.relays],
                                 EPOCH, [PsbDescriptor(i, f"psb-{i}", db.pubkey) for i in range(1, ell + 1)])
        ctx = ClientContext(db_key(db.config.grid, beta), db.config.grid, pir.PirConfig(ell, t, db.r, db.s),
                            tuple(f"psb-{i}" for i in range(1, ell + 1)), pubkey or db.pubkey, SID, timeout=0.5)
        client = Client(ctx, world.provider, world.net, cons, "client-0", SeededRandom(beta), path_seed=beta)
        try:
            res = await client.fetch_block(now)
            if keep is not None:
                keep.append(client.acquire_token(res, now))
        except Exception as exc:  # noqa: BLE001 - handed back to the test
            res = exc
        await client.close()
        await world.close()
        return res, servers, world

    return asyncio.run(go())


def test_honest_easy_path(small_db):
    res, servers, world = fetch(small_db, 3, 2)
    assert res.recovery_path == "easy"
    assert res.block.to_bytes(small_db.signature_len) == small_db.row(9)
    assert res.responding_servers == {1, 2, 3}
    assert res.bytes_sent == 3 * (small_db.r + 10)
    assert res.bytes_received == 3 * (small_db.s + 10)


def test_byzantine_hard_path(small_db):
    res, _, _ = fetch(small_db, 5, 1, {3: "byzantine"})
    assert res.recovery_path == "hard" and res.corrupted_servers == {3}
    assert res.block.to_bytes(small_db.signature_len) == small_db.row(9)


def test_too_many_byzantine(small_db):
    res, _, _ = fetch(small_db, 5, 1, {2: "byzantine", 4: "byzantine"})
    assert isinstance(res, Unrecoverable)


def test_threshold_boundary(small_db):
    res, _, _ = fetch(small_db, 3, 2, {2: "down"})
    assert isinstance(res, InsufficientResponses)


@pytest.mark.parametrize("down", [(), (5,), (1, 4), (1, 2, 3)])
def test_dropout_resilience(small_db, down):
    res, _, _ = fetch(small_db, 5, 1, {i: "down" for i in down}, beta=30)
    assert res.dropouts == set(down)
    assert res.block.to_bytes(small_db.signature_len) == small_db.row(30)


def test_bastions_only_see_exit_relays(small_db):
    res, servers, world = fetch(small_db, 3, 2)
    relays = {r.address for r in world.relays}
    peers = {e.peer for s in servers.values() for e in s.query_log}
    assert peers and peers <= relays and "client-0" not in peers
    # the three shares leave through three different exits
    assert len({e.peer for s in servers.values() for e in s.query_log}) == 3


def test_wrong_pubkey_is_authenticity_failure(small_db, provider):
    other = provider.sig_keygen(SeededRandom("not-the-psb")).public_key
    res, _, _ = fetch(small_db, 3, 1, pubkey=other)
    assert isinstance(res, AuthenticityFailure)


def test_expired_block(small_db):
    res, _, _ = fetch(small_db, 3, 1, now=EPOCH + 3601)
    assert isinstance(res, EpochExpired)


def test_token_accepted_by_gatekeeper(small_db, provider):
    tokens = []
    res, _, _ = fetch(small_db, 3, 1, keep=tokens)
    gk = Gatekeeper(provider, small_db.pubkey, SID, clock=lambda: EPOCH + 60)
    assert gk.handle_request(tokens[0]).reason is Reason.OK
    assert gk.handle_request(tokens[0]).reason is Reason.REPLAY


def test_unavailable_channel_still_yields_token(small_db):
    beta = next(b for b in range(small_db.r) if not small_db.block(b).record.availability)
    tokens = []
    res, _, _ = fetch(small_db, 3, 1, beta=beta, keep=tokens)
    assert res.block.record.availability is False
    assert tokens and tokens[0].puzzle.cell_key == db_key(small_db.config.grid, beta)


def test_context_validation(small_db):
    with pytest.raises(ValueError):
        ClientContext(db_key(small_db.config.grid, 0), small_db.config.grid, pir.PirConfig(3, 1, small_db.r, 3000),
                      ("a", "b"), small_db.pubkey, SID)
    with pytest.raises(ValueError):
        ClientContext(db_key(small_db.config.grid, 0), small_db.config.grid, pir.PirConfig(2, 1, small_db.r, 3000),
                      ("a", "b"), small_db.pubkey, b"short")
