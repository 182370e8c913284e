import threading

import numpy as np
import pytest

from pacdosq import pir
from pacdosq.bastion.blocks import BLOCK_LEN, RECORD_LEN, Block, SpectrumRecord, block_len
from pacdosq.bastion.database import BastionConfig, SpectrumDatabase, db_setup, refresh_epoch
from pacdosq.bastion.server import BastionServer
from pacdosq.pqc import SeededRandom
from pacdosq.puzzle import puzzle_gen, sign_puzzle
from pacdosq.spectrum import GridConfig, SpectrumKey, db_index, db_key

EPOCH = 1_700_000_000


def test_db_index_examples():
    grid = GridConfig(4, 3, 10, 24)
    assert db_index(grid, SpectrumKey(0, 0, 0, 0)) == 0
    assert db_index(grid, SpectrumKey(2, 1, 3, 5)) == 1517
    with pytest.raises(ValueError):
        db_index(grid, SpectrumKey(0, 0, 10, 0))
    with pytest.raises(ValueError):
        db_key(grid, grid.rows)


def test_db_index_bijective():
    grid = GridConfig(5, 3, 4, 6)
    seen = set()
    for gy in range(3):
        for gx in range(5):
            for ch in range(4):
                for ts in range(6):
                    key = SpectrumKey(gx, gy, ch, ts)
                    beta = db_index(grid, key)
                    assert 0 <= beta < grid.rows and db_key(grid, beta) == key
                    seen.add(beta)
    assert len(seen) == grid.rows


def test_quantize():
    grid = GridConfig(4, 4, 2, 24, cell_size=50.0)
    assert grid.quantize(120.0, 10.0, 1, 7200.0) == SpectrumKey(2, 0, 1, 2)
    with pytest.raises(ValueError):
        grid.quantize(-1.0, 0.0, 0, 0.0)


def test_for_rows():
    for rows in (1024, 4096, 1 << 15, 1 << 17):
        assert GridConfig.for_rows(rows).rows == rows


def test_block_layout(provider, sig_keys):
    assert block_len(2420) == BLOCK_LEN == 3000
    key = SpectrumKey(1, 1, 1, 1)
    pz = puzzle_gen(14, EPOCH, key, SeededRandom(0))
    sigma = sign_puzzle(provider, sig_keys.secret_key, pz)
    rec = SpectrumRecord(key, True, 23.5, b"meta")
    assert len(rec.to_bytes()) == RECORD_LEN
    blk = Block(rec, ((pz, sigma),))
    raw = blk.to_bytes(2420)
    assert len(raw) == 3000
    assert Block.from_bytes(raw, 2420) == blk


def test_setup_audit_and_size(small_db, provider):
    assert small_db.r == 64 and small_db.s == 3000
    assert small_db.nbytes == 64 * 3000
    assert small_db.audit(provider) == []
    for beta in (0, 17, 63):
        blk = small_db.block(beta)
        assert blk.record.key == db_key(small_db.config.grid, beta)
        assert blk.puzzle.epoch == EPOCH and blk.puzzle.kappa == 8


def test_setup_is_deterministic(provider, sig_keys, small_db):
    again = db_setup(small_db.config, EPOCH, (sig_keys.public_key, sig_keys.secret_key), SeededRandom("fixture-db"), provider)
    assert np.array_equal(again.matrix, small_db.matrix)


def test_audit_catches_tampering(small_db, provider):
    m = np.array(small_db.matrix)
    m[5, RECORD_LEN + 20] ^= 1
    bad = SpectrumDatabase(small_db.config, small_db.epoch, small_db.pubkey, small_db.signature_len, m)
    assert bad.audit(provider) == [5]


def test_save_load(tmp_path, small_db):
    path = tmp_path / "db.bin"
    small_db.save(path)
    size = path.stat().st_size
    header = size - small_db.r * small_db.s
    assert path.read_bytes()[:4] == b"PSB1"
    assert header == 4 + 2 + 4 + 4 + 8 + 2 + len(small_db.pubkey)
    for mmap in (True, False):
        back = SpectrumDatabase.load(path, mmap=mmap)
        assert back.epoch == small_db.epoch and back.config == small_db.config
        assert np.array_equal(back.matrix, small_db.matrix)


def test_refresh_keeps_records(small_db, provider, sig_keys):
    new = refresh_epoch(small_db, EPOCH + 3600, (sig_keys.public_key, sig_keys.secret_key), SeededRandom(9), provider)
    assert np.array_equal(new.matrix[:, :RECORD_LEN], small_db.matrix[:, :RECORD_LEN])
    assert new.audit(provider) == []
    assert new.block(3).puzzle.epoch == EPOCH + 3600


def test_server_handles_queries(small_db):
    srv = BastionServer(1, small_db)
    cfg = pir.PirConfig(3, 1, small_db.r, small_db.s)
    qs = pir.client_query(cfg, 10, SeededRandom(1))
    servers = [BastionServer(i, small_db) for i in (1, 2, 3)]
    responses = [pir.ResponseShare.from_bytes(s.handle(q.to_bytes())) for s, q in zip(servers, qs)]
    assert bytes(pir.easy_recover(cfg, responses)) == small_db.row(10)
    assert pir.is_error_frame(srv.handle(b"\x00garbage"))
    short = pir.QueryShare(1, np.zeros(small_db.r - 1, dtype=np.uint8)).to_bytes()
    assert pir.is_error_frame(srv.handle(short))


def test_byzantine_server_is_reproducible(small_db):
    cfg = pir.PirConfig(5, 1, small_db.r, small_db.s)
    q = pir.client_query(cfg, 2, SeededRandom(3))[0]
    a = BastionServer(1, small_db, "byzantine").handle(q.to_bytes())
    b = BastionServer(1, small_db, "byzantine").handle(q.to_bytes())
    honest = BastionServer(1, small_db).handle(q.to_bytes())
    assert a == b != honest


def test_refresh_is_atomic_for_concurrent_queries(small_db, provider, sig_keys):
    srv = BastionServer(1, small_db)
    beta = 7
    unit = np.zeros(small_db.r, dtype=np.uint8)
    unit[beta] = 1
    query = pir.QueryShare(1, unit).to_bytes()
    stop = threading.Event()
    seen, errors = set(), []

    def reader():
        while not stop.is_set():
            words = pir.ResponseShare.from_bytes(srv.handle(query)).words
            blk = Block.from_bytes(bytes(words), small_db.signature_len)
            if not provider.sig_verify(sig_keys.public_key, blk.puzzle.binding(), blk.sigma):
                errors.append(blk.puzzle.epoch)
            seen.add(blk.puzzle.epoch)

    threads = [threading.Thread(target=reader) for _ in range(3)]
    for th in threads:
        th.start()
    keys = (sig_keys.public_key, sig_keys.secret_key)
    for i in range(1, 4):
        srv.refresh(EPOCH + i * 3600, keys, SeededRandom(i), provider)
    stop.set()
    for th in threads:
        th.join()
    assert not errors
    assert srv.db.epoch == EPOCH + 3 * 3600
    assert seen <= {EPOCH + i * 3600 for i in range(4)}


def test_setup_time_grows_with_rows(provider, sig_keys):
    import time

    keys = (sig_keys.public_key, sig_keys.secret_key)
    times = []
    for rows in (64, 1024):
        cfg = BastionConfig(GridConfig.for_rows(rows), kappa=8)
        t0 = time.perf_counter()
        db_setup(cfg, EPOCH, keys, SeededRandom(0), provider)
        times.append(time.perf_counter() - t0)
    assert times[1] > times[0]


def test_config_bounds():
    with pytest.raises(ValueError):
        BastionConfig(GridConfig(1, 1, 1, 1), kappa=65)
    with pytest.raises(ValueError):
        BastionConfig(GridConfig(1, 1, 1, 1), theta=0)
