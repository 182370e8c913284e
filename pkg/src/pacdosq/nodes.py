"""
Long-running node processes (relay, bastion, gatekeeper) and the small
JSON key files they read.
"""

from __future__ import annotations

import asyncio
import json
import logging
import signal
import time
from pathlib import Path
from typing import TextIO

from .bastion.database import SpectrumDatabase
from .bastion.server import BastionServer, Behavior
from .gatekeeper import Gatekeeper
from .onion.relay import Relay
from .onion.transport import TcpNetwork
from .pqc import KemKeyPair, SeededRandom, SigKeyPair, get_provider

log = logging.getLogger(__name__)

READY_LINE = "READY"


def save_kem_keys(path: str | Path, profile: str, keys: KemKeyPair) -> None:
    Path(path).write_text(json.dumps({
        "profile": profile,
        "kem_public_key": keys.public_key.hex(),
        "kem_secret_key": keys.secret_key.hex(),
    }))


def load_kem_keys(path: str | Path) -> tuple[str, KemKeyPair]:
    d = json.loads(Path(path).read_text())
    return d["profile"], KemKeyPair(bytes.fromhex(d["kem_public_key"]), bytes.fromhex(d["kem_secret_key"]))


def save_sig_keys(path: str | Path, profile: str, keys: SigKeyPair, public_only: bool = False) -> None:
    d = {"profile": profile, "sig_public_key": keys.public_key.hex()}
    if not public_only:
        d["sig_secret_key"] = keys.secret_key.hex()
    Path(path).write_text(json.dumps(d))


def load_sig_keys(path: str | Path) -> tuple[str, SigKeyPair]:
    d = json.loads(Path(path).read_text())
    return d["profile"], SigKeyPair(bytes.fromhex(d["sig_public_key"]), bytes.fromhex(d.get("sig_secret_key", "")))


async def _until_stopped(announce: str) -> None:
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGTERM, signal.SIGINT):
        try:
            loop.add_signal_handler(sig, stop.set)
        except (NotImplementedError, RuntimeError):
            pass
    print(f"{READY_LINE} {announce}", flush=True)
    await stop.wait()


async def run_relay(listen: str, keys_path: str | Path, seed: int = 0) -> None:
    profile, keys = load_kem_keys(keys_path)
    net = TcpNetwork()
    relay = Relay(listen, keys, get_provider(profile, seed), net, seed=seed)
    await net.serve_links(listen, relay.serve_link)
    try:
        await _until_stopped(f"relay {relay.relay_id.hex()} {listen}")
    finally:
        await relay.close()
        await net.shutdown()


async def _refresh_loop(server: BastionServer, keys_path: Path, epoch_length: float, seed: int) -> None:
    profile, keys = load_sig_keys(keys_path)
    provider = get_provider(profile, seed)
    while True:
        await asyncio.sleep(epoch_length)
        epoch = int(time.time())
        rng = SeededRandom(f"refresh|{seed}|{epoch}")
        # the rebuild runs off-loop; queries keep using the old matrix until the swap
        await asyncio.to_thread(server.refresh, epoch, (keys.public_key, keys.secret_key), rng, provider)
        log.info("psb %d moved to epoch %d", server.server_index, epoch)


async def run_psb(
    listen: str,
    db: SpectrumDatabase,
    server_index: int,
    behavior: str = "honest",
    sig_keys_path: str | Path | None = None,
    epoch_length: float = 0.0,
    seed: int = 0,
) -> None:
    server = BastionServer(server_index, db, Behavior(behavior))
    net = TcpNetwork()
    await net.serve_service(listen, server.handle)
    refresher = None
    if sig_keys_path is not None and epoch_length > 0:
        refresher = asyncio.get_running_loop().create_task(_refresh_loop(server, Path(sig_keys_path), epoch_length, seed))
    try:
        await _until_stopped(f"psb {server_index} {listen} r={db.r} s={db.s}")
    finally:
        if refresher is not None:
            refresher.cancel()
        await net.shutdown()


async def run_gatekeeper(
    listen: str,
    psb_pubkey_path: str | Path,
    service_id: bytes,
    validity_window: int = 3600,
    access_log: TextIO | None = None,
) -> None:
    profile, keys = load_sig_keys(psb_pubkey_path)
    gk = Gatekeeper(get_provider(profile), keys.public_key, service_id, validity_window, access_log)
    net = TcpNetwork()
    await net.serve_service(listen, gk.handle_wire)
    try:
        await _until_stopped(f"gatekeeper {listen}")
    finally:
        await net.shutdown()
