"""Command-line entry point: ``pacdosq <command> ...``."""

from __future__ import annotations

import argparse
import asyncio
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import nodes, pir
from .bastion.blocks import block_len
from .bastion.database import BastionConfig, SpectrumDatabase, db_setup
from .client import Client, ClientContext, RetrievalError
from .gatekeeper import request_access
from .onion.directory import Consensus, PsbDescriptor, RelayDescriptor, directory_publish, verify_consensus
from .onion.transport import TcpNetwork
from .pqc import PROFILES, TEST_DETERMINISTIC, SeededRandom, SystemRandom, get_provider
from .puzzle import PuzzleError, Token
from .spectrum import GridConfig, SpectrumKey

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def service_id_for(name: str) -> bytes:
    return hashlib.sha256(name.encode()).digest()[:16]


def _load_config(path: str | Path) -> dict:
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    return tomllib.loads(path.read_text())


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True), flush=True)


def _grid_from(cfg: dict) -> GridConfig:
    g = dict(cfg.get("grid", {}))
    if "rows" in g:
        rows = g.pop("rows")
        base = GridConfig.for_rows(rows, g.pop("channels", 4), g.pop("slots", 4))
        return GridConfig(base.gx, base.gy, base.channels, base.slots, **g)
    return GridConfig(**g)


# ----------------------------------------------------------------- keys / directory

def cmd_keygen(args: argparse.Namespace) -> int:
    provider = get_provider(args.profile, args.seed)
    rng = SeededRandom(f"keygen|{args.seed}|{args.out}") if args.profile == TEST_DETERMINISTIC else SystemRandom()
    if args.kind == "kem":
        nodes.save_kem_keys(args.out, args.profile, provider.kem_keygen(rng))
    else:
        keys = provider.sig_keygen(rng)
        nodes.save_sig_keys(args.out, args.profile, keys)
        if args.public_out:
            nodes.save_sig_keys(args.public_out, args.profile, keys, public_only=True)
    return 0


def cmd_directory_publish(args: argparse.Namespace) -> int:
    profile, authority = nodes.load_sig_keys(args.authority_key)
    provider = get_provider(profile)
    relays = []
    for item in args.relay:
        addr, _, keyfile = item.partition("=")
        _, kem = nodes.load_kem_keys(keyfile)
        relays.append(RelayDescriptor.create(addr, kem.public_key))
    psbs = []
    if args.psb:
        _, psb_keys = nodes.load_sig_keys(args.psb_pubkey)
        for item in args.psb:
            idx, _, addr = item.partition("=")
            psbs.append(PsbDescriptor(int(idx), addr, psb_keys.public_key))
    consensus = directory_publish(provider, authority.secret_key, relays, args.issued_at or int(time.time()), psbs)
    Path(args.out).write_bytes(consensus.to_bytes())
    _emit({"consensus": args.out, "relays": len(relays), "psbs": len(psbs)})
    return 0


# ----------------------------------------------------------------- servers

def cmd_relay(args: argparse.Namespace) -> int:
    asyncio.run(nodes.run_relay(args.listen, args.keys, args.seed))
    return 0


def cmd_psb_setup(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    profile, keys = nodes.load_sig_keys(args.sig_key)
    provider = get_provider(profile, args.seed)
    config = BastionConfig(_grid_from(cfg), kappa=cfg.get("kappa", 14), theta=cfg.get("theta", 1),
                           validity_window=cfg.get("validity_window", 3600))
    epoch = args.epoch if args.epoch is not None else int(time.time())
    t0 = time.perf_counter()
    db = db_setup(config, epoch, (keys.public_key, keys.secret_key), SeededRandom(f"db|{args.seed}"), provider)
    db.save(args.out)
    _emit({"db": args.out, "r": db.r, "s": db.s, "epoch": epoch, "setup_ms": (time.perf_counter() - t0) * 1e3})
    return 0


def cmd_psb_serve(args: argparse.Namespace) -> int:
    db = SpectrumDatabase.load(args.db)
    asyncio.run(nodes.run_psb(args.listen, db, args.index, args.behavior, args.sig_key, args.epoch_length, args.seed))
    return 0


def cmd_gatekeeper(args: argparse.Namespace) -> int:
    log_fh = open(args.access_log, "a") if args.access_log else None
    try:
        asyncio.run(nodes.run_gatekeeper(args.listen, args.psb_pubkey, service_id_for(args.service),
                                         args.validity_window, log_fh))
    finally:
        if log_fh:
            log_fh.close()
    return 0


# ----------------------------------------------------------------- client

def _client_from(cfg: dict, base: Path) -> tuple[Client, dict]:
    def rel(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    profile = cfg.get("profile", TEST_DETERMINISTIC)
    provider = get_provider(profile, cfg.get("seed", 0))
    consensus = Consensus.from_bytes(rel(cfg["consensus"]).read_bytes())
    _, authority = nodes.load_sig_keys(rel(cfg["authority_pubkey"]))
    verify_consensus(provider, authority.public_key, consensus)
    grid = _grid_from(cfg)
    if "key" in cfg:
        key = SpectrumKey(*cfg["key"])
    else:
        pos = cfg["position"]
        key = grid.quantize(pos["lx"], pos["ly"], pos["ch"], pos.get("timestamp", time.time()), pos.get("epoch_start", 0.0))
    psbs = sorted(consensus.psbs, key=lambda p: p.server_index)
    ell, t = cfg.get("ell", len(psbs)), cfg.get("t", 1)
    if len(psbs) != ell:
        raise SystemExit(f"consensus lists {len(psbs)} PSBs, config expects {ell}")
    sig_len = provider.constants.signature_len
    s = block_len(sig_len, cfg.get("theta", 1))
    ctx = ClientContext(
        key=key, grid=grid, pir_config=pir.PirConfig(ell, t, grid.rows, s),
        psb_endpoints=tuple(p.address for p in psbs), psb_pubkey=psbs[0].sig_public_key,
        service_id=service_id_for(cfg.get("service", "spectrum-service")), signature_len=sig_len,
        validity_window=cfg.get("validity_window", 3600), timeout=cfg.get("timeout", 2.0),
    )
    rng = SeededRandom(f"client|{cfg['seed']}") if "seed" in cfg else SystemRandom()
    client = Client(ctx, provider, TcpNetwork(), consensus, cfg.get("address", "client"), rng,
                    path_seed=cfg.get("seed", int(time.time_ns() & 0xFFFFFFFF)))
    return client, cfg


async def _client_run(args: argparse.Namespace) -> int:
    cfg_path = Path(args.config)
    client, cfg = _client_from(_load_config(cfg_path), cfg_path.parent)
    token_path = Path(args.token or cfg.get("token_file", cfg_path.with_suffix(".token")))
    action = args.action
    status = 0
    try:
        if action == "request-access":
            token = Token.from_bytes(token_path.read_bytes())
        else:
            now = time.time()
            t0 = time.perf_counter()
            res = await client.fetch_block(now)
            rec = {
                "event": "fetch",
                "beta": client.ctx.beta,
                "recovery_path": res.recovery_path,
                "responding": sorted(res.responding_servers),
                "corrupted": sorted(res.corrupted_servers),
                "dropouts": sorted(res.dropouts),
                "available": res.block.record.availability,
                "max_eirp_dbm": res.block.record.max_eirp_dbm,
                "kappa": res.block.puzzle.kappa,
                "epoch": res.block.puzzle.epoch,
                "bytes_sent": res.bytes_sent,
                "bytes_received": res.bytes_received,
                "ms": (time.perf_counter() - t0) * 1e3,
            }
            _emit(rec)
            if action == "fetch":
                return 0
            t1 = time.perf_counter()
            token = client.acquire_token(res, now)
            token_path.write_bytes(token.to_bytes())
            _emit({"event": "solve", "token": str(token_path), "attempts": token.solution.attempts,
                   "ms": (time.perf_counter() - t1) * 1e3})
            if action == "solve":
                return 0
        gk = cfg.get("gatekeeper")
        if not gk:
            raise SystemExit("config has no gatekeeper address")
        decision = await request_access(client.network, client.address, gk, token)
        _emit({"event": "access", "granted": decision.granted, "reason": decision.reason.value,
               "token_digest": decision.token_digest.hex()})
        status = 0 if decision.granted else 3
    except (RetrievalError, PuzzleError) as exc:
        _emit({"event": "error", "error": type(exc).__name__, "detail": str(exc)})
        status = 2
    finally:
        await client.close()
    return status


def cmd_client(args: argparse.Namespace) -> int:
    return asyncio.run(_client_run(args))


# ----------------------------------------------------------------- harness

def cmd_harness_run(args: argparse.Namespace) -> int:
    from .harness import load_spec, run_experiment, write_csv

    spec = load_spec(args.spec)
    if args.mode:
        spec = type(spec).from_dict({**spec.to_dict(), "mode": args.mode, "run_id": spec.run_id})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(spec)
    csv_path = out / f"{spec.run_id}.csv"
    write_csv(result.rows, csv_path)
    _emit({"run_id": spec.run_id, "csv": str(csv_path), "rows": len(result.rows), "failures": result.failures})
    return 1 if spec.must_succeed and result.failures else 0


def cmd_harness_report(args: argparse.Namespace) -> int:
    from .harness import read_csv, scaling_report

    checks = scaling_report([read_csv(p) for p in args.csv])
    for c in checks:
        _emit(c.as_dict())
    return 1 if any(c.within is False for c in checks) else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pacdosq", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", help="generate a KEM or signature key file")
    k.add_argument("kind", choices=["kem", "sig"])
    k.add_argument("--out", required=True)
    k.add_argument("--public-out", help="also write a public-only copy (sig keys)")
    k.add_argument("--profile", choices=sorted(PROFILES), default=TEST_DETERMINISTIC)
    k.add_argument("--seed", type=int, default=0)
    k.set_defaults(func=cmd_keygen)

    d = sub.add_parser("directory", help="directory authority")
    dsub = d.add_subparsers(dest="directory_command", required=True)
    dp = dsub.add_parser("publish", help="sign a consensus")
    dp.add_argument("--authority-key", required=True)
    dp.add_argument("--relay", action="append", default=[], metavar="ADDR=KEYFILE")
    dp.add_argument("--psb", action="append", default=[], metavar="INDEX=ADDR")
    dp.add_argument("--psb-pubkey")
    dp.add_argument("--issued-at", type=int)
    dp.add_argument("--out", required=True)
    dp.set_defaults(func=cmd_directory_publish)

    r = sub.add_parser("relay", help="run an onion relay")
    r.add_argument("--listen", required=True)
    r.add_argument("--keys", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_relay)

    ps = sub.add_parser("psb", help="bastion database and server")
    psub = ps.add_subparsers(dest="psb_command", required=True)
    su = psub.add_parser("setup", help="build a signed database file")
    su.add_argument("--config", required=True)
    su.add_argument("--sig-key", required=True)
    su.add_argument("--seed", type=int, default=0)
    su.add_argument("--epoch", type=int)
    su.add_argument("--out", required=True)
    su.set_defaults(func=cmd_psb_setup)
    sv = psub.add_parser("serve", help="answer PIR queries")
    sv.add_argument("--listen", required=True)
    sv.add_argument("--db", required=True)
    sv.add_argument("--index", type=int, required=True)
    sv.add_argument("--behavior", choices=["honest", "byzantine"], default="honest")
    sv.add_argument("--sig-key", help="secret key file; enables periodic refresh")
    sv.add_argument("--epoch-length", type=float, default=0.0, help="seconds between refreshes (0 = never)")
    sv.add_argument("--seed", type=int, default=0)
    sv.set_defaults(func=cmd_psb_serve)

    g = sub.add_parser("gatekeeper", help="run the token-checking service")
    g.add_argument("--listen", required=True)
    g.add_argument("--psb-pubkey", required=True)
    g.add_argument("--service", default="spectrum-service")
    g.add_argument("--validity-window", type=int, default=3600)
    g.add_argument("--access-log")
    g.set_defaults(func=cmd_gatekeeper)

    c = sub.add_parser("client", help="retrieve, solve and present a token")
    c.add_argument("action", choices=["fetch", "solve", "request-access", "end-to-end"])
    c.add_argument("--config", required=True)
    c.add_argument("--token", help="token file (default: <config>.token)")
    c.set_defaults(func=cmd_client)

    h = sub.add_parser("harness", help="experiments")
    hsub = h.add_subparsers(dest="harness_command", required=True)
    hr = hsub.add_parser("run", help="run one experiment spec")
    hr.add_argument("--spec", required=True)
    hr.add_argument("--out", required=True)
    hr.add_argument("--mode", choices=["sim", "tcp"])
    hr.set_defaults(func=cmd_harness_run)
    hp = hsub.add_parser("report", help="ratio table over several run CSVs")
    hp.add_argument("csv", nargs="+")
    hp.set_defaults(func=cmd_harness_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
