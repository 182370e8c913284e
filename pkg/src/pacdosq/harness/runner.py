"""
Experiment runner.

Simulation mode puts every node in one asyncio loop on a ``SimNetwork``;
TCP mode launches relays, bastions and the gatekeeper as child processes on
localhost and drives the clients from this process. Clients are closed-loop:
each runs fetch, solve, request-access ``rounds`` times back to back.
"""

from __future__ import annotations

import asyncio
import contextlib
import csv
import io
import logging
import os
import random
import socket
import subprocess
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .. import pir
from ..bastion.database import BastionConfig, SpectrumDatabase, db_setup
from ..bastion.server import BastionServer, Behavior
from ..client import SERVICE_FRAME_OVERHEAD, Client, ClientContext, RetrievalError
from ..gatekeeper import Gatekeeper, request_access
from ..nodes import READY_LINE, save_kem_keys, save_sig_keys
from ..onion.directory import Consensus, PsbDescriptor, RelayDescriptor, directory_publish
from ..onion.relay import Relay
from ..onion.transport import LatencyModel, SimNetwork, TcpNetwork
from ..pqc import Provider, SeededRandom, SigKeyPair, get_provider
from ..puzzle import PuzzleError
from ..spectrum import GridConfig, SpectrumKey
from .spec import SIM_EPOCH, ExperimentSpec

log = logging.getLogger(__name__)

PHASES = ("setup", "circuit", "query", "respond", "reconstruct", "authenticate", "pow", "verify", "e2e")
TIMING_COLUMNS = ("value_ms",)
CIRCUIT_HOPS = 3


class LaunchError(RuntimeError):
    pass


@dataclass
class MeasurementRow:
    run_id: str
    client: int
    round: int
    phase: str
    value_ms: float
    bytes_sent: int = 0
    bytes_received: int = 0
    db_rows: int = 0
    ell: int = 0
    t: int = 0
    kappa: int = 0
    beta: int = -1
    available: str = ""
    recovery_path: str = ""
    corrupted: str = ""
    dropouts: str = ""
    reason: str = ""

    def sort_key(self) -> tuple:
        return (self.run_id, self.client, self.round, PHASES.index(self.phase) if self.phase in PHASES else 99)


CSV_COLUMNS = [f.name for f in fields(MeasurementRow)]


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[MeasurementRow]
    failures: list[str] = field(default_factory=list)
    psb_respond_ms: dict[int, list[float]] = field(default_factory=dict)
    psb_peers: set[str] = field(default_factory=set)
    relay_addresses: set[str] = field(default_factory=set)
    client_addresses: set[str] = field(default_factory=set)
    gatekeeper_verify_ms: list[float] = field(default_factory=list)
    setup_ms: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures

    def phase(self, name: str) -> list[MeasurementRow]:
        return [r for r in self.rows if r.phase == name]

    def non_timing(self) -> list[tuple]:
        return [tuple(v for k, v in asdict(r).items() if k not in TIMING_COLUMNS) for r in self.rows]


def _fmt(servers: set[int]) -> str:
    return ";".join(str(s) for s in sorted(servers))


def write_csv(rows: list[MeasurementRow], out: str | Path | io.TextIOBase) -> None:
    def emit(fh) -> None:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))

    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            emit(fh)
    else:
        emit(out)


def read_csv(path: str | Path) -> list[MeasurementRow]:
    out = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            kw = {}
            for f in fields(MeasurementRow):
                v = d[f.name]
                kw[f.name] = float(v) if f.type in ("float", float) else int(v) if f.type in ("int", int) else v
            out.append(MeasurementRow(**kw))
    return out


def latency_injection(model: LatencyModel) -> SimNetwork:
    """A simulated network whose every link delays frames per ``model``."""
    return SimNetwork(model)


def expected_network_ms(model: LatencyModel, build_circuit: bool = True, hops: int = CIRCUIT_HOPS) -> float:
    """
    Configured network delay on one client's critical path: telescoping
    build (hop k costs a k-link round trip), one request over the circuit,
    the exit-to-bastion exchange, and the token exchange with the gatekeeper.
    """
    link_rtt = model.forward_ms + model.backward
    total = hops * link_rtt + 2 * model.service_ms + 2 * model.service_ms
    if build_circuit:
        total += sum(k * link_rtt for k in range(1, hops + 1))
    return total


def _grid_for(spec: ExperimentSpec) -> GridConfig:
    return GridConfig.for_rows(spec.db_rows, channels=spec.channels, slots=spec.slots)


def _client_keys(spec: ExperimentSpec, grid: GridConfig) -> list[SpectrumKey]:
    rng = random.Random(f"clients|{spec.seed}")
    return [
        SpectrumKey(rng.randrange(grid.gx), rng.randrange(grid.gy), rng.randrange(grid.channels), rng.randrange(grid.slots))
        for _ in range(spec.clients)
    ]


@dataclass
class _World:
    spec: ExperimentSpec
    provider: Provider
    network: object
    consensus: Consensus
    db: SpectrumDatabase
    psb_pubkey: bytes
    psb_addresses: list[str]
    gatekeeper_address: str
    epoch: int
    clock: object


def _build_database(spec: ExperimentSpec, provider: Provider, epoch: int) -> tuple[SpectrumDatabase, tuple[bytes, bytes], float]:
    keys = provider.sig_keygen(SeededRandom(f"psb-sig|{spec.seed}"))
    config = BastionConfig(_grid_for(spec), kappa=spec.kappa, validity_window=spec.validity_window)
    t0 = time.perf_counter()
    db = db_setup(config, epoch, (keys.public_key, keys.secret_key), SeededRandom(f"db|{spec.seed}"), provider)
    return db, (keys.public_key, keys.secret_key), (time.perf_counter() - t0) * 1e3


async def _client_loop(world: _World, index: int, key: SpectrumKey, result: ExperimentResult) -> None:
    spec = world.spec
    ctx = ClientContext(
        key=key,
        grid=_grid_for(spec),
        pir_config=pir.PirConfig(spec.ell, spec.t, world.db.r, world.db.s),
        psb_endpoints=tuple(world.psb_addresses),
        psb_pubkey=world.psb_pubkey,
        service_id=spec.service_id,
        signature_len=world.provider.constants.signature_len,
        validity_window=spec.validity_window,
        timeout=spec.timeout,
    )
    address = f"client-{index}"
    result.client_addresses.add(address)
    client = Client(
        ctx, world.provider, world.network, world.consensus, address,
        SeededRandom(f"client|{spec.seed}|{index}"), path_seed=spec.seed * 100_003 + index,
        build_timeout=spec.build_timeout,
    )
    base = dict(run_id=spec.run_id, client=index, db_rows=spec.db_rows, ell=spec.ell, t=spec.t, kappa=spec.kappa, beta=ctx.beta)
    try:
        for rnd in range(spec.rounds):
            now = world.clock()
            t0 = time.perf_counter()
            try:
                res = await client.fetch_block(now)
            except RetrievalError as exc:
                result.failures.append(f"client {index} round {rnd}: {type(exc).__name__}: {exc}")
                result.rows.append(MeasurementRow(**base, round=rnd, phase="e2e",
                                                  value_ms=(time.perf_counter() - t0) * 1e3,
                                                  reason=type(exc).__name__))
                continue
            t1 = time.perf_counter()
            try:
                token = client.acquire_token(res, now)
            except (RetrievalError, PuzzleError) as exc:
                result.failures.append(f"client {index} round {rnd}: {type(exc).__name__}: {exc}")
                continue
            t2 = time.perf_counter()
            decision = await request_access(world.network, address, world.gatekeeper_address, token, spec.timeout + 5)
            t3 = time.perf_counter()
            if not decision.granted:
                result.failures.append(f"client {index} round {rnd}: access denied ({decision.reason.value})")
            common = dict(base, round=rnd, recovery_path=res.recovery_path, corrupted=_fmt(res.corrupted_servers),
                          dropouts=_fmt(res.dropouts), available=str(res.block.record.availability).lower())
            tm = res.timings_ms
            token_bytes = len(token.to_bytes()) + SERVICE_FRAME_OVERHEAD
            result.rows += [
                MeasurementRow(**common, phase="circuit", value_ms=tm["circuit"]),
                MeasurementRow(**common, phase="query", value_ms=tm["query"]),
                MeasurementRow(**common, phase="respond", value_ms=tm["respond"],
                               bytes_sent=res.bytes_sent, bytes_received=res.bytes_received),
                MeasurementRow(**common, phase="reconstruct", value_ms=tm["reconstruct"]),
                MeasurementRow(**common, phase="authenticate", value_ms=tm["verify"]),
                MeasurementRow(**common, phase="pow", value_ms=(t2 - t1) * 1e3),
                MeasurementRow(**common, phase="verify", value_ms=(t3 - t2) * 1e3, reason=decision.reason.value,
                               bytes_sent=token_bytes),
                MeasurementRow(**common, phase="e2e", value_ms=(t3 - t0) * 1e3, reason=decision.reason.value,
                               bytes_sent=res.bytes_sent + token_bytes, bytes_received=res.bytes_received),
            ]
    finally:
        await client.close()


async def _drive_clients(world: _World, result: ExperimentResult) -> None:
    keys = _client_keys(world.spec, _grid_for(world.spec))
    await asyncio.gather(*(_client_loop(world, i, k, result) for i, k in enumerate(keys)))


def _finish(result: ExperimentResult) -> ExperimentResult:
    result.rows.sort(key=MeasurementRow.sort_key)
    result.failures.sort()
    return result


async def _run_sim(spec: ExperimentSpec) -> ExperimentResult:
    provider = get_provider(spec.profile, spec.seed)
    epoch = SIM_EPOCH if spec.epoch is None else spec.epoch
    db, (psb_pk, _), setup_ms = _build_database(spec, provider, epoch)
    result = ExperimentResult(spec, [], setup_ms=setup_ms)
    result.rows.append(MeasurementRow(spec.run_id, -1, 0, "setup", setup_ms, db_rows=spec.db_rows,
                                      ell=spec.ell, t=spec.t, kappa=spec.kappa))
    net = latency_injection(spec.latency.model(spec.seed))
    # protocol time is virtual in simulation so tokens and decisions are reproducible
    clock = lambda: float(epoch + 60)  # noqa: E731

    relays = []
    relay_rng = SeededRandom(f"relay-keys|{spec.seed}")
    for i in range(spec.relay_count):
        r = Relay(f"relay-{i}", provider.kem_keygen(relay_rng), provider, net, seed=spec.seed * 1000 + i,
                  egress_timeout=spec.timeout)
        net.listen(r.address, r.serve_link)
        relays.append(r)
        result.relay_addresses.add(r.address)

    servers: dict[int, BastionServer] = {}
    psb_addresses = []
    for i in range(1, spec.ell + 1):
        addr = f"psb-{i}"
        psb_addresses.append(addr)
        behavior = spec.behavior_of(i)
        srv = BastionServer(i, db, Behavior(behavior), log_queries=True)
        servers[i] = srv
        if behavior != "down":
            net.register_service(addr, srv.handle)

    gk = Gatekeeper(provider, psb_pk, spec.service_id, spec.validity_window, clock=clock)

    def gk_handler(message: bytes, peer: str) -> bytes:
        t0 = time.perf_counter()
        out = gk.handle_wire(message, peer)
        result.gatekeeper_verify_ms.append((time.perf_counter() - t0) * 1e3)
        return out

    net.register_service("gatekeeper", gk_handler)

    authority = provider.sig_keygen(SeededRandom(f"authority|{spec.seed}"))
    consensus = directory_publish(
        provider, authority.secret_key, [r.descriptor for r in relays], epoch,
        [PsbDescriptor(i, a, psb_pk) for i, a in enumerate(psb_addresses, start=1)],
    )
    world = _World(spec, provider, net, consensus, db, psb_pk, psb_addresses, "gatekeeper", epoch, clock)
    try:
        await _drive_clients(world, result)
    finally:
        for r in relays:
            await r.close()
        await net.shutdown()
    for i, srv in servers.items():
        result.psb_respond_ms[i] = list(srv.respond_ms)
        result.psb_peers.update(e.peer for e in srv.query_log)
    return _finish(result)


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _spawn(args: list[str], log_path: Path) -> subprocess.Popen:
    fh = open(log_path, "w")
    env = dict(os.environ, PYTHONUNBUFFERED="1")
    return subprocess.Popen([sys.executable, "-m", "pacdosq.cli", *args], stdout=fh, stderr=subprocess.STDOUT, env=env)


def _wait_ready(procs: list[tuple[subprocess.Popen, Path]], deadline: float) -> None:
    pending = list(procs)
    while pending:
        for proc, log_path in list(pending):
            if proc.poll() is not None:
                raise LaunchError(f"{log_path.stem} exited with {proc.returncode}:\n{log_path.read_text()[-2000:]}")
            if READY_LINE in log_path.read_text():
                pending.remove((proc, log_path))
        if pending and time.monotonic() > deadline:
            names = ", ".join(p[1].stem for p in pending)
            raise LaunchError(f"timed out waiting for {names}")
        time.sleep(0.05)


async def _run_tcp(spec: ExperimentSpec) -> ExperimentResult:
    provider = get_provider(spec.profile, spec.seed)
    epoch = int(time.time()) - 1 if spec.epoch is None else spec.epoch
    db, (psb_pk, psb_sk), setup_ms = _build_database(spec, provider, epoch)
    result = ExperimentResult(spec, [], setup_ms=setup_ms)
    result.rows.append(MeasurementRow(spec.run_id, -1, 0, "setup", setup_ms, db_rows=spec.db_rows,
                                      ell=spec.ell, t=spec.t, kappa=spec.kappa))
    procs: list[tuple[subprocess.Popen, Path]] = []
    with tempfile.TemporaryDirectory(prefix="pacdosq-") as tmp:
        work = Path(tmp)
        db_path = work / "psb.db"
        db.save(db_path)
        psb_key_path = work / "psb.pub.json"
        save_sig_keys(psb_key_path, spec.profile, SigKeyPair(psb_pk, b""), public_only=True)
        relays = []
        relay_rng = SeededRandom(f"relay-keys|{spec.seed}")
        try:
            for i in range(spec.relay_count):
                addr = f"127.0.0.1:{_free_port()}"
                keys = provider.kem_keygen(relay_rng)
                kp = work / f"relay-{i}.json"
                save_kem_keys(kp, spec.profile, keys)
                relays.append(RelayDescriptor.create(addr, keys.public_key))
                result.relay_addresses.add(addr)
                procs.append((_spawn(["relay", "--listen", addr, "--keys", str(kp), "--seed", str(i)], work / f"relay-{i}.log"),
                              work / f"relay-{i}.log"))
            psb_addresses = []
            for i in range(1, spec.ell + 1):
                addr = f"127.0.0.1:{_free_port()}"
                psb_addresses.append(addr)
                behavior = spec.behavior_of(i)
                if behavior == "down":
                    continue
                lp = work / f"psb-{i}.log"
                procs.append((_spawn(["psb", "serve", "--listen", addr, "--db", str(db_path), "--index", str(i),
                                      "--behavior", behavior], lp), lp))
            gk_addr = f"127.0.0.1:{_free_port()}"
            lp = work / "gatekeeper.log"
            procs.append((_spawn(["gatekeeper", "--listen", gk_addr, "--psb-pubkey", str(psb_key_path),
                                  "--service", spec.service, "--validity-window", str(spec.validity_window),
                                  "--access-log", str(work / "access.jsonl")], lp), lp))
            _wait_ready(procs, time.monotonic() + 30)

            authority = provider.sig_keygen(SeededRandom(f"authority|{spec.seed}"))
            consensus = directory_publish(
                provider, authority.secret_key, relays, epoch,
                [PsbDescriptor(i, a, psb_pk) for i, a in enumerate(psb_addresses, start=1)],
            )
            net = TcpNetwork()
            world = _World(spec, provider, net, consensus, db, psb_pk, psb_addresses, gk_addr, epoch, time.time)
            await _drive_clients(world, result)
        finally:
            for proc, _ in procs:
                if proc.poll() is None:
                    proc.terminate()
            for proc, _ in procs:
                with contextlib.suppress(subprocess.TimeoutExpired):
                    proc.wait(timeout=5)
                if proc.poll() is None:
                    proc.kill()
    return _finish(result)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    runner = _run_sim if spec.mode == "sim" else _run_tcp
    return asyncio.run(runner(spec))
