"""Experiment description and its TOML/JSON loader."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .. import gf256
from ..onion.transport import LatencyModel
from ..pqc import PROFILES, TEST_DETERMINISTIC

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SIM_EPOCH = 1_700_000_000
BEHAVIORS = ("down", "byzantine")


@dataclass(frozen=True)
class FaultSpec:
    server: int
    behavior: str

    def __post_init__(self) -> None:
        if self.behavior not in BEHAVIORS:
            raise ValueError(f"fault behavior must be one of {BEHAVIORS}, got {self.behavior!r}")


@dataclass(frozen=True)
class LatencySpec:
    """Per-link one-way delays in ms. ``rtt_ms`` overrides forward/backward symmetrically."""

    forward_ms: float = 0.0
    backward_ms: float | None = None
    jitter_ms: float = 0.0
    service_ms: float = 0.0
    rtt_ms: float | None = None

    def model(self, seed: int) -> LatencyModel:
        if self.rtt_ms is not None:
            m = LatencyModel.from_rtt(self.rtt_ms, jitter_ms=self.jitter_ms, seed=seed)
            return LatencyModel(m.forward_ms, m.backward_ms, m.jitter_ms, self.service_ms, seed)
        return LatencyModel(self.forward_ms, self.backward_ms, self.jitter_ms, self.service_ms, seed)


@dataclass(frozen=True)
class ExperimentSpec:
    ell: int = 3
    t: int = 2
    db_rows: int = 1024
    clients: int = 1
    rounds: int = 1
    kappa: int = 14
    channels: int = 4
    slots: int = 4
    relays: int = 0
    latency: LatencySpec = field(default_factory=LatencySpec)
    faults: tuple[FaultSpec, ...] = ()
    seed: int = 0
    profile: str = TEST_DETERMINISTIC
    mode: str = "sim"
    epoch: int | None = None
    validity_window: int = 3600
    timeout: float = 2.0
    build_timeout: float = 5.0
    must_succeed: bool = True
    service: str = "spectrum-service"
    run_id: str = ""

    def __post_init__(self) -> None:
        if self.mode not in ("sim", "tcp"):
            raise ValueError(f"mode must be 'sim' or 'tcp', got {self.mode!r}")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        if not 1 <= self.t < self.ell:
            raise ValueError(f"need 1 <= t < ell, got ell={self.ell}, t={self.t}")
        if self.db_rows & (self.db_rows - 1) or self.db_rows < self.channels * self.slots:
            raise ValueError("db_rows must be a power of two no smaller than channels*slots")
        if self.clients < 1 or self.rounds < 1:
            raise ValueError("clients and rounds must be positive")
        servers = [f.server for f in self.faults]
        if len(set(servers)) != len(servers) or not all(1 <= s <= self.ell for s in servers):
            raise ValueError("faults must name distinct servers in [1, ell]")
        if self.must_succeed:
            down = sum(f.behavior == "down" for f in self.faults)
            byz = sum(f.behavior == "byzantine" for f in self.faults)
            k = self.ell - down
            if k <= self.t or byz > gf256.unique_decoding_radius(k, self.t):
                raise ValueError(
                    f"fault plan ({down} down, {byz} byzantine) exceeds what ({self.ell},{self.t}) can recover; "
                    "set must_succeed = false to run it anyway"
                )
        if not self.run_id:
            rid = f"r{self.db_rows}-l{self.ell}t{self.t}-n{self.clients}-k{self.kappa}-s{self.seed}"
            object.__setattr__(self, "run_id", rid)

    @property
    def relay_count(self) -> int:
        # enough for disjoint paths per bastion when not given
        return self.relays or max(3, 3 * self.ell)

    @property
    def service_id(self) -> bytes:
        return hashlib.sha256(self.service.encode()).digest()[:16]

    def behavior_of(self, server_index: int) -> str:
        for f in self.faults:
            if f.server == server_index:
                return f.behavior
        return "honest"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["faults"] = [asdict(f) for f in self.faults]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        if "psb_config" in d:
            d["ell"], d["t"] = d.pop("psb_config")
        if "latency" in d and isinstance(d["latency"], dict):
            d["latency"] = LatencySpec(**d["latency"])
        if "faults" in d:
            d["faults"] = tuple(
                FaultSpec(**f) if isinstance(f, dict) else FaultSpec(int(f[0]), str(f[1])) for f in d["faults"]
            )
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**d)


def load_spec(path: str | Path) -> ExperimentSpec:
    """Read a spec from .toml or .json. A top-level [experiment] table is accepted too."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".json":
        d = json.loads(raw)
    else:
        d = tomllib.loads(raw.decode())
    if "experiment" in d and isinstance(d["experiment"], dict):
        d = d["experiment"]
    return ExperimentSpec.from_dict(d)
