"""Small in-process onion network used by several test modules."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from pacdosq.onion import LatencyModel, Relay, SimNetwork, circuit_build, directory_publish
from pacdosq.pqc import SeededRandom, get_provider


@dataclass
class World:
    provider: object
    net: SimNetwork
    relays: list
    consensus: object
    authority: object
    frames: list = field(default_factory=list)

    async def circuit(self, path_idx=(0, 1, 2), client="client", rng_seed=0):
        path = [self.relays[i].relay_id for i in path_idx]
        return await circuit_build(self.net, self.provider, self.consensus, path, client,
                                   timeout=2.0, rng=random.Random(rng_seed))

    async def close(self):
        for r in self.relays:
            await r.close()
        await self.net.shutdown()


def make_world(n_relays=3, profile="test-deterministic", latency=None, seed=0, services=None) -> World:
    provider = get_provider(profile, seed)
    net = SimNetwork(latency or LatencyModel())
    rng = SeededRandom(f"world|{seed}")
    relays = []
    for i in range(n_relays):
        r = Relay(f"relay-{i}", provider.kem_keygen(rng), provider, net, seed=i, egress_timeout=1.0)
        net.listen(r.address, r.serve_link)
        relays.append(r)
    authority = provider.sig_keygen(rng)
    consensus = directory_publish(provider, authority.secret_key, [r.descriptor for r in relays], 1_700_000_000)
    net.register_service("echo", lambda msg, src: msg)
    for addr, handler in (services or {}).items():
        net.register_service(addr, handler)
    world = World(provider, net, relays, consensus, authority)
    net.taps.append(lambda src, dst, frame: world.frames.append((src, dst, frame)))
    return world
