"""Synthetic device pool generation.

Six archetypes (fast/slow compute crossed with good/poor link, plus two
battery-weak variants) are jittered +/-20% per device.  Each device also
gets a short availability trace of multipliers >= 1 that models recurring
interference from concurrent usage; the trace cycles modulo its length.
"""

from __future__ import annotations

from . import rng as rngmod
from .core import DeviceProfile, DevicePool

# (comm_latency_s, comp_latency_s_per_epoch, comm_energy_j, comp_energy_j_per_epoch)
ARCHETYPES = (
    ("fast-good", 1.0, 0.5, 2.0, 1.0),
    ("fast-poor", 4.0, 0.5, 6.0, 1.0),
    ("slow-good", 1.0, 2.0, 2.0, 3.0),
    ("slow-poor", 4.0, 2.0, 6.0, 3.0),
    ("battery-weak-fast", 1.5, 0.6, 10.0, 6.0),
    ("battery-weak-slow", 3.0, 1.5, 8.0, 5.0),
)

TRACE_LEN = 16


def generate_pool(n_devices: int, seed: int) -> DevicePool:
    gen = rngmod.stream(seed, "profiles")
    devices = []
    for did in range(n_devices):
        _, comm_l, comp_l, comm_e, comp_e = ARCHETYPES[did % len(ARCHETYPES)]
        jitter = gen.uniform(0.8, 1.2, size=4)
        trace = tuple(1.0 + gen.uniform(0.0, 0.4, size=TRACE_LEN))
        devices.append(DeviceProfile(
            id=did,
            comm_latency_s=comm_l * jitter[0],
            comp_latency_s_per_epoch=comp_l * jitter[1],
            comm_energy_j=comm_e * jitter[2],
            comp_energy_j_per_epoch=comp_e * jitter[3],
            availability=trace,
        ))
    return DevicePool(tuple(devices))
