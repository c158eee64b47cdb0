from __future__ import annotations

import os

from hypothesis import HealthCheck, settings

from natlab.lab import World
from natlab.natbox import NatConfig
from natlab.netsim import parse_host
from natlab.traversal.ice import _coordinate

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True)
settings.register_profile("dev", deadline=None, max_examples=50)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# Property suites that must run at least this many generated cases.
PROPERTY_CASES = 1000

EXT_A, EXT_B = parse_host("198.51.100.1"), parse_host("198.51.100.2")


def pair_world(cfg_a: NatConfig | None, cfg_b: NatConfig | None, seed: int = 0,
               classify: bool = False, coordinate: bool = True):
    """Two peers, each behind its own NAT (or none), discovered and introduced."""
    w = World(seed=seed, trace=True)
    peers = []
    for label, cfg, public in (("a", cfg_a, "203.0.113.1"), ("b", cfg_b, "203.0.113.2")):
        if cfg is None:
            peers.append(w.add_peer(label, public))
        else:
            w.add_nat(f"nat-{label}", cfg)
            peers.append(w.add_peer(label, "10.0.0.2", behind=f"nat-{label}"))
    a, b = peers
    w.discover(a, classify=classify)
    w.discover(b, classify=classify)
    if coordinate:
        _coordinate(w.net, a, b, None)
    return w, a, b
