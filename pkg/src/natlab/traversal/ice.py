"""Strategy ladder, keepalives and the carrier interoperability matrix."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from natlab import wire
from natlab.discovery import DiscoveryError, Peer, RendezvousServer, register, rendezvous_exchange
from natlab.natbox import MappingBehavior, NatClassName, NatConfig
from natlab.netsim import Datagram, Endpoint, Network, SimTime, Timer, derive_seed, parse_host
from natlab.traversal.session import LADDER, FailReason, PunchStats, Strategy, TraversalSession
from natlab.traversal.strategies import (DEFAULT_RETRY_US, DEFAULT_TIMEOUT_US, RelayServer,
                                         birthday_punch, brute_force_punch, direct_connect,
                                         hairpin_connect, port_mapping_connect, relay_connect,
                                         shared_nats, simple_punch)

DEFAULT_PPS = 57000


def parse_ladder(text: str) -> tuple[Strategy, ...]:
    """Parse a comma-separated strategy list such as ``"SimplePunch,Birthday"``.

    The result is always in ladder order regardless of the input order.
    """
    names = {s.value.lower(): s for s in Strategy}
    chosen = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if part.lower() == "all":
            chosen.update(Strategy)
            continue
        try:
            chosen.add(names[part.lower()])
        except KeyError:
            raise ValueError(f"unknown strategy {part!r}") from None
    if not chosen:
        raise ValueError("empty strategy ladder")
    return tuple(s for s in LADDER if s in chosen)


@dataclass(frozen=True)
class Policy:
    """Which strategies ICE may use and how aggressively."""

    ladder: tuple[Strategy, ...] = LADDER
    birthday_k: int | None = None
    birthday_chunk: int | None = 0
    pps: int = DEFAULT_PPS
    port_range: tuple[int, int] | None = None
    timeout_us: SimTime = DEFAULT_TIMEOUT_US
    retry_us: SimTime = DEFAULT_RETRY_US

    def __post_init__(self):
        if self.pps <= 0:
            raise ValueError("pps must be positive")
        if self.birthday_k is not None and self.birthday_k < 1:
            raise ValueError("birthday_k must be >= 1")
        object.__setattr__(self, "ladder", tuple(s for s in LADDER if s in set(self.ladder)))

    @classmethod
    def only(cls, *strategies: Strategy, **kw) -> "Policy":
        return cls(ladder=tuple(strategies), **kw)

    def allows(self, s: Strategy) -> bool:
        return s in self.ladder


@dataclass
class IceResult:
    session: TraversalSession
    strategy: Strategy | None
    stats: PunchStats
    attempts: list[tuple[Strategy, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.session.established

    def to_dict(self) -> dict:
        return {
            "result": self.session.describe(),
            "strategy": self.strategy.value if self.strategy else None,
            "path": self.session.path.value if self.session.path else None,
            "stats": self.stats.to_dict(),
            "attempts": [{"strategy": s.value, "result": r} for s, r in self.attempts],
        }


def is_endpoint_dependent(net: Network, peer: Peer) -> bool:
    """True when the peer's outside view changes per destination."""
    if peer.nat_class is not None:
        return peer.nat_class is NatClassName.SYMMETRIC
    return any(net.nodes[n].config.mapping is MappingBehavior.ADDRESS_AND_PORT_DEPENDENT
               for n in net.realm_chain(peer.host))


def _mapping_capable(net: Network, peer: Peer) -> bool:
    chain = net.realm_chain(peer.host)
    if len(chain) != 1:
        return False
    cfg = net.nodes[chain[0]].config
    return cfg.port_mapping and not cfg.cgnat


def _port_space(net: Network, *peers: Peer) -> int:
    size = 1
    for p in peers:
        chain = net.realm_chain(p.host)
        if chain:
            lo, hi = net.nodes[chain[-1]].config.port_range
            size = max(size, hi - lo + 1)
    return size


def default_birthday_k(port_space: int, window: int | None = None, target: float = 0.999) -> int:
    """Probes per side giving ``target`` success under the sliding-window model."""
    from natlab.analytics import probes_for_target_windowed

    return probes_for_target_windowed(target, port_space, window)


def applicable(net: Network, a: Peer, b: Peer, s: Strategy, relay: Endpoint | None) -> bool:
    """Whether strategy ``s`` can possibly work for this pair."""
    open_a, open_b = not net.realm_chain(a.host), not net.realm_chain(b.host)
    shared = bool(shared_nats(net, a, b))
    edm_a, edm_b = is_endpoint_dependent(net, a), is_endpoint_dependent(net, b)
    if s is Strategy.DIRECT:
        return open_a or open_b
    if s is Strategy.PORT_MAPPING:
        return not shared and (_mapping_capable(net, a) or _mapping_capable(net, b))
    if s is Strategy.SIMPLE_PUNCH:
        return not shared
    if s is Strategy.BRUTE_FORCE:
        return not shared and edm_a != edm_b
    if s is Strategy.BIRTHDAY:
        # Both-EDM is the textbook case; with one EDM side it still works
        # (the EIM side simply opens fresh ports too) and is the only option
        # when BruteForce is excluded by policy.
        return not shared and (edm_a or edm_b)
    if s is Strategy.HAIRPIN:
        return shared
    if s is Strategy.RELAY:
        return relay is not None
    return False


def _coordinate(net: Network, a: Peer, b: Peer, rendezvous: RendezvousServer | None) -> None:
    """Exchange candidates (via the rendezvous server when one is given)."""
    if rendezvous is not None:
        register(net, a, rendezvous)
        register(net, b, rendezvous)
        rendezvous_exchange(net, rendezvous, a, b)
    else:
        a.remote, b.remote = b.candidates, a.candidates
        a.punch_start = b.punch_start = None


def ice_connect(net: Network, a: Peer, b: Peer, policy: Policy = Policy(), *,
                rendezvous: RendezvousServer | None = None,
                relay: RelayServer | Endpoint | None = None) -> IceResult:
    """Try each applicable strategy in ladder order; return the first success."""
    if a.mapped is None or b.mapped is None:
        raise ValueError("discovery must run on both peers first")
    relay_ep = relay.endpoint if isinstance(relay, RelayServer) else relay
    total = PunchStats()
    attempts: list[tuple[Strategy, str]] = []
    last: TraversalSession | None = None
    for s in policy.ladder:
        if not applicable(net, a, b, s, relay_ep):
            continue
        if s is not Strategy.RELAY:
            try:
                _coordinate(net, a, b, rendezvous)
            except DiscoveryError:
                attempts.append((s, "Failed(NoCandidates)"))
                continue
        session = _run(net, a, b, s, policy, relay_ep)
        total += session.stats
        attempts.append((s, session.describe()))
        last = session
        if session.established:
            return IceResult(session, s, total, attempts)
    if policy.allows(Strategy.RELAY) and last is not None and last.strategy is Strategy.RELAY:
        return IceResult(last, None, total, attempts)
    final = TraversalSession(a, b)
    final.fail(FailReason.ALL_STRATEGIES_EXHAUSTED)
    final.stats = total
    return IceResult(final, None, total, attempts)


def _run(net: Network, a: Peer, b: Peer, s: Strategy, policy: Policy,
         relay: Endpoint | None) -> TraversalSession:
    kw = {"timeout": policy.timeout_us, "retry": policy.retry_us}
    if s is Strategy.DIRECT:
        return direct_connect(net, a, b, **kw)
    if s is Strategy.PORT_MAPPING:
        return port_mapping_connect(net, a, b, **kw)
    if s is Strategy.SIMPLE_PUNCH:
        return simple_punch(net, a, b, **kw)
    if s is Strategy.HAIRPIN:
        return hairpin_connect(net, a, b, **kw)
    if s is Strategy.RELAY:
        return relay_connect(net, a, b, relay, **kw)
    if s is Strategy.BRUTE_FORCE:
        easy, hard = (a, b) if is_endpoint_dependent(net, b) else (b, a)
        rng = policy.port_range or _hard_range(net, hard)
        return brute_force_punch(net, easy, hard, policy.pps, rng, margin=policy.timeout_us)
    if s is Strategy.BIRTHDAY:
        k = policy.birthday_k
        if k is None:
            p = (policy.port_range[1] - policy.port_range[0] + 1) if policy.port_range else _port_space(net, a, b)
            k = default_birthday_k(p, p)
        return birthday_punch(net, a, b, k, policy.port_range, policy.pps, policy.birthday_chunk,
                              margin=policy.timeout_us)
    raise ValueError(s)


def _hard_range(net: Network, hard: Peer) -> tuple[int, int]:
    chain = net.realm_chain(hard.host)
    return net.nodes[chain[-1]].config.port_range if chain else (1, 65535)


# -- keepalive -------------------------------------------------------------------


class Keepalive:
    """Periodic refresh of every mapping on an established session's path."""

    def __init__(self, net: Network, session: TraversalSession, interval_us: SimTime):
        if interval_us <= 0:
            raise ValueError("interval must be positive")
        if not session.established:
            raise ValueError(f"session is {session.describe()}")
        self.net = net
        self.session = session
        self.interval_us = interval_us
        self.sent = 0
        self._timer: Timer | None = net.call_later(interval_us, self._tick)

    def _tick(self) -> None:
        s = self.session
        if not s.established:
            self._timer = None
            return
        for label in ("a", "b"):
            route = s.routes[label]
            host = s.peer(label).host
            payload = wire.probe(s.nonce)
            if route.relay_ids is not None:
                payload = wire.relay_fwd(tuple(route.relay_ids[0]), tuple(route.relay_ids[1]), payload)
            self.net.send(host, Datagram(host.endpoint(route.local_port), route.remote, payload))
            self.sent += 1
        self._timer = self.net.call_later(self.interval_us, self._tick)

    def stop(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None


def keepalive(net: Network, session: TraversalSession, interval_us: SimTime) -> Keepalive:
    return Keepalive(net, session, interval_us)


# -- interop matrix ----------------------------------------------------------------


@dataclass(frozen=True)
class Carrier:
    name: str
    config: NatConfig


@dataclass
class MatrixResult:
    carriers: list[str]
    grid: list[list[bool]]
    strategies: list[list[str | None]]

    @property
    def successes(self) -> int:
        return sum(map(sum, self.grid))

    @property
    def cells(self) -> int:
        return len(self.carriers) ** 2

    @property
    def ratio(self) -> float:
        return self.successes / self.cells

    @property
    def interoperable(self) -> list[str]:
        """Carriers that connected in at least one cell."""
        n = len(self.carriers)
        return [c for i, c in enumerate(self.carriers)
                if any(self.grid[i][j] or self.grid[j][i] for j in range(n))]

    @property
    def interop_ratio(self) -> float:
        return len(self.interoperable) / len(self.carriers)

    def summary(self) -> str:
        n = len(self.interoperable)
        return (f"{n} of {len(self.carriers)} carriers interoperable "
                f"({100 * n / len(self.carriers):.0f}%); {self.successes}/{self.cells} cells succeeded")

    def to_dict(self) -> dict:
        return {
            "carriers": list(self.carriers),
            "grid": [[bool(x) for x in row] for row in self.grid],
            "strategies": [[s for s in row] for row in self.strategies],
            "successes": self.successes,
            "cells": self.cells,
            "ratio": self.ratio,
            "interoperable": self.interoperable,
            "interop_ratio": self.interop_ratio,
            "summary": self.summary(),
        }

    def table(self) -> str:
        w = max(len(c) for c in self.carriers) + 2
        lines = [" " * w + "".join(c.ljust(w) for c in self.carriers)]
        for name, row in zip(self.carriers, self.grid):
            lines.append(name.ljust(w) + "".join(("yes" if ok else "no").ljust(w) for ok in row))
        return "\n".join(line.rstrip() for line in lines)


_CELL_HOSTS = ("198.51.100.1", "198.51.100.2")


def run_cell(a: Carrier, b: Carrier, policy: Policy, seed: int) -> IceResult:
    """One ordered pair: a phone on carrier ``a`` connects to one on ``b``."""
    from natlab.lab import World

    world = World(seed=seed, with_relay=policy.allows(Strategy.RELAY))
    peers = []
    for label, carrier, ext in (("a", a, _CELL_HOSTS[0]), ("b", b, _CELL_HOSTS[1])):
        nat = f"nat-{label}"
        world.add_nat(nat, replace(carrier.config, external_host=parse_host(ext)))
        peers.append(world.add_peer(f"phone-{label}", "10.0.0.2", behind=nat))
    for p in peers:
        world.discover(p)
    return ice_connect(world.net, peers[0], peers[1], policy, rendezvous=world.rendezvous,
                       relay=world.relay)


def run_interop_matrix(carriers: Sequence[Carrier | tuple[str, NatConfig] | NatConfig],
                       policy: Policy = Policy(), seed: int = 0) -> MatrixResult:
    """Run ICE for every ordered pair of carriers on fresh NAT instances."""
    cs = _carriers(carriers)
    if len(cs) < 2:
        raise ValueError("the interop matrix needs at least two carriers")
    grid, strategies = [], []
    for i, a in enumerate(cs):
        row, srow = [], []
        for j, b in enumerate(cs):
            res = run_cell(a, b, policy, derive_seed(seed, "cell", i, j))
            row.append(res.ok)
            srow.append(res.strategy.value if res.strategy else None)
        grid.append(row)
        strategies.append(srow)
    return MatrixResult([c.name for c in cs], grid, strategies)


def _carriers(items: Iterable) -> list[Carrier]:
    out = []
    for i, c in enumerate(items):
        if isinstance(c, Carrier):
            out.append(c)
        elif isinstance(c, NatConfig):
            out.append(Carrier(f"carrier{i + 1}", c))
        else:
            name, cfg = c
            out.append(Carrier(name, cfg))
    return out


__all__ = [
    "Policy", "IceResult", "ice_connect", "applicable", "parse_ladder", "keepalive", "Keepalive",
    "Carrier", "MatrixResult", "run_interop_matrix", "run_cell", "default_birthday_k",
    "is_endpoint_dependent", "DEFAULT_PPS",
]
