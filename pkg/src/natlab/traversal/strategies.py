"""Individual connectivity techniques. Each returns a finished TraversalSession."""

from __future__ import annotations

from dataclasses import dataclass

from natlab import wire
from natlab.discovery import Peer, _Waiter
from natlab.natbox import DEFAULT_TTL_US, PMP_PORT, first_hop_nat
from natlab.netsim import Datagram, Endpoint, Host, Network, SimTime, US_PER_MS, US_PER_S
from natlab.wire import MessageKind, PmpStatus
from natlab.traversal.session import (FailReason, Handshake, PathKind, SessionState, Strategy,
                                      TraversalSession, session_nonce)

RELAY_PORT = 3480
DEFAULT_TIMEOUT_US = 2 * US_PER_S
DEFAULT_RETRY_US = 100 * US_PER_MS
DEFAULT_GUARD_US = 100 * US_PER_MS
BIRTHDAY_BASE_PORT = 20000


class PreconditionError(ValueError):
    pass


class MappingUnsupported(Exception):
    pass


def _new_session(net: Network, a: Peer, b: Peer, strategy: Strategy) -> TraversalSession:
    s = TraversalSession(a, b, strategy=strategy)
    s.nonce = session_nonce(a, b, strategy.value, net)
    s.advance(SessionState.GATHERING)
    return s


def _start_time(net: Network, a: Peer, start: SimTime | None) -> SimTime:
    if start is not None:
        return max(start, net.now)
    if a.punch_start is not None and a.punch_start > net.now:
        return a.punch_start
    return net.now + DEFAULT_GUARD_US


def _exchange(net: Network, session: TraversalSession, targets: dict[str, tuple[int, Endpoint]],
              start: SimTime, timeout: SimTime, retry: SimTime, path: PathKind,
              fail: FailReason = FailReason.TIMEOUT, relay: Endpoint | None = None) -> TraversalSession:
    """Both sides probe their target from ``start`` on, retrying until confirmed."""
    hs = Handshake(net, session, relay)
    session.advance(SessionState.PUNCHING)
    hs.started_at = start
    for label, (port, dst) in targets.items():
        side = hs.sides[label]
        hs.listen(label, port)

        def probe(label=label, port=port, dst=dst, side=side) -> bool:
            if side.confirmed:
                return False
            hs.send(label, port, dst)
            return True

        hs.every(start, retry, probe)
    ok = hs.run(start + timeout)
    return hs.finish(path if ok else None, None if ok else fail)


def _remote_best(p: Peer) -> Endpoint | None:
    return p.remote.best if p.remote is not None else None


def simple_punch(net: Network, a: Peer, b: Peer, start: SimTime | None = None,
                 timeout: SimTime = DEFAULT_TIMEOUT_US, retry: SimTime = DEFAULT_RETRY_US,
                 strategy: Strategy = Strategy.SIMPLE_PUNCH,
                 path: PathKind = PathKind.DIRECT) -> TraversalSession:
    """Synchronized punch: both sides probe the other's exchanged candidate."""
    session = _new_session(net, a, b, strategy)
    ta, tb = _remote_best(a), _remote_best(b)
    if ta is None or tb is None:
        session.fail(FailReason.NO_CANDIDATES)
        return session
    start = _start_time(net, a, start)
    return _exchange(net, session, {"a": (a.port, ta), "b": (b.port, tb)}, start, timeout, retry, path)


def brute_force_punch(net: Network, easy: Peer, hard: Peer, pps: int,
                      port_range: tuple[int, int] = (1, 65535), *, start: SimTime | None = None,
                      margin: SimTime = DEFAULT_TIMEOUT_US, hard_probe: bool = True,
                      order: str = "ascending", reprobe_us: SimTime = DEFAULT_TTL_US // 2,
                      ) -> TraversalSession:
    """Easy (EIM) side scans the hard side's external host from its one mapping.

    ``easy`` is session side "a", ``hard`` side "b". The hard side opens one
    mapping towards the easy side's reflexive endpoint and re-probes every
    ``reprobe_us`` to keep it alive during the scan.
    """
    if pps <= 0:
        raise ValueError("pps must be positive")
    session = _new_session(net, easy, hard, Strategy.BRUTE_FORCE)
    easy_target, hard_target = _remote_best(easy), _remote_best(hard)
    if easy_target is None or hard_target is None:
        session.fail(FailReason.NO_CANDIDATES)
        return session
    start = _start_time(net, easy, start)
    lo, hi = port_range
    ports = list(range(lo, hi + 1))
    if order == "random":
        net.rng(f"bruteforce:{easy.name}").shuffle(ports)
    elif order != "ascending":
        raise ValueError(f"unknown scan order {order!r}")
    hs = Handshake(net, session)
    session.advance(SessionState.PUNCHING)
    hs.started_at = start
    hs.listen("a", easy.port)
    hs.listen("b", hard.port)
    if hard_probe:
        def reprobe() -> bool:
            hs.send("b", hard.port, hard_target)
            return True
        hs.every(start, reprobe_us, reprobe)

    host = easy_target.host
    state = {"i": 0}

    def scan() -> None:
        easy_side = hs.sides["a"]
        i = state["i"]
        while i < len(ports) and start + (i * US_PER_S) // pps <= net.now:
            if easy_side.received or hs.done:
                return
            hs.send("a", easy.port, Endpoint(host, ports[i]))
            i += 1
        state["i"] = i
        if i < len(ports):
            hs.at(start + (i * US_PER_S) // pps, scan)

    hs.at(start, scan)
    deadline = start + (len(ports) * US_PER_S) // pps + margin
    ok = hs.run(deadline)
    return hs.finish(PathKind.DIRECT if ok else None, None if ok else FailReason.TIMEOUT)


def default_chunk(k: int, max_mappings: int, pool_size: int | None = None) -> int:
    """Concurrent-mapping window: half the table, and never more mappings
    than the NAT has external ports."""
    c = min(k, max_mappings // 2)
    if pool_size is not None:
        c = min(c, pool_size)
    return max(1, c)


def _nat_range(net: Network, peer: Peer) -> tuple[int, int]:
    chain = net.realm_chain(peer.host)
    if not chain:
        return (1, 65535)
    return net.nodes[chain[-1]].config.port_range


def birthday_punch(net: Network, a: Peer, b: Peer, k: int, port_range: tuple[int, int] | None,
                   pps: int, chunk: int | None = 0, *, mapping_ttl: SimTime | None = None,
                   start: SimTime | None = None, margin: SimTime = DEFAULT_TIMEOUT_US,
                   base_port: int = BIRTHDAY_BASE_PORT) -> TraversalSession:
    """Both sides open fresh mappings and probe random ports of the other's host.

    Each side sends up to ``k`` probes, each from a fresh local port (so each
    creates one NAT mapping) to a uniformly random port in ``port_range`` on
    the peer's external host. ``chunk`` bounds the side's concurrently live
    mappings: probes are paced so that a mapping has idled out (``mapping_ttl``)
    before the probe ``chunk`` positions later is sent. ``mapping_ttl``
    defaults to the longest idle timeout on the side's NAT chain. ``chunk=None`` disables
    the bound; ``chunk=0`` picks ``default_chunk`` from the side's first-hop
    NAT. ``port_range=None`` aims each side at the port range of the other
    side's outermost NAT.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if pps <= 0:
        raise ValueError("pps must be positive")
    session = _new_session(net, a, b, Strategy.BIRTHDAY)
    ta, tb = _remote_best(a), _remote_best(b)
    if ta is None or tb is None:
        session.fail(FailReason.NO_CANDIDATES)
        return session
    start = _start_time(net, a, start)
    hs = Handshake(net, session)
    session.advance(SessionState.PUNCHING)
    hs.started_at = start

    last_send = start
    for label, peer, other, target in (("a", a, b, ta), ("b", b, a, tb)):
        lo, hi = port_range if port_range is not None else _nat_range(net, other)
        window = chunk
        nat = first_hop_nat(net, peer.host)
        if window == 0:
            if nat is None:
                window = None
            else:
                plo, phi = nat.config.port_range
                window = default_chunk(k, nat.config.max_mappings, phi - plo + 1)
        if window is not None and nat is not None and nat.config.max_mappings > 1:
            # Keep one table slot for a handshake reply whose probe mapping
            # idled out while the reply was in flight.
            window = min(window, nat.config.max_mappings - 1)
        ttl = mapping_ttl
        if ttl is None:
            ttls = [net.nodes[n].config.mapping_ttl for n in net.realm_chain(peer.host)]
            ttls = [t for t in ttls if t is not None]
            ttl = max(ttls) if ttls else DEFAULT_TTL_US
        if window is not None and window >= k:
            window = None
        span = window if window is not None else k
        if base_port + span - 1 > 65535:
            raise ValueError("not enough local ports for this chunk size")
        for p in range(base_port, base_port + span):
            hs.listen(label, p)
        rng = net.rng(f"birthday:{peer.name}:{session.nonce.hex()}")
        times = _birthday_schedule(k, pps, window, ttl)
        last_send = max(last_send, start + times[-1])
        _BirthdaySender(hs, label, target.host, lo, hi, rng, times, start, base_port, span).arm()

    ok = hs.run(last_send + margin)
    if ok:
        return hs.finish(PathKind.DIRECT, None)
    table_full = {"table-full", "port-exhausted"} & (hs.drop_reasons["a"] | hs.drop_reasons["b"])
    return hs.finish(None, FailReason.TABLE_FULL if table_full else FailReason.TIMEOUT)


def _birthday_schedule(k: int, pps: int, window: int | None, ttl: SimTime) -> list[SimTime]:
    """Send offsets: paced at ``pps`` and, with a window, spread so that probe
    ``i`` leaves strictly more than ``ttl`` after probe ``i - window``."""
    if window is None:
        return [(i * US_PER_S + pps - 1) // pps for i in range(k)]
    return [max((i * US_PER_S + pps - 1) // pps, -(-i * (ttl + 1) // window)) for i in range(k)]


class _BirthdaySender:
    __slots__ = ("hs", "label", "host", "lo", "hi", "rng", "times", "start", "base", "span", "i")

    def __init__(self, hs, label, host, lo, hi, rng, times, start, base, span):
        self.hs, self.label, self.host = hs, label, host
        self.lo, self.hi, self.rng = lo, hi, rng
        self.times, self.start, self.base, self.span = times, start, base, span
        self.i = 0

    def arm(self) -> None:
        self.hs.at(self.start + self.times[0], self)

    def __call__(self) -> None:
        hs = self.hs
        side = hs.sides[self.label]
        now = hs.net.now
        times, start = self.times, self.start
        i = self.i
        while i < len(times) and start + times[i] <= now:
            if side.received or hs.done:
                return
            port = self.base + i % self.span
            hs.send(self.label, port, Endpoint(self.host, self.rng.randint(self.lo, self.hi)))
            i += 1
        self.i = i
        if i < len(times):
            hs.at(start + times[i], self)


@dataclass(frozen=True)
class MappingResult:
    granted_port: int
    lifetime_s: int
    external: Endpoint


def request_mapping(net: Network, peer: Peer, requested_port: int, lifetime_s: int = 3600,
                    internal_port: int | None = None,
                    timeout: SimTime = 500 * US_PER_MS) -> MappingResult:
    """Ask the peer's first-hop gateway for a static port mapping."""
    gw = first_hop_nat(net, peer.host)
    if gw is None:
        raise PreconditionError(f"{peer.name} has no gateway NAT")
    port = peer.port if internal_port is None else internal_port
    waiter = _Waiter(peer.host, port, MessageKind.PMP_RESP)
    net.send(peer.host, Datagram(peer.host.endpoint(port), Endpoint(gw.inner_address, PMP_PORT),
                                 wire.pmp_req(port, requested_port, lifetime_s)))
    resp = waiter.wait(net, timeout)
    if resp is None:
        raise MappingUnsupported("no response from gateway")
    status, granted, life = wire.decode_pmp_resp(resp.payload)
    if status is not PmpStatus.OK:
        raise MappingUnsupported(f"gateway refused: {status.name}")
    return MappingResult(granted, life, Endpoint(gw.config.external_host, granted))


def shared_nats(net: Network, a: Peer, b: Peer) -> list[str]:
    chain_b = set(net.realm_chain(b.host))
    return [n for n in net.realm_chain(a.host) if n in chain_b]


def hairpin_connect(net: Network, a: Peer, b: Peer, start: SimTime | None = None,
                    timeout: SimTime = DEFAULT_TIMEOUT_US,
                    retry: SimTime = DEFAULT_RETRY_US) -> TraversalSession:
    """Peers behind a common NAT probe each other's reflexive endpoints."""
    if not shared_nats(net, a, b):
        raise PreconditionError(f"{a.name} and {b.name} share no NAT")
    session = _new_session(net, a, b, Strategy.HAIRPIN)
    ta = b.mapped.reflexive if b.mapped else _remote_best(a)
    tb = a.mapped.reflexive if a.mapped else _remote_best(b)
    if ta is None or tb is None:
        session.fail(FailReason.NO_CANDIDATES)
        return session
    start = _start_time(net, a, start)
    return _exchange(net, session, {"a": (a.port, ta), "b": (b.port, tb)}, start, timeout, retry,
                     PathKind.HAIRPIN, FailReason.HAIRPIN_UNSUPPORTED)


class RelayServer:
    """Forwards RELAY_FWD datagrams between clients that have contacted it."""

    def __init__(self, net: Network, host: Host, port: int = RELAY_PORT):
        self.net = net
        self.host = host
        self.port = port
        self.observed: dict[tuple[int, int], Endpoint] = {}
        self.forwarded = 0
        host.listen(port, self._on_message)

    @property
    def endpoint(self) -> Endpoint:
        return self.host.endpoint(self.port)

    def _on_message(self, net: Network, d: Datagram) -> None:
        if not d.payload or d.payload[0] != MessageKind.RELAY_FWD:
            return
        src_id, dst_id, _ = wire.decode_relay_fwd(d.payload)
        self.observed[src_id] = d.src
        to = self.observed.get(dst_id)
        if to is not None:
            self.forwarded += 1
            net.send(self.host, Datagram(self.endpoint, to, d.payload))


def relay_connect(net: Network, a: Peer, b: Peer, relay: Endpoint, start: SimTime | None = None,
                  timeout: SimTime = DEFAULT_TIMEOUT_US,
                  retry: SimTime = DEFAULT_RETRY_US) -> TraversalSession:
    """Carry the handshake (and later all data) through a relay."""
    session = _new_session(net, a, b, Strategy.RELAY)
    start = net.now if start is None else max(start, net.now)
    return _exchange(net, session, {"a": (a.port, relay), "b": (b.port, relay)}, start, timeout,
                     retry, PathKind.RELAYED, FailReason.RELAY_DOWN, relay=relay)


def port_mapping_connect(net: Network, a: Peer, b: Peer, requested_port: int | None = None,
                         start: SimTime | None = None, timeout: SimTime = DEFAULT_TIMEOUT_US,
                         retry: SimTime = DEFAULT_RETRY_US) -> TraversalSession:
    """Obtain a forwarded port on either side's gateway, then handshake via it."""
    session = _new_session(net, a, b, Strategy.PORT_MAPPING)
    targets: dict[str, tuple[int, Endpoint]] = {}
    mapped: dict[str, Endpoint] = {}
    for label, peer in (("a", a), ("b", b)):
        try:
            res = request_mapping(net, peer, requested_port or peer.port)
        except (MappingUnsupported, PreconditionError):
            continue
        mapped[label] = res.external
    if not mapped:
        session.fail(FailReason.UNSUPPORTED)
        return session
    for label, peer, other in (("a", a, "b"), ("b", b, "a")):
        dst = mapped.get(other) or _remote_best(peer)
        if dst is None:
            session.fail(FailReason.NO_CANDIDATES)
            return session
        targets[label] = (peer.port, dst)
    start = _start_time(net, a, start)
    return _exchange(net, session, targets, start, timeout, retry, PathKind.DIRECT)


def direct_connect(net: Network, a: Peer, b: Peer, start: SimTime | None = None,
                   timeout: SimTime = DEFAULT_TIMEOUT_US,
                   retry: SimTime = DEFAULT_RETRY_US) -> TraversalSession:
    return simple_punch(net, a, b, start, timeout, retry, strategy=Strategy.DIRECT)


def analytic_chunk_note(k: int, port_space: int, window: int) -> float:
    """Expected number of colliding probe pairs under a sliding window."""
    w = min(window, k)
    pairs = k * (2 * w - 1) - w * (w - 1)
    return pairs / float(port_space) ** 2


__all__ = [
    "PreconditionError", "MappingUnsupported", "MappingResult", "RelayServer",
    "simple_punch", "brute_force_punch", "birthday_punch", "request_mapping", "hairpin_connect",
    "relay_connect", "port_mapping_connect", "direct_connect", "default_chunk", "shared_nats",
    "analytic_chunk_note",
]
