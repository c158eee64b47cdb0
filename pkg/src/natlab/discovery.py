"""Reflexive-address discovery, NAT classification and the rendezvous server."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from natlab import wire
from natlab.natbox import NatClassName
from natlab.netsim import Datagram, Endpoint, Host, Network, SimTime, US_PER_MS
from natlab.wire import AltMode, CandidateWire, ExchangeStatus, MessageKind

STUN_PORT = 3478
STUN_ALT_PORT = 3479
RENDEZVOUS_PORT = 7000
DEFAULT_WAIT_US = 500 * US_PER_MS


class DiscoveryError(Exception):
    pass


class StunTimeout(DiscoveryError):
    pass


class Inconclusive(DiscoveryError):
    pass


class UnknownPeer(DiscoveryError):
    pass


@dataclass(frozen=True)
class MappedAddress:
    reflexive: Endpoint
    observed_at: SimTime
    server: Endpoint
    rtt_us: SimTime = 0


@dataclass(frozen=True)
class CandidateSet:
    local: Endpoint
    reflexive: MappedAddress | None = None

    @property
    def best(self) -> Endpoint:
        return self.reflexive.reflexive if self.reflexive else self.local

    def to_wire(self) -> CandidateWire:
        refl = self.reflexive
        return CandidateWire(tuple(self.local), tuple(refl.reflexive) if refl else None,
                             refl.rtt_us if refl else 0)


@dataclass
class RendezvousRecord:
    peer_id: bytes
    candidates: CandidateWire
    registered_at: SimTime
    source: Endpoint
    punch_start: SimTime | None = None


class StunServer:
    """Answers binding requests on a primary and an alternate port.

    A partner server on another host serves "reply from another address"
    requests (ALT_REPLY_REQ mode 2).
    """

    def __init__(self, net: Network, host: Host, port: int = STUN_PORT, alt_port: int = STUN_ALT_PORT):
        self.net = net
        self.host = host
        self.port = port
        self.alt_port = alt_port
        self.partner: StunServer | None = None
        host.listen(port, self._on_primary)
        host.listen(alt_port, self._on_alt)

    @property
    def endpoint(self) -> Endpoint:
        return self.host.endpoint(self.port)

    def pair(self, other: "StunServer") -> None:
        self.partner, other.partner = other, self

    def _reply(self, from_port: int, to: Endpoint, observed: Endpoint) -> None:
        self.net.send(self.host, Datagram(self.host.endpoint(from_port), to,
                                          wire.stun_resp(observed.host, observed.port)))

    def _on_primary(self, net: Network, d: Datagram) -> None:
        self._serve(d, self.port)

    def _on_alt(self, net: Network, d: Datagram) -> None:
        self._serve(d, self.alt_port)

    def _serve(self, d: Datagram, local_port: int) -> None:
        kind = d.payload[0] if d.payload else None
        if kind == MessageKind.STUN_REQ:
            self._reply(local_port, d.src, d.src)
        elif kind == MessageKind.ALT_REPLY_REQ:
            mode, target = wire.decode_alt_reply_req(d.payload)
            if target is not None:
                # Forwarded by the partner: answer the original client.
                t = Endpoint(*target)
                self._reply(self.port, t, t)
            elif mode is AltMode.SAME:
                self._reply(local_port, d.src, d.src)
            elif mode is AltMode.ALT_PORT:
                other = self.alt_port if local_port == self.port else self.port
                self._reply(other, d.src, d.src)
            elif self.partner is not None:
                self.net.send(self.host, Datagram(
                    self.host.endpoint(self.port), self.partner.endpoint,
                    wire.alt_reply_req(AltMode.ALT_HOST, tuple(d.src))))


class _Waiter:
    """Collects the first datagram of a given kind arriving on a host port."""

    def __init__(self, host: Host, port: int, kind: MessageKind):
        self.host, self.port, self.kind = host, port, kind
        self.got: Datagram | None = None
        host.listen(port, self)

    def __call__(self, net: Network, d: Datagram) -> None:
        if self.got is None and d.payload and d.payload[0] == self.kind:
            self.got = d

    def wait(self, net: Network, timeout: SimTime) -> Datagram | None:
        try:
            net.run_while(lambda: self.got is None, net.now + timeout)
        finally:
            self.host.unlisten(self.port, self)
        return self.got


def stun_bind(net: Network, client: Host, local_port: int, server: Endpoint,
              timeout: SimTime = DEFAULT_WAIT_US) -> MappedAddress:
    """Learn the address ``server`` observes for ``client:local_port``."""
    waiter = _Waiter(client, local_port, MessageKind.STUN_RESP)
    sent = net.now
    net.send(client, Datagram(client.endpoint(local_port), server, wire.stun_req()))
    resp = waiter.wait(net, timeout)
    if resp is None:
        raise StunTimeout(f"no STUN response from {server}")
    host, port = wire.decode_stun_resp(resp.payload)
    return MappedAddress(Endpoint(host, port), net.now, server, net.now - sent)


def _alt_probe(net: Network, client: Host, port: int, server: Endpoint, mode: AltMode,
               timeout: SimTime) -> bool:
    waiter = _Waiter(client, port, MessageKind.STUN_RESP)
    net.send(client, Datagram(client.endpoint(port), server, wire.alt_reply_req(mode)))
    return waiter.wait(net, timeout) is not None


def classify_nat(net: Network, client: Host, local_port: int, server_a: StunServer,
                 server_b: StunServer, *, filter_port: int | None = None,
                 timeout: SimTime = DEFAULT_WAIT_US) -> NatClassName:
    """Two-server classification: mapping test first, then filtering tests.

    Filtering tests run from a fresh local port so that the mapping under
    test has only contacted ``server_a``'s primary endpoint.
    """
    try:
        first = stun_bind(net, client, local_port, server_a.endpoint, timeout)
        if first.reflexive == client.endpoint(local_port):
            return NatClassName.OPEN_INTERNET
        second = stun_bind(net, client, local_port, server_b.endpoint, timeout)
    except StunTimeout as exc:
        raise Inconclusive(str(exc)) from exc
    if second.reflexive != first.reflexive:
        return NatClassName.SYMMETRIC
    fport = filter_port if filter_port is not None else (local_port % 65535) + 1
    if _alt_probe(net, client, fport, server_a.endpoint, AltMode.ALT_HOST, timeout):
        return NatClassName.FULL_CONE
    if _alt_probe(net, client, fport, server_a.endpoint, AltMode.ALT_PORT, timeout):
        return NatClassName.RESTRICTED_CONE
    # The filter port's mapping is confirmed alive by a same-endpoint reply.
    if not _alt_probe(net, client, fport, server_a.endpoint, AltMode.SAME, timeout):
        raise Inconclusive("filtering tests could not be ordered: no reply at all")
    return NatClassName.PORT_RESTRICTED_CONE


def peer_id_for(name: str) -> bytes:
    return hashlib.sha256(name.encode()).digest()[:8]


@dataclass
class Peer:
    """An application endpoint on a host, with the state discovery produces."""

    host: Host
    port: int
    name: str = ""
    peer_id: bytes = b""
    mapped: MappedAddress | None = None
    nat_class: NatClassName | None = None
    remote: CandidateSet | None = None
    punch_start: SimTime | None = None
    exchange_status: ExchangeStatus | None = None
    _listening: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.name = self.name or self.host.name
        self.peer_id = self.peer_id or peer_id_for(self.name)

    @property
    def local(self) -> Endpoint:
        return self.host.endpoint(self.port)

    @property
    def candidates(self) -> CandidateSet:
        return CandidateSet(self.local, self.mapped)

    def discover(self, net: Network, server_a: StunServer, server_b: StunServer | None = None,
                 timeout: SimTime = DEFAULT_WAIT_US) -> None:
        if server_b is not None:
            self.nat_class = classify_nat(net, self.host, self.port, server_a, server_b, timeout=timeout)
        self.mapped = stun_bind(net, self.host, self.port, server_a.endpoint, timeout)
        if server_b is None and self.mapped.reflexive == self.local:
            self.nat_class = NatClassName.OPEN_INTERNET

    def _on_message(self, net: Network, d: Datagram) -> None:
        if not d.payload or d.payload[0] != MessageKind.EXCHANGE_RESP:
            return
        status, _, cand, start = wire.decode_exchange_resp(d.payload)
        self.exchange_status = status
        if status is ExchangeStatus.OK:
            refl = None
            if cand.reflexive is not None:
                refl = MappedAddress(Endpoint(*cand.reflexive), net.now, d.src, cand.rtt_us)
            self.remote = CandidateSet(Endpoint(*cand.local), refl)
            self.punch_start = start

    def ensure_listening(self) -> None:
        if not self._listening:
            self.host.listen(self.port, self._on_message)
            self._listening = True


class RendezvousServer:
    """Stores peers' candidates and schedules a common punch start."""

    def __init__(self, net: Network, host: Host, port: int = RENDEZVOUS_PORT):
        self.net = net
        self.host = host
        self.port = port
        self.records: dict[bytes, RendezvousRecord] = {}
        self.starts: dict[frozenset, SimTime] = {}
        host.listen(port, self._on_message)

    @property
    def endpoint(self) -> Endpoint:
        return self.host.endpoint(self.port)

    def _on_message(self, net: Network, d: Datagram) -> None:
        kind = d.payload[0] if d.payload else None
        if kind == MessageKind.REGISTER:
            pid, cand = wire.decode_register(d.payload)
            self.records[pid] = RendezvousRecord(pid, cand, net.now, d.src)
            for key in [k for k in self.starts if pid in k]:
                del self.starts[key]
        elif kind == MessageKind.EXCHANGE:
            requester, target = wire.decode_exchange(d.payload)
            rec_t = self.records.get(target)
            rec_r = self.records.get(requester)
            if rec_t is None or rec_r is None:
                self._send(d.src, wire.exchange_resp(ExchangeStatus.UNKNOWN_PEER, target))
                return
            start = self.agreed_start(rec_r, rec_t)
            self._send(rec_r.source, wire.exchange_resp(ExchangeStatus.OK, target, rec_t.candidates, start))
            self._send(rec_t.source, wire.exchange_resp(ExchangeStatus.OK, requester, rec_r.candidates, start))

    def agreed_start(self, a: RendezvousRecord, b: RendezvousRecord) -> SimTime:
        key = frozenset((a.peer_id, b.peer_id))
        start = self.starts.get(key)
        if start is None:
            rtt = max(a.candidates.rtt_us, b.candidates.rtt_us, 1)
            start = max(a.registered_at, b.registered_at) + 2 * rtt
            if start <= self.net.now:
                start = self.net.now + 2 * rtt
            self.starts[key] = start
        a.punch_start = b.punch_start = start
        return start

    def _send(self, to: Endpoint, payload: bytes) -> None:
        self.net.send(self.host, Datagram(self.endpoint, to, payload))


def register(net: Network, peer: Peer, server: RendezvousServer,
             timeout: SimTime = DEFAULT_WAIT_US) -> None:
    peer.ensure_listening()
    sent = net.now
    net.send(peer.host, Datagram(peer.local, server.endpoint,
                                 wire.register(peer.peer_id, peer.candidates.to_wire())))

    def pending() -> bool:
        rec = server.records.get(peer.peer_id)
        return rec is None or rec.registered_at < sent

    if not net.run_while(pending, net.now + timeout):
        raise DiscoveryError(f"{peer.name}: registration timed out")


def rendezvous_exchange(net: Network, server: RendezvousServer, a: Peer, b: Peer,
                        timeout: SimTime = DEFAULT_WAIT_US) -> tuple[CandidateSet, CandidateSet, SimTime]:
    """Ask the server to introduce ``a`` and ``b``.

    Returns (b's candidates as seen by a, a's candidates as seen by b, start).
    """
    a.ensure_listening()
    b.ensure_listening()
    a.remote = b.remote = None
    a.exchange_status = b.exchange_status = None
    net.send(a.host, Datagram(a.local, server.endpoint, wire.exchange(a.peer_id, b.peer_id)))
    net.run_while(lambda: a.exchange_status is None or (
        a.exchange_status is ExchangeStatus.OK and b.remote is None), net.now + timeout)
    if a.exchange_status is ExchangeStatus.UNKNOWN_PEER:
        raise UnknownPeer(f"{b.name} is not registered")
    if a.remote is None or b.remote is None or a.punch_start != b.punch_start:
        raise DiscoveryError("rendezvous exchange did not complete")
    return a.remote, b.remote, a.punch_start
