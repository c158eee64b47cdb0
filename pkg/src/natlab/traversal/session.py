"""Session state machine, statistics and the probe/ack/ack-ack handshake."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from natlab import wire
from natlab.discovery import Peer
from natlab.natbox import NatDevice, first_hop_nat
from natlab.netsim import Datagram, Endpoint, Network, SimTime, Timer, TraceRecord
from natlab.wire import MessageKind


class Strategy(Enum):
    DIRECT = "Direct"
    PORT_MAPPING = "PortMapping"
    SIMPLE_PUNCH = "SimplePunch"
    BRUTE_FORCE = "BruteForce"
    BIRTHDAY = "Birthday"
    HAIRPIN = "Hairpin"
    RELAY = "Relay"


LADDER = tuple(Strategy)


class SessionState(Enum):
    IDLE = "Idle"
    GATHERING = "Gathering"
    PUNCHING = "Punching"
    ESTABLISHED = "Established"
    FAILED = "Failed"


class PathKind(Enum):
    DIRECT = "direct"
    HAIRPIN = "hairpin"
    RELAYED = "relayed"


class FailReason(Enum):
    TIMEOUT = "Timeout"
    NO_CANDIDATES = "NoCandidates"
    HAIRPIN_UNSUPPORTED = "HairpinUnsupported"
    RELAY_DOWN = "RelayDown"
    MAPPING_EXPIRED = "MappingExpired"
    ALL_STRATEGIES_EXHAUSTED = "AllStrategiesExhausted"
    TABLE_FULL = "TableFull"
    UNSUPPORTED = "Unsupported"


class IllegalTransition(RuntimeError):
    pass


_LEGAL = {
    SessionState.IDLE: {SessionState.GATHERING},
    SessionState.GATHERING: {SessionState.PUNCHING, SessionState.FAILED},
    SessionState.PUNCHING: {SessionState.ESTABLISHED, SessionState.FAILED},
    # An established session only degrades when its mappings lapse.
    SessionState.ESTABLISHED: {SessionState.FAILED},
    SessionState.FAILED: set(),
}

SIDES = ("a", "b")


@dataclass
class PunchStats:
    probes_sent: dict[str, int] = field(default_factory=lambda: dict.fromkeys(SIDES, 0))
    mappings_consumed: dict[str, int] = field(default_factory=lambda: dict.fromkeys(SIDES, 0))
    elapsed_us: SimTime = 0

    def __iadd__(self, other: "PunchStats") -> "PunchStats":
        for s in SIDES:
            self.probes_sent[s] += other.probes_sent[s]
            self.mappings_consumed[s] += other.mappings_consumed[s]
        self.elapsed_us += other.elapsed_us
        return self

    def to_dict(self) -> dict:
        return {"probes_sent": dict(self.probes_sent),
                "mappings_consumed": dict(self.mappings_consumed),
                "elapsed_us": self.elapsed_us}


@dataclass(frozen=True)
class Route:
    """Where one side sends to reach the other once a hole is open."""
    local_port: int
    remote: Endpoint
    relay_ids: tuple[Endpoint, Endpoint] | None = None  # (own id, peer id) when relayed


@dataclass
class TraversalSession:
    a: Peer
    b: Peer
    strategy: Strategy | None = None
    state: SessionState = SessionState.IDLE
    path: PathKind | None = None
    reason: FailReason | None = None
    stats: PunchStats = field(default_factory=PunchStats)
    routes: dict[str, Route] = field(default_factory=dict)
    nonce: bytes = b""
    app_received: dict[str, list[bytes]] = field(default_factory=lambda: {s: [] for s in SIDES})
    history: list[SessionState] = field(default_factory=list)

    def advance(self, new: SessionState) -> None:
        if new not in _LEGAL[self.state]:
            raise IllegalTransition(f"{self.state.value} -> {new.value}")
        self.history.append(self.state)
        self.state = new

    def establish(self, path: PathKind) -> None:
        self.advance(SessionState.ESTABLISHED)
        self.path = path

    def fail(self, reason: FailReason) -> None:
        if self.state is SessionState.IDLE:
            self.advance(SessionState.GATHERING)
        self.advance(SessionState.FAILED)
        self.reason = reason

    @property
    def established(self) -> bool:
        return self.state is SessionState.ESTABLISHED

    def peer(self, side: str) -> Peer:
        return self.a if side == "a" else self.b

    def describe(self) -> str:
        if self.established:
            return f"Established({self.path.value})"
        if self.state is SessionState.FAILED:
            return f"Failed({self.reason.value})"
        return self.state.value


def session_nonce(a: Peer, b: Peer, label: str, net: Network) -> bytes:
    ids = sorted((a.peer_id, b.peer_id))
    h = hashlib.sha256(ids[0] + ids[1] + label.encode() + net.now.to_bytes(8, "big"))
    return h.digest()[:8]


class _Side:
    __slots__ = ("label", "peer", "confirmed", "received", "route", "ports", "nat", "nat_base")

    def __init__(self, label: str, peer: Peer, nat: NatDevice | None):
        self.label = label
        self.peer = peer
        self.confirmed = False
        self.received = False
        self.route: Route | None = None
        self.ports: set[int] = set()
        self.nat = nat
        self.nat_base = nat.nat.created_by[peer.host.address] if nat else 0


class Handshake:
    """Three-message hole confirmation shared by every strategy.

    A side that receives PROBE answers PROBE_ACK from the same port; a side
    that receives PROBE_ACK answers ACK_ACK. A side counts as confirmed once
    it has received PROBE_ACK or ACK_ACK, which proves both directions work.
    """

    def __init__(self, net: Network, session: TraversalSession, relay: Endpoint | None = None):
        self.net = net
        self.session = session
        self.relay = relay
        self.sides = {
            "a": _Side("a", session.a, first_hop_nat(net, session.a.host)),
            "b": _Side("b", session.b, first_hop_nat(net, session.b.host)),
        }
        self.started_at: SimTime = net.now
        self.finished_at: SimTime | None = None
        self._timers: list[Timer] = []
        self._listeners: list[tuple] = []
        self.drop_reasons: dict[str, set[str]] = {"a": set(), "b": set()}
        self._drop_hook = self._on_drop
        net.drop_listeners.append(self._drop_hook)

    # -- plumbing -------------------------------------------------------------

    def other(self, label: str) -> str:
        return "b" if label == "a" else "a"

    def relay_id(self, label: str) -> Endpoint:
        n = self.session.nonce
        return Endpoint(int.from_bytes(n[:4], "big") or 1, 1 if label == "a" else 2)

    def listen(self, label: str, port: int) -> None:
        side = self.sides[label]
        if port in side.ports:
            return
        side.ports.add(port)
        handler = _PortHandler(self, label, port)
        side.peer.host.listen(port, handler)
        self._listeners.append((side.peer.host, port, handler))

    def send(self, label: str, port: int, dst: Endpoint, kind: MessageKind = MessageKind.PROBE,
             body: bytes | None = None) -> None:
        side = self.sides[label]
        self.listen(label, port)
        payload = body if body is not None else wire.probe(self.session.nonce, kind)
        if self.relay is not None:
            payload = wire.relay_fwd(tuple(self.relay_id(label)), tuple(self.relay_id(self.other(label))),
                                     payload)
            dst = self.relay
        self.session.stats.probes_sent[label] += 1
        self.net.send(side.peer.host, Datagram(side.peer.host.endpoint(port), dst, payload))

    def every(self, first: SimTime, interval: SimTime, action: Callable[[], bool]) -> None:
        """Run ``action`` at ``first`` and then every ``interval`` while it returns True."""
        def tick():
            if not self.done and action():
                self._timers.append(self.net.call_later(interval, tick))
        self._timers.append(self.net.schedule(max(first, self.net.now), tick))

    def at(self, when: SimTime, action: Callable[[], None]) -> Timer:
        t = self.net.schedule(max(when, self.net.now), action)
        self._timers.append(t)
        return t

    @property
    def done(self) -> bool:
        return self.sides["a"].confirmed and self.sides["b"].confirmed

    def run(self, deadline: SimTime, stop: Callable[[], bool] | None = None) -> bool:
        pending = (lambda: not self.done and not stop()) if stop else (lambda: not self.done)
        self.net.run_while(pending, deadline)
        return self.done

    def finish(self, path: PathKind | None, reason: FailReason | None) -> TraversalSession:
        """Cancel timers, record stats and move the session to its final state."""
        for t in self._timers:
            t.cancel()
        self._timers.clear()
        if self._drop_hook in self.net.drop_listeners:
            self.net.drop_listeners.remove(self._drop_hook)
        s = self.session
        s.stats.elapsed_us = self.net.now - self.started_at
        for label, side in self.sides.items():
            if side.nat is not None:
                s.stats.mappings_consumed[label] = (
                    side.nat.nat.created_by[side.peer.host.address] - side.nat_base)
        if path is not None and self.done:
            s.routes = {label: side.route for label, side in self.sides.items()}
            s.establish(path)
            _SessionGuard(self.net, s, self._listeners)
        else:
            for host, port, handler in self._listeners:
                host.unlisten(port, handler)
            s.fail(reason or FailReason.TIMEOUT)
        return s

    def _on_drop(self, rec: TraceRecord, d: Datagram) -> None:
        for label, side in self.sides.items():
            if d.src.host == side.peer.host.address or (side.nat and d.src.host == side.nat.address):
                self.drop_reasons[label].add(rec.reason)

    # -- protocol ---------------------------------------------------------------

    def on_message(self, label: str, port: int, d: Datagram) -> None:
        payload, reply_to, via = d.payload, d.src, None
        if payload and payload[0] == MessageKind.RELAY_FWD:
            src_id, _, payload = wire.decode_relay_fwd(payload)
            via = (self.relay_id(label), Endpoint(*src_id))
        if len(payload) != 9 or payload[1:] != self.session.nonce:
            return
        kind = payload[0]
        side = self.sides[label]
        side.received = True
        if kind == MessageKind.PROBE:
            self.send(label, port, reply_to, MessageKind.PROBE_ACK)
        elif kind in (MessageKind.PROBE_ACK, MessageKind.ACK_ACK):
            if kind == MessageKind.PROBE_ACK:
                self.send(label, port, reply_to, MessageKind.ACK_ACK)
            if not side.confirmed:
                side.confirmed = True
                side.route = Route(port, self.relay or reply_to, via)
                if self.done:
                    self.finished_at = self.net.now


class _PortHandler:
    __slots__ = ("hs", "label", "port")

    def __init__(self, hs: Handshake, label: str, port: int):
        self.hs, self.label, self.port = hs, label, port

    def __call__(self, net: Network, d: Datagram) -> None:
        self.hs.on_message(self.label, self.port, d)


class _SessionGuard:
    """Post-establishment transport: absorbs keepalives, collects APP data and
    degrades the session when a datagram for it is refused by a NAT."""

    def __init__(self, net: Network, session: TraversalSession, old_listeners: list[tuple]):
        self.net = net
        self.session = session
        for host, port, handler in old_listeners:
            host.unlisten(port, handler)
        self.handlers = []
        for label in SIDES:
            route = session.routes[label]
            host = session.peer(label).host
            h = _GuardHandler(self, label)
            host.listen(route.local_port, h)
            self.handlers.append((host, route.local_port, h))
        session.guard = self
        net.drop_listeners.append(self.on_drop)

    def on_message(self, label: str, d: Datagram) -> None:
        payload = d.payload
        if payload and payload[0] == MessageKind.RELAY_FWD:
            _, _, payload = wire.decode_relay_fwd(payload)
        if len(payload) >= 9 and payload[0] == MessageKind.APP and payload[1:9] == self.session.nonce:
            self.session.app_received[label].append(bytes(payload[9:]))

    def on_drop(self, rec: TraceRecord, d: Datagram) -> None:
        s = self.session
        if s.state is not SessionState.ESTABLISHED:
            return
        if rec.reason not in ("no-mapping", "filtered"):
            return
        p = d.payload
        if p and p[0] == MessageKind.RELAY_FWD:
            return
        if len(p) >= 9 and p[1:9] == s.nonce:
            s.fail(FailReason.MAPPING_EXPIRED)

    def close(self) -> None:
        for host, port, h in self.handlers:
            host.unlisten(port, h)
        if self.on_drop in self.net.drop_listeners:
            self.net.drop_listeners.remove(self.on_drop)


class _GuardHandler:
    __slots__ = ("guard", "label")

    def __init__(self, guard: _SessionGuard, label: str):
        self.guard, self.label = guard, label

    def __call__(self, net: Network, d: Datagram) -> None:
        self.guard.on_message(self.label, d)


def send_app(net: Network, session: TraversalSession, side: str, data: bytes = b"") -> None:
    """Send one application datagram from ``side`` over the established route."""
    if session.state is not SessionState.ESTABLISHED:
        raise RuntimeError(f"session is {session.describe()}")
    route = session.routes[side]
    host = session.peer(side).host
    payload = wire.app(session.nonce + data)
    if route.relay_ids is not None:
        own, peer = route.relay_ids
        payload = wire.relay_fwd(tuple(own), tuple(peer), payload)
    net.send(host, Datagram(host.endpoint(route.local_port), route.remote, payload))


def close_session(net: Network, session: TraversalSession) -> None:
    guard = getattr(session, "guard", None)
    if guard is not None:
        guard.close()
