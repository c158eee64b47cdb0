"""Deterministic discrete-event substrate for the NAT laboratory.

Time is an integer count of microseconds. Every node lives in an address
*realm*: ``None`` is the public Internet, and each NAT device owns the realm
named after itself (its stub domain). Datagrams travel hop by hop; every hop
produces exactly one ``send`` record and, on arrival, exactly one ``deliver``
or ``drop`` record.
"""

from __future__ import annotations

import hashlib
import heapq
import ipaddress
import json
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

from natlab.wire import FRAME_OVERHEAD, MessageKind

SimTime = int

US_PER_MS = 1_000
US_PER_S = 1_000_000


class TopologyError(ValueError):
    """Raised for malformed topologies (duplicate names, dangling links, cycles)."""


def parse_host(value: str | int) -> int:
    if isinstance(value, int):
        if not 0 <= value <= 0xFFFFFFFF:
            raise ValueError(f"host id out of range: {value}")
        return value
    return int(ipaddress.IPv4Address(value))


def format_host(host: int) -> str:
    return str(ipaddress.IPv4Address(host))


class Endpoint(NamedTuple):
    host: int
    port: int

    def __str__(self) -> str:
        return f"{format_host(self.host)}:{self.port}"

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        host, _, port = text.rpartition(":")
        return endpoint(host, int(port))


def endpoint(host: str | int, port: int) -> Endpoint:
    """Build a validated endpoint; port 0 and host 0 are reserved."""
    h = parse_host(host)
    if not 1 <= port <= 65535:
        raise ValueError(f"port out of range: {port}")
    if h == 0:
        raise ValueError("host 0 is reserved as unassigned")
    return Endpoint(h, port)


@dataclass(frozen=True, slots=True)
class Datagram:
    src: Endpoint
    dst: Endpoint
    payload: bytes

    @property
    def kind(self) -> MessageKind:
        return MessageKind(self.payload[0])

    @property
    def wire_bytes(self) -> int:
        return len(self.payload) + FRAME_OVERHEAD

    def rewrite(self, src: Endpoint | None = None, dst: Endpoint | None = None) -> "Datagram":
        return Datagram(src or self.src, dst or self.dst, self.payload)


@dataclass(frozen=True)
class LinkProfile:
    latency_us: SimTime = 10 * US_PER_MS
    loss_rate: float = 0.0
    rate_cap_pps: int | None = None

    def __post_init__(self):
        if self.latency_us < 0:
            raise ValueError("latency must be non-negative")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError("loss_rate must lie in [0, 1]")
        if self.rate_cap_pps is not None and self.rate_cap_pps <= 0:
            raise ValueError("rate_cap_pps must be positive")


DEFAULT_LINK = LinkProfile()


@dataclass(slots=True)
class TraceRecord:
    time_us: SimTime
    type: str
    src: Endpoint | None
    dst: Endpoint | None
    kind: str | None
    seq: int
    at: str = ""
    reason: str = ""

    def to_json(self) -> str:
        obj = {
            "time_us": self.time_us,
            "type": self.type,
            "src": str(self.src) if self.src else None,
            "dst": str(self.dst) if self.dst else None,
            "kind": self.kind,
            "seq": self.seq,
        }
        if self.at:
            obj["at"] = self.at
        if self.reason:
            obj["reason"] = self.reason
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def trace_to_jsonl(records: Iterable[TraceRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


@dataclass(slots=True)
class LinkStats:
    sends: int = 0
    delivers: int = 0
    drops: int = 0


@dataclass(slots=True)
class _Hop:
    datagram: Datagram
    frm: str
    to: str
    realm: str | None
    seq: int
    link: tuple[str, str]


class Timer:
    __slots__ = ("when", "callback", "cancelled")

    def __init__(self, when: SimTime, callback: Callable[[], None]):
        self.when = when
        self.callback = callback
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Node:
    """Anything that can receive a hop. Subclasses implement :meth:`handle`."""

    def __init__(self, name: str, address: int, realm: str | None = None):
        self.name = name
        self.address = address
        self.realm = realm
        self.up = True

    # Returns a drop reason, or None when the datagram was accepted.
    def handle(self, net: "Network", datagram: Datagram, realm: str | None) -> str | None:
        raise NotImplementedError


Handler = Callable[["Network", Datagram], None]


class Host(Node):
    """An end host. Applications attach listeners to local ports."""

    def __init__(self, name: str, address: int, realm: str | None = None):
        super().__init__(name, address, realm)
        self.listeners: dict[int, list[Handler]] = {}

    def listen(self, port: int, handler: Handler) -> None:
        self.listeners.setdefault(port, []).append(handler)

    def unlisten(self, port: int, handler: Handler) -> None:
        handlers = self.listeners.get(port, [])
        if handler in handlers:
            handlers.remove(handler)

    def endpoint(self, port: int) -> Endpoint:
        return Endpoint(self.address, port)

    def handle(self, net, datagram, realm):
        if datagram.dst.host != self.address:
            return "misdelivered"
        for handler in list(self.listeners.get(datagram.dst.port, ())):
            handler(net, datagram)
        return None


def derive_seed(root: int, *labels: object) -> int:
    text = "/".join([str(root), *map(str, labels)]).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "big")


class Network:
    """The simulation: nodes, links, clock, event queue and trace."""

    def __init__(self, seed: int = 0, default_link: LinkProfile = DEFAULT_LINK, trace: bool = True):
        self.seed = seed
        self.default_link = default_link
        self.now: SimTime = 0
        self.nodes: dict[str, Node] = {}
        self.links: dict[frozenset, LinkProfile] = {}
        self.link_stats: dict[tuple[str, str], LinkStats] = {}
        self.trace_enabled = trace
        self.trace: list[TraceRecord] = []
        self.drop_listeners: list[Callable[[TraceRecord, Datagram], None]] = []
        self._queue: list = []
        self._seq = 0
        self._realms: dict[str | None, dict[int, Node]] = {None: {}}
        self._rngs: dict[str, random.Random] = {}
        self._next_free: dict[tuple[str, str], SimTime] = {}

    # -- construction -----------------------------------------------------

    def add_node(self, node: Node) -> Node:
        if node.name in self.nodes:
            raise TopologyError(f"duplicate node name: {node.name}")
        if node.realm is not None and node.realm not in self.nodes:
            raise TopologyError(f"{node.name}: unknown realm {node.realm!r}")
        realm = self._realms.setdefault(node.realm, {})
        if node.address in realm:
            raise TopologyError(
                f"{node.name}: address {format_host(node.address)} already used in realm "
                f"{node.realm or 'internet'}"
            )
        realm[node.address] = node
        self.nodes[node.name] = node
        inner = getattr(node, "inner_realm", None)
        if inner is not None:
            self._realms.setdefault(inner, {})
            local = getattr(node, "inner_address", None)
            if local is not None:
                self._realms[inner][local] = node
        return node

    def add_host(self, name: str, address: str | int, realm: str | None = None) -> Host:
        return self.add_node(Host(name, parse_host(address), realm))

    def link(self, a: str, b: str, profile: LinkProfile) -> None:
        for n in (a, b):
            if n not in self.nodes:
                raise TopologyError(f"link references unknown node {n!r}")
        self.links[frozenset((a, b))] = profile

    def profile(self, a: str, b: str) -> LinkProfile:
        return self.links.get(frozenset((a, b)), self.default_link)

    def rng(self, stream: str) -> random.Random:
        r = self._rngs.get(stream)
        if r is None:
            r = self._rngs[stream] = random.Random(derive_seed(self.seed, stream))
        return r

    # -- routing ------------------------------------------------------------

    def next_hop(self, realm: str | None, dst_host: int) -> Node | None:
        node = self._realms.get(realm, {}).get(dst_host)
        if node is not None:
            return node
        if realm is None:
            return None
        return self.nodes[realm]

    def realm_chain(self, node: Node) -> list[str]:
        """Names of the NATs between ``node`` and the public Internet, innermost first."""
        chain = []
        realm = node.realm
        while realm is not None:
            chain.append(realm)
            realm = self.nodes[realm].realm
        return chain

    # -- sending ------------------------------------------------------------

    def send(self, origin: str | Node, datagram: Datagram) -> None:
        """Inject a datagram from an end host."""
        node = self.nodes[origin] if isinstance(origin, str) else origin
        if datagram.src.host != node.address:
            raise ValueError(f"{node.name} does not own source address {datagram.src}")
        self.forward(node, datagram, node.realm)

    def forward(self, frm: Node, datagram: Datagram, realm: str | None) -> None:
        """Emit the next hop of ``datagram`` from ``frm`` inside ``realm``."""
        seq = self._next_seq()
        to = self.next_hop(realm, datagram.dst.host)
        if to is None:
            self._record(TraceRecord(self.now, "send", datagram.src, datagram.dst,
                                     datagram.kind.name, seq, frm.name))
            self._drop(datagram, seq, frm.name, "unroutable", None)
            return
        key = (frm.name, to.name)
        stats = self.link_stats.get(key)
        if stats is None:
            stats = self.link_stats[key] = LinkStats()
        stats.sends += 1
        self._record(TraceRecord(self.now, "send", datagram.src, datagram.dst,
                                 datagram.kind.name, seq, frm.name))
        prof = self.profile(frm.name, to.name)
        if prof.loss_rate > 0.0:
            stream = self.rng("link:" + "|".join(sorted(key)))
            if stream.random() < prof.loss_rate:
                self._drop(datagram, seq, to.name, "loss", key)
                return
        depart = self.now
        if prof.rate_cap_pps is not None:
            depart = max(depart, self._next_free.get(key, 0))
            self._next_free[key] = depart + -(-US_PER_S // prof.rate_cap_pps)
        hop = _Hop(datagram, frm.name, to.name, realm, seq, key)
        heapq.heappush(self._queue, (depart + prof.latency_us, seq, hop))

    def schedule(self, when: SimTime, callback: Callable[[], None]) -> Timer:
        if when < self.now:
            raise ValueError("cannot schedule in the past")
        timer = Timer(when, callback)
        heapq.heappush(self._queue, (when, self._next_seq(), timer))
        return timer

    def call_later(self, delay: SimTime, callback: Callable[[], None]) -> Timer:
        return self.schedule(self.now + delay, callback)

    # -- event loop -----------------------------------------------------------

    def peek_time(self) -> SimTime | None:
        return self._queue[0][0] if self._queue else None

    def step(self) -> TraceRecord | None:
        """Process the earliest event. Returns its outcome record, or None if idle."""
        while self._queue:
            when, seq, item = heapq.heappop(self._queue)
            if isinstance(item, Timer):
                if item.cancelled:
                    continue
                self.now = when
                item.callback()
                return TraceRecord(when, "timer", None, None, None, seq)
            self.now = when
            return self._arrive(item)
        return None

    def run_until(self, limit: SimTime | None = None) -> list[TraceRecord]:
        """Step until the queue is empty or the next event lies beyond ``limit``.

        With a limit, the clock is advanced to it afterwards. Returns the trace
        records produced during the call.
        """
        if limit is not None and limit < self.now:
            raise ValueError("limit lies in the past")
        mark = len(self.trace)
        while self._queue and (limit is None or self._queue[0][0] <= limit):
            self.step()
        if limit is not None:
            self.now = limit
        return self.trace[mark:]

    def run_while(self, pending: Callable[[], bool], deadline: SimTime) -> bool:
        """Step while ``pending()`` holds and events remain before ``deadline``.

        Returns True if ``pending()`` became false. The clock ends at the
        deadline when it was reached.
        """
        while pending():
            if not self._queue or self._queue[0][0] > deadline:
                self.now = max(self.now, deadline)
                return not pending()
            self.step()
        return True

    # -- internals ---------------------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _record(self, rec: TraceRecord) -> None:
        if self.trace_enabled:
            self.trace.append(rec)

    def _drop(self, datagram, seq, at, reason, key) -> None:
        if key is not None:
            self.link_stats[key].drops += 1
        rec = TraceRecord(self.now, "drop", datagram.src, datagram.dst,
                          datagram.kind.name, seq, at, reason)
        self._record(rec)
        for listener in self.drop_listeners:
            listener(rec, datagram)

    def _arrive(self, hop: _Hop) -> TraceRecord:
        node = self.nodes[hop.to]
        d = hop.datagram
        reason = "node-down" if not node.up else None
        if reason is None:
            # Deliver record first so follow-up hops appear after it in the trace.
            rec = TraceRecord(self.now, "deliver", d.src, d.dst, d.kind.name, hop.seq, node.name)
            mark = len(self.trace)
            reason = node.handle(self, d, hop.realm)
            if reason is None:
                self.link_stats[hop.link].delivers += 1
                if self.trace_enabled:
                    self.trace.insert(mark, rec)
                return rec
        self._drop(d, hop.seq, node.name, reason, hop.link)
        return self.trace[-1] if self.trace_enabled else TraceRecord(
            self.now, "drop", d.src, d.dst, d.kind.name, hop.seq, node.name, reason)


def build_network(spec: dict | None = None, *, trace: bool = True) -> Network:
    """Build a network from a plain topology description.

    ``spec`` keys: ``seed``, ``default_link`` (LinkProfile kwargs), ``nodes``
    (list of dicts with ``name``, ``kind`` = host|nat, ``address`` or NAT
    ``config``, optional ``behind``), ``links`` (list of dicts with ``a``,
    ``b`` and LinkProfile kwargs).
    """
    spec = spec or {}
    net = Network(
        seed=int(spec.get("seed", 0)),
        default_link=LinkProfile(**spec.get("default_link", {})),
        trace=trace,
    )
    nodes = list(spec.get("nodes", []))
    names = [n["name"] for n in nodes]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise TopologyError(f"duplicate node name: {sorted(dup)[0]}")
    by_name = {n["name"]: n for n in nodes}
    for n in nodes:
        behind = n.get("behind")
        if behind is not None and (behind not in by_name or by_name[behind].get("kind") != "nat"):
            raise TopologyError(f"{n['name']}: 'behind' references unknown NAT {behind!r}")
    order = _nesting_order(nodes, by_name)
    for n in order:
        if n.get("kind", "host") == "nat":
            from natlab.natbox import NatDevice, NatConfig

            cfg = n["config"]
            if isinstance(cfg, dict):
                cfg = NatConfig(**cfg)
            inner = n.get("inner_address")
            net.add_node(NatDevice(n["name"], cfg, realm=n.get("behind"),
                                   inner_address=None if inner is None else parse_host(inner),
                                   rng=net.rng("nat:" + n["name"])))
        else:
            net.add_host(n["name"], n["address"], n.get("behind"))
    for link in spec.get("links", []):
        a, b = link["a"], link["b"]
        params = {k: v for k, v in link.items() if k not in ("a", "b")}
        net.link(a, b, LinkProfile(**params))
    return net


def _nesting_order(nodes: list[dict], by_name: dict[str, dict]) -> list[dict]:
    """Topologically sort nodes so every NAT precedes what sits behind it."""
    placed: dict[str, int] = {}
    out: list[dict] = []

    def visit(n: dict, stack: tuple[str, ...]) -> None:
        name = n["name"]
        if placed.get(name) == 2:
            return
        if name in stack:
            raise TopologyError(f"cycle in NAT nesting through {name!r}")
        behind = n.get("behind")
        if behind is not None:
            visit(by_name[behind], stack + (name,))
        placed[name] = 2
        out.append(n)

    for n in nodes:
        visit(n, ())
    return out
