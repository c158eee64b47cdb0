"""NAT device model: mapping table, filtering, port allocation, expiry,
hairpinning, capacity limits and nesting (CGNAT)."""

from __future__ import annotations

import json
import random
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from enum import Enum

from natlab import wire
from natlab.netsim import (Datagram, Endpoint, Network, Node, SimTime, TopologyError,
                           US_PER_S, format_host)
from natlab.wire import MessageKind, PmpStatus

PMP_PORT = 5351
DEFAULT_TTL_US = 30 * US_PER_S
DEFAULT_INNER_ADDRESS = 0x0A000001  # 10.0.0.1


class MappingBehavior(Enum):
    ENDPOINT_INDEPENDENT = "eim"
    ADDRESS_AND_PORT_DEPENDENT = "edm"


class FilteringBehavior(Enum):
    ENDPOINT_INDEPENDENT = "endpoint-independent"
    ADDRESS_DEPENDENT = "address-dependent"
    ADDRESS_AND_PORT_DEPENDENT = "address-and-port-dependent"


class NatClassName(Enum):
    OPEN_INTERNET = "OpenInternet"
    FULL_CONE = "FullCone"
    RESTRICTED_CONE = "RestrictedCone"
    PORT_RESTRICTED_CONE = "PortRestrictedCone"
    SYMMETRIC = "Symmetric"


@dataclass(frozen=True)
class Sequential:
    start: int = 1024


@dataclass(frozen=True)
class RandomPorts:
    pass


PortAllocation = Sequential | RandomPorts


class NatDrop(Exception):
    reason = "nat-drop"


class TableFull(NatDrop):
    reason = "table-full"


class PortExhausted(NatDrop):
    reason = "port-exhausted"


class HairpinDisabled(NatDrop):
    reason = "hairpin-disabled"


@dataclass(frozen=True)
class NatConfig:
    external_host: int
    mapping: MappingBehavior = MappingBehavior.ENDPOINT_INDEPENDENT
    filtering: FilteringBehavior = FilteringBehavior.ADDRESS_AND_PORT_DEPENDENT
    port_alloc: PortAllocation = field(default_factory=RandomPorts)
    mapping_ttl: SimTime | None = DEFAULT_TTL_US  # None means mappings never idle out
    max_mappings: int = 64000
    hairpinning: bool = False
    port_range: tuple[int, int] = (1024, 65535)
    port_mapping: bool = False
    cgnat: bool = False

    def __post_init__(self):
        if self.max_mappings < 1:
            raise ValueError("max_mappings must be >= 1")
        lo, hi = self.port_range
        if not 1 <= lo <= hi <= 65535:
            raise ValueError(f"bad port range {self.port_range}")
        if isinstance(self.port_alloc, Sequential) and not lo <= self.port_alloc.start <= hi:
            raise ValueError("sequential start must lie inside the port range")
        if self.mapping_ttl is not None and self.mapping_ttl < 0:
            raise ValueError("mapping_ttl must be non-negative")

    @property
    def nat_class(self) -> NatClassName:
        return class_of(self.mapping, self.filtering)

    @classmethod
    def for_class(cls, name: NatClassName, external_host: int, **kw) -> "NatConfig":
        if name is NatClassName.OPEN_INTERNET:
            raise ValueError("OpenInternet has no NAT")
        mapping, filtering = _CLASS_TABLE[name]
        return cls(external_host=external_host, mapping=mapping, filtering=filtering, **kw)


_CLASS_TABLE = {
    NatClassName.FULL_CONE: (MappingBehavior.ENDPOINT_INDEPENDENT, FilteringBehavior.ENDPOINT_INDEPENDENT),
    NatClassName.RESTRICTED_CONE: (MappingBehavior.ENDPOINT_INDEPENDENT, FilteringBehavior.ADDRESS_DEPENDENT),
    NatClassName.PORT_RESTRICTED_CONE: (MappingBehavior.ENDPOINT_INDEPENDENT,
                                        FilteringBehavior.ADDRESS_AND_PORT_DEPENDENT),
    NatClassName.SYMMETRIC: (MappingBehavior.ADDRESS_AND_PORT_DEPENDENT,
                             FilteringBehavior.ADDRESS_AND_PORT_DEPENDENT),
}


def class_of(mapping: MappingBehavior, filtering: FilteringBehavior) -> NatClassName:
    if mapping is MappingBehavior.ADDRESS_AND_PORT_DEPENDENT:
        return NatClassName.SYMMETRIC
    return {
        FilteringBehavior.ENDPOINT_INDEPENDENT: NatClassName.FULL_CONE,
        FilteringBehavior.ADDRESS_DEPENDENT: NatClassName.RESTRICTED_CONE,
        FilteringBehavior.ADDRESS_AND_PORT_DEPENDENT: NatClassName.PORT_RESTRICTED_CONE,
    }[filtering]


@dataclass(slots=True, eq=False)
class MappingEntry:
    internal: Endpoint
    remote_key: Endpoint | None
    external_port: int
    created: SimTime
    last_outbound: SimTime
    permitted_remotes: set = field(default_factory=set)
    static_until: SimTime | None = None

    def to_dict(self) -> dict:
        return {
            "internal": str(self.internal),
            "remote_key": None if self.remote_key is None else str(self.remote_key),
            "external_port": self.external_port,
            "last_outbound_us": self.last_outbound,
            "permitted_remotes": sorted(
                format_host(p) if isinstance(p, int) else str(Endpoint(*p))
                for p in self.permitted_remotes
            ),
        }


class PortPool:
    """Free external ports. Random draws are O(1) via swap-remove."""

    def __init__(self, lo: int, hi: int, policy: PortAllocation, rng: random.Random):
        self.lo, self.hi = lo, hi
        self.policy = policy
        self.rng = rng
        self._free = list(range(lo, hi + 1))
        self._pos = list(range(hi - lo + 1))  # -1 when in use
        self._cursor = policy.start if isinstance(policy, Sequential) else lo

    def __len__(self) -> int:
        return len(self._free)

    def is_free(self, port: int) -> bool:
        return self.lo <= port <= self.hi and self._pos[port - self.lo] >= 0

    def take(self, port: int) -> bool:
        if not self.is_free(port):
            return False
        i = self._pos[port - self.lo]
        last = self._free.pop()
        if last != port:
            self._free[i] = last
            self._pos[last - self.lo] = i
        self._pos[port - self.lo] = -1
        return True

    def allocate(self) -> int:
        if not self._free:
            raise PortExhausted("no free external port")
        if isinstance(self.policy, Sequential):
            port = self._cursor
            while not self.is_free(port):
                port = port + 1 if port < self.hi else self.lo
            self._cursor = port + 1 if port < self.hi else self.lo
        else:
            port = self._free[self.rng.randrange(len(self._free))]
        self.take(port)
        return port

    def release(self, port: int) -> None:
        idx = port - self.lo
        if self._pos[idx] >= 0:
            raise ValueError(f"port {port} is not in use")
        self._pos[idx] = len(self._free)
        self._free.append(port)


class Nat:
    """Translation table and policy for one NAT device."""

    def __init__(self, config: NatConfig, rng: random.Random | None = None):
        self.config = config
        self.pool = PortPool(*config.port_range, config.port_alloc, rng or random.Random(0))
        self.by_port: dict[int, MappingEntry] = {}
        self.by_key: dict[tuple, MappingEntry] = {}
        self._idle: OrderedDict[int, None] = OrderedDict()  # dynamic entries, oldest outbound first
        self._statics: dict[int, MappingEntry] = {}
        self.created_by: Counter = Counter()

    def __len__(self) -> int:
        return len(self.by_port)

    @property
    def external_host(self) -> int:
        return self.config.external_host

    def _key(self, internal: Endpoint, remote: Endpoint) -> tuple:
        if self.config.mapping is MappingBehavior.ENDPOINT_INDEPENDENT:
            return (internal, None)
        return (internal, remote)

    def _permit_token(self, remote: Endpoint):
        f = self.config.filtering
        if f is FilteringBehavior.ADDRESS_DEPENDENT:
            return remote.host
        if f is FilteringBehavior.ADDRESS_AND_PORT_DEPENDENT:
            return (remote.host, remote.port)
        return None

    def expire(self, now: SimTime) -> None:
        ttl = self.config.mapping_ttl
        if ttl is not None:
            idle = self._idle
            while idle:
                port = next(iter(idle))
                if now - self.by_port[port].last_outbound <= ttl:
                    break
                self._remove(port)
        if self._statics:
            for port in [p for p, e in self._statics.items() if now >= e.static_until]:
                self._remove(port)

    def _remove(self, port: int) -> None:
        entry = self.by_port.pop(port)
        key = (entry.internal, "static") if entry.static_until is not None else (entry.internal, entry.remote_key)
        if self.by_key.get(key) is entry:
            del self.by_key[key]
        self._idle.pop(port, None)
        self._statics.pop(port, None)
        self.pool.release(port)

    def _new_entry(self, internal, remote_key, now, port=None) -> MappingEntry:
        if len(self.by_port) >= self.config.max_mappings:
            raise TableFull(f"{len(self.by_port)} live mappings")
        if port is None:
            port = self.pool.allocate()
        entry = MappingEntry(internal, remote_key, port, now, now)
        self.by_port[port] = entry
        self.created_by[internal.host] += 1
        return entry

    def lookup_outbound(self, internal: Endpoint, remote: Endpoint) -> MappingEntry | None:
        static = self.by_key.get((internal, "static"))
        if static is not None:
            return static
        return self.by_key.get(self._key(internal, remote))

    def translate_outbound(self, d: Datagram, now: SimTime) -> Datagram:
        """Rewrite the source to the external mapping, creating it if needed.

        Hairpin targets are not treated here; see :meth:`process_outbound`.
        """
        self.expire(now)
        entry = self.lookup_outbound(d.src, d.dst)
        if entry is None:
            key = self._key(d.src, d.dst)
            entry = self._new_entry(d.src, key[1], now)
            self.by_key[key] = entry
        entry.last_outbound = now
        if entry.static_until is None:
            self._idle[entry.external_port] = None
            self._idle.move_to_end(entry.external_port)
        token = self._permit_token(d.dst)
        if token is not None:
            entry.permitted_remotes.add(token)
        return d.rewrite(src=Endpoint(self.config.external_host, entry.external_port))

    def translate_inbound(self, d: Datagram, now: SimTime) -> Datagram | None:
        self.expire(now)
        if d.dst.host != self.config.external_host:
            return None
        entry = self.by_port.get(d.dst.port)
        if entry is None or not self.admits(entry, d.src):
            return None
        return d.rewrite(dst=entry.internal)

    def admits(self, entry: MappingEntry, src: Endpoint) -> bool:
        if entry.static_until is not None:
            return True
        f = self.config.filtering
        if f is FilteringBehavior.ENDPOINT_INDEPENDENT:
            return True
        if f is FilteringBehavior.ADDRESS_DEPENDENT:
            return src.host in entry.permitted_remotes
        return (src.host, src.port) in entry.permitted_remotes

    def process_outbound(self, d: Datagram, now: SimTime) -> tuple[Datagram, bool]:
        """Translate an outbound datagram. Returns ``(datagram, hairpinned)``;
        a hairpinned datagram is already rewritten to its internal target."""
        if d.dst.host == self.config.external_host:
            if not self.config.hairpinning:
                raise HairpinDisabled("hairpinning disabled")
            out = self.translate_outbound(d, now)
            back = self.translate_inbound(out, now)
            if back is None:
                raise _Filtered()
            return back, True
        return self.translate_outbound(d, now), False

    def add_static(self, internal: Endpoint, requested: int, lifetime_us: SimTime,
                   now: SimTime) -> MappingEntry:
        """Install a port-forwarding entry (requested port if free, else allocated)."""
        self.expire(now)
        old = self.by_key.get((internal, "static"))
        if old is not None:
            if old.external_port == requested or requested == 0:
                old.static_until = now + lifetime_us
                return old
            self._remove(old.external_port)
        port = requested if requested and self.pool.take(requested) else None
        try:
            entry = self._new_entry(internal, None, now, port)
        except NatDrop:
            if port is not None:
                self.pool.release(port)
            raise
        entry.static_until = now + lifetime_us
        self.by_key[(internal, "static")] = entry
        self._statics[entry.external_port] = entry
        return entry

    def snapshot(self) -> list[dict]:
        return [self.by_port[p].to_dict() for p in sorted(self.by_port)]

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)


class _Filtered(NatDrop):
    reason = "filtered"


class NatDevice(Node):
    """A NAT box placed in the network. Its stub domain is the realm named after it."""

    def __init__(self, name: str, config: NatConfig, realm: str | None = None,
                 inner_address: int | None = None, rng: random.Random | None = None):
        super().__init__(name, config.external_host, realm)
        self.config = config
        self.nat = Nat(config, rng)
        self.inner_realm = name
        self.inner_address = DEFAULT_INNER_ADDRESS if inner_address is None else inner_address

    def handle(self, net: Network, d: Datagram, realm: str | None) -> str | None:
        now = net.now
        if realm == self.inner_realm:
            if d.dst.host == self.inner_address:
                return self._control(net, d)
            try:
                out, hairpin = self.nat.process_outbound(d, now)
            except NatDrop as exc:
                return exc.reason
            net.forward(self, out, self.inner_realm if hairpin else self.realm)
            return None
        back = self.nat.translate_inbound(d, now)
        if back is None:
            return "no-mapping" if d.dst.port not in self.nat.by_port else "filtered"
        net.forward(self, back, self.inner_realm)
        return None

    def _control(self, net: Network, d: Datagram) -> str | None:
        if d.dst.port != PMP_PORT or d.kind is not MessageKind.PMP_REQ:
            return "unreachable"
        internal_port, requested, lifetime_s = wire.decode_pmp_req(d.payload)
        if self.config.cgnat or not self.config.port_mapping:
            resp = wire.pmp_resp(PmpStatus.UNSUPPORTED, 0, 0)
        else:
            try:
                entry = self.nat.add_static(Endpoint(d.src.host, internal_port), requested,
                                            lifetime_s * US_PER_S, net.now)
                resp = wire.pmp_resp(PmpStatus.OK, entry.external_port, lifetime_s)
            except NatDrop:
                resp = wire.pmp_resp(PmpStatus.NO_RESOURCES, 0, 0)
        net.forward(self, Datagram(Endpoint(self.inner_address, PMP_PORT), d.src, resp), self.inner_realm)
        return None


def nest(net: Network, outer: str, inner: str) -> None:
    """Attach NAT ``inner``'s external side to ``outer``'s stub domain."""
    o, i = net.nodes[outer], net.nodes[inner]
    if not isinstance(o, NatDevice) or not isinstance(i, NatDevice):
        raise TopologyError("nest requires two NAT devices")
    realm = outer
    while realm is not None:
        if realm == inner:
            raise TopologyError(f"nesting {inner!r} behind {outer!r} creates a cycle")
        realm = net.nodes[realm].realm
    old = net._realms[i.realm]
    if old.get(i.address) is i:
        del old[i.address]
    target = net._realms.setdefault(outer, {})
    if i.address in target:
        raise TopologyError(f"address clash placing {inner!r} behind {outer!r}")
    target[i.address] = i
    i.realm = outer


def outermost_nat(net: Network, node: Node) -> NatDevice | None:
    chain = net.realm_chain(node)
    return net.nodes[chain[-1]] if chain else None


def first_hop_nat(net: Network, node: Node) -> NatDevice | None:
    return net.nodes[node.realm] if node.realm is not None else None
