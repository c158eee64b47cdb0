"""Line-based scenario files describing topology, NAT policy and strategy ladder.

Each non-blank line is a directive followed by ``key=value`` fields; ``#``
starts a comment and values may be quoted::

    seed 42
    default-link latency_ms=10 loss=0
    nat tmo external=198.51.100.10 class=PortRestrictedCone carrier=T-Mobile cgnat=yes
    host phone1 address=10.0.0.2 behind=tmo role=peer
    host stun1 address=192.0.2.1 role=stun
    link phone1 tmo latency_ms=5
    policy ladder=SimplePunch,Birthday pps=57000
    run limit_s=120
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path

from natlab.natbox import (FilteringBehavior, MappingBehavior, NatClassName, NatConfig, RandomPorts,
                           Sequential)
from natlab.netsim import DEFAULT_LINK, LinkProfile, US_PER_MS, US_PER_S, parse_host
from natlab.traversal.ice import Carrier, Policy, parse_ladder

ROLES = ("peer", "stun", "rendezvous", "relay", "plain")
BUILTIN_DIR = Path(__file__).with_name("scenarios")


class ScenarioError(ValueError):
    """One or more line-anchored problems in a scenario."""

    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = errors
        super().__init__("\n".join(f"line {n}: {msg}" for n, msg in errors))


@dataclass
class NatDef:
    name: str
    config: NatConfig
    behind: str | None = None
    inner_address: int | None = None
    carrier: str | None = None
    line: int = 0


@dataclass
class HostDef:
    name: str
    address: int
    behind: str | None = None
    role: str = "plain"
    port: int = 4000
    line: int = 0


@dataclass
class LinkDef:
    a: str
    b: str
    profile: LinkProfile
    line: int = 0


@dataclass
class ScenarioSpec:
    seed: int = 0
    default_link: LinkProfile = DEFAULT_LINK
    nats: list[NatDef] = field(default_factory=list)
    hosts: list[HostDef] = field(default_factory=list)
    links: list[LinkDef] = field(default_factory=list)
    policy: Policy = field(default_factory=Policy)
    run_limit_us: int = 600 * US_PER_S

    @property
    def nodes(self) -> list[str]:
        return [n.name for n in self.nats] + [h.name for h in self.hosts]

    @property
    def peers(self) -> list[HostDef]:
        return [h for h in self.hosts if h.role == "peer"]

    def with_role(self, role: str) -> list[HostDef]:
        return [h for h in self.hosts if h.role == role]

    @property
    def carriers(self) -> list[Carrier]:
        return [Carrier(n.carrier, n.config) for n in self.nats if n.carrier]


_MAPPING = {"eim": MappingBehavior.ENDPOINT_INDEPENDENT, "endpoint-independent": MappingBehavior.ENDPOINT_INDEPENDENT,
            "edm": MappingBehavior.ADDRESS_AND_PORT_DEPENDENT,
            "address-and-port-dependent": MappingBehavior.ADDRESS_AND_PORT_DEPENDENT}
_FILTERING = {"endpoint": FilteringBehavior.ENDPOINT_INDEPENDENT,
              "endpoint-independent": FilteringBehavior.ENDPOINT_INDEPENDENT,
              "address": FilteringBehavior.ADDRESS_DEPENDENT,
              "address-dependent": FilteringBehavior.ADDRESS_DEPENDENT,
              "address-port": FilteringBehavior.ADDRESS_AND_PORT_DEPENDENT,
              "address-and-port-dependent": FilteringBehavior.ADDRESS_AND_PORT_DEPENDENT}
_CLASSES = {c.value.lower(): c for c in NatClassName if c is not NatClassName.OPEN_INTERNET}
_BOOL = {"yes": True, "true": True, "on": True, "1": True, "no": False, "false": False, "off": False, "0": False}

_NAT_KEYS = {"external", "class", "mapping", "filtering", "alloc", "ttl_s", "ttl_ms", "max_mappings",
             "hairpin", "ports", "pmp", "cgnat", "behind", "inner", "carrier"}
_HOST_KEYS = {"address", "behind", "role", "port"}
_LINK_KEYS = {"latency_ms", "latency_us", "loss", "rate_pps"}
_POLICY_KEYS = {"ladder", "k", "chunk", "pps", "ports", "timeout_ms", "retry_ms"}
_RUN_KEYS = {"limit_s"}


class _LineError(Exception):
    pass


def _enum(table: dict, value: str, what: str):
    try:
        return table[value.lower()]
    except KeyError:
        raise _LineError(f"invalid {what} {value!r} (expected one of {', '.join(sorted(table))})") from None


def _int(value: str, what: str, lo: int | None = None, hi: int | None = None) -> int:
    try:
        n = int(value, 0)
    except ValueError:
        raise _LineError(f"{what} must be an integer, got {value!r}") from None
    if (lo is not None and n < lo) or (hi is not None and n > hi):
        raise _LineError(f"{what} out of range: {n}")
    return n


def _float(value: str, what: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise _LineError(f"{what} must be a number, got {value!r}") from None


def _bool(value: str, what: str) -> bool:
    return _enum(_BOOL, value, what)


def _range(value: str) -> tuple[int, int]:
    lo, sep, hi = value.partition("-")
    if not sep:
        raise _LineError(f"port range must look like LO-HI, got {value!r}")
    return _int(lo, "port", 1, 65535), _int(hi, "port", 1, 65535)


def _host(value: str) -> int:
    try:
        return parse_host(value)
    except (ValueError, OverflowError):
        raise _LineError(f"invalid address {value!r}") from None


def _fields(tokens: list[str], allowed: set[str]) -> dict[str, str]:
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep:
            raise _LineError(f"expected key=value, got {tok!r}")
        if key not in allowed:
            raise _LineError(f"unknown key {key!r}")
        if key in out:
            raise _LineError(f"duplicate key {key!r}")
        out[key] = value
    return out


def _link_profile(f: dict[str, str], base: LinkProfile = DEFAULT_LINK) -> LinkProfile:
    latency = base.latency_us
    if "latency_ms" in f:
        latency = round(_float(f["latency_ms"], "latency_ms") * US_PER_MS)
    if "latency_us" in f:
        latency = _int(f["latency_us"], "latency_us", 0)
    loss = _float(f["loss"], "loss") if "loss" in f else base.loss_rate
    rate = _int(f["rate_pps"], "rate_pps", 1) if "rate_pps" in f else base.rate_cap_pps
    try:
        return LinkProfile(latency, loss, rate)
    except ValueError as exc:
        raise _LineError(str(exc)) from None


def _nat(name: str, f: dict[str, str], line: int) -> NatDef:
    if "external" not in f:
        raise _LineError("nat needs external=<address>")
    kw: dict = {}
    if "class" in f:
        cls = _enum(_CLASSES, f["class"], "NAT class")
        if "mapping" in f or "filtering" in f:
            raise _LineError("give either class= or mapping=/filtering=, not both")
        proto = NatConfig.for_class(cls, 1)
        kw["mapping"], kw["filtering"] = proto.mapping, proto.filtering
    if "mapping" in f:
        kw["mapping"] = _enum(_MAPPING, f["mapping"], "mapping behavior")
    if "filtering" in f:
        kw["filtering"] = _enum(_FILTERING, f["filtering"], "filtering behavior")
    if "alloc" in f:
        v = f["alloc"].lower()
        if v == "random":
            kw["port_alloc"] = RandomPorts()
        elif v.startswith("sequential"):
            _, _, start = v.partition(":")
            lo = _range(f["ports"])[0] if "ports" in f else 1024
            kw["port_alloc"] = Sequential(_int(start, "sequential start", 1, 65535) if start else lo)
        else:
            raise _LineError(f"invalid port allocation {f['alloc']!r} (expected random or sequential[:start])")
    if "ttl_s" in f:
        kw["mapping_ttl"] = None if f["ttl_s"] == "inf" else round(_float(f["ttl_s"], "ttl_s") * US_PER_S)
    if "ttl_ms" in f:
        kw["mapping_ttl"] = round(_float(f["ttl_ms"], "ttl_ms") * US_PER_MS)
    if "max_mappings" in f:
        kw["max_mappings"] = _int(f["max_mappings"], "max_mappings", 1)
    if "hairpin" in f:
        kw["hairpinning"] = _bool(f["hairpin"], "hairpin flag")
    if "ports" in f:
        kw["port_range"] = _range(f["ports"])
    if "pmp" in f:
        kw["port_mapping"] = _bool(f["pmp"], "pmp flag")
    if "cgnat" in f:
        kw["cgnat"] = _bool(f["cgnat"], "cgnat flag")
    try:
        cfg = NatConfig(external_host=_host(f["external"]), **kw)
    except ValueError as exc:
        raise _LineError(str(exc)) from None
    inner = _host(f["inner"]) if "inner" in f else None
    return NatDef(name, cfg, f.get("behind"), inner, f.get("carrier"), line)


def _policy(f: dict[str, str]) -> Policy:
    kw: dict = {}
    try:
        if "ladder" in f:
            kw["ladder"] = parse_ladder(f["ladder"])
        if "k" in f:
            kw["birthday_k"] = _int(f["k"], "k", 1)
        if "chunk" in f:
            kw["birthday_chunk"] = None if f["chunk"] == "none" else _int(f["chunk"], "chunk", 0)
        if "pps" in f:
            kw["pps"] = _int(f["pps"], "pps", 1)
        if "ports" in f:
            kw["port_range"] = _range(f["ports"])
        if "timeout_ms" in f:
            kw["timeout_us"] = _int(f["timeout_ms"], "timeout_ms", 1) * US_PER_MS
        if "retry_ms" in f:
            kw["retry_us"] = _int(f["retry_ms"], "retry_ms", 1) * US_PER_MS
        return Policy(**kw)
    except ValueError as exc:
        raise _LineError(str(exc)) from None


def parse_scenario(text: str) -> ScenarioSpec:
    """Parse and validate a scenario; raises ScenarioError listing every bad line."""
    spec = ScenarioSpec()
    errors: list[tuple[int, str]] = []
    seen: dict[str, int] = {}
    link_fields = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        try:
            tokens = shlex.split(raw, comments=True)
        except ValueError as exc:
            errors.append((lineno, f"cannot tokenize: {exc}"))
            continue
        if not tokens:
            continue
        directive, args = tokens[0].lower(), tokens[1:]
        try:
            if directive == "seed":
                if len(args) != 1:
                    raise _LineError("seed takes one value")
                spec.seed = _int(args[0], "seed", 0, 2**64 - 1)
            elif directive == "default-link":
                link_fields = _fields(args, _LINK_KEYS)
                spec.default_link = _link_profile(link_fields)
            elif directive in ("nat", "host"):
                if not args or "=" in args[0]:
                    raise _LineError(f"{directive} needs a name")
                name = args[0]
                if name in seen:
                    raise _LineError(f"duplicate node name {name!r} (first defined on line {seen[name]})")
                if directive == "nat":
                    spec.nats.append(_nat(name, _fields(args[1:], _NAT_KEYS), lineno))
                else:
                    f = _fields(args[1:], _HOST_KEYS)
                    if "address" not in f:
                        raise _LineError("host needs address=<address>")
                    role = _enum({r: r for r in ROLES}, f.get("role", "plain"), "role")
                    port = _int(f.get("port", "4000"), "port", 1, 65535)
                    spec.hosts.append(HostDef(name, _host(f["address"]), f.get("behind"), role, port, lineno))
                seen[name] = lineno
            elif directive == "link":
                if len(args) < 2 or "=" in args[0] or "=" in args[1]:
                    raise _LineError("link needs two node names")
                spec.links.append(LinkDef(args[0], args[1], _link_profile(_fields(args[2:], _LINK_KEYS)),
                                          lineno))
            elif directive == "policy":
                spec.policy = _policy(_fields(args, _POLICY_KEYS))
            elif directive == "run":
                f = _fields(args, _RUN_KEYS)
                if "limit_s" in f:
                    spec.run_limit_us = round(_float(f["limit_s"], "limit_s") * US_PER_S)
            else:
                raise _LineError(f"unknown directive {tokens[0]!r}")
        except _LineError as exc:
            errors.append((lineno, str(exc)))
    errors.extend(_validate(spec))
    if errors:
        raise ScenarioError(sorted(errors))
    return spec


def _validate(spec: ScenarioSpec) -> list[tuple[int, str]]:
    errors = []
    nats = {n.name: n for n in spec.nats}
    names = set(spec.nodes)
    for n in spec.nats:
        if n.behind is not None and n.behind not in nats:
            errors.append((n.line, f"nat {n.name!r} is behind undefined NAT {n.behind!r}"))
    for h in spec.hosts:
        if h.behind is not None and h.behind not in nats:
            errors.append((h.line, f"host {h.name!r} is behind undefined NAT {h.behind!r}"))
        if h.role in ("stun", "rendezvous", "relay") and h.behind is not None:
            errors.append((h.line, f"{h.role} server {h.name!r} must sit on the public Internet"))
    for link in spec.links:
        for end in (link.a, link.b):
            if end not in names:
                errors.append((link.line, f"link references undefined node {end!r}"))
    for n in spec.nats:
        path, cur = [n.name], n.behind
        while cur is not None and cur in nats:
            if cur in path:
                errors.append((n.line, f"nesting cycle through {n.name!r}"))
                break
            path.append(cur)
            cur = nats[cur].behind
    stun = spec.with_role("stun")
    if len(stun) > 2:
        errors.append((stun[2].line, "at most two STUN servers are supported"))
    for role in ("rendezvous", "relay"):
        extra = spec.with_role(role)[1:]
        if extra:
            errors.append((extra[0].line, f"at most one {role} server is supported"))
    labels: dict[str, int] = {}
    for n in spec.nats:
        if n.carrier:
            if n.carrier in labels:
                errors.append((n.line, f"carrier {n.carrier!r} already defined on line {labels[n.carrier]}"))
            labels[n.carrier] = n.line
    return errors


def load_scenario(path: str | Path) -> ScenarioSpec:
    """Read a scenario file; a bare name falls back to the bundled scenarios."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        candidate = BUILTIN_DIR / f"{p.name}.scn"
        if candidate.exists():
            p = candidate
    return parse_scenario(p.read_text())


def build_world(spec: ScenarioSpec, seed: int | None = None, trace: bool = False):
    """Instantiate the scenario as a :class:`natlab.lab.World`."""
    from natlab.lab import World

    servers: dict[str, tuple[str, int]] = {}
    for role, h in zip(("stun-a", "stun-b"), spec.with_role("stun")):
        servers[role] = (h.name, h.address)
    for role in ("rendezvous", "relay"):
        hosts = spec.with_role(role)
        if hosts:
            servers[role] = (hosts[0].name, hosts[0].address)
    world = World(spec.seed if seed is None else seed, spec.default_link, trace, servers=servers)
    placed: set[str] = set()
    pending = list(spec.nats)
    while pending:
        progress = False
        for n in list(pending):
            if n.behind is None or n.behind in placed:
                world.add_nat(n.name, n.config, n.behind, n.inner_address)
                placed.add(n.name)
                pending.remove(n)
                progress = True
        if not progress:
            raise ScenarioError([(pending[0].line, "unresolvable NAT nesting")])
    for h in spec.hosts:
        if h.role in ("stun", "rendezvous", "relay"):
            continue
        if h.role == "peer":
            world.add_peer(h.name, h.address, h.behind, h.port)
        else:
            world.add_host(h.name, h.address, h.behind)
    for link in spec.links:
        world.net.link(link.a, link.b, link.profile)
    return world


__all__ = ["ScenarioSpec", "ScenarioError", "NatDef", "HostDef", "LinkDef", "parse_scenario",
           "load_scenario", "build_world", "ROLES"]
