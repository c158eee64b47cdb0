"""Ready-made worlds: public servers plus peers placed behind NAT chains."""

from __future__ import annotations

from natlab.discovery import Peer, RendezvousServer, StunServer, register
from natlab.natbox import NatConfig, NatDevice
from natlab.netsim import DEFAULT_LINK, Host, LinkProfile, Network, parse_host
from natlab.traversal.strategies import RelayServer

STUN_A_ADDR = "192.0.2.1"
STUN_B_ADDR = "192.0.2.2"
RENDEZVOUS_ADDR = "192.0.2.10"
RELAY_ADDR = "192.0.2.20"
DEFAULT_PEER_PORT = 4000


class World:
    """A network with two paired STUN servers, a rendezvous server and a relay.

    >>> w = World(seed=1)
    >>> alice = w.add_peer("alice", "203.0.113.5")
    >>> w.discover(alice).nat_class.value
    'OpenInternet'
    """

    def __init__(self, seed: int = 0, default_link: LinkProfile = DEFAULT_LINK, trace: bool = False,
                 with_relay: bool = True, servers: dict[str, tuple[str, str | int]] | None = None):
        """``servers`` maps role (stun-a, stun-b, rendezvous, relay) to
        (node name, address) and replaces the default server set entirely."""
        self.net = Network(seed, default_link, trace)
        defaults = {"stun-a": ("stun-a", STUN_A_ADDR), "stun-b": ("stun-b", STUN_B_ADDR),
                    "rendezvous": ("rendezvous", RENDEZVOUS_ADDR)}
        if with_relay:
            defaults["relay"] = ("relay", RELAY_ADDR)
        roles = defaults if servers is None else dict(servers)
        self.stun_a = self.stun_b = None
        self.rendezvous: RendezvousServer | None = None
        self.relay: RelayServer | None = None
        for role in ("stun-a", "stun-b", "rendezvous", "relay"):
            if role not in roles:
                continue
            name, addr = roles[role]
            host = self.net.add_host(name, addr)
            if role == "stun-a":
                self.stun_a = StunServer(self.net, host)
            elif role == "stun-b":
                self.stun_b = StunServer(self.net, host)
            elif role == "rendezvous":
                self.rendezvous = RendezvousServer(self.net, host)
            else:
                self.relay = RelayServer(self.net, host)
        if self.stun_a is not None and self.stun_b is not None:
            self.stun_a.pair(self.stun_b)
        self.peers: dict[str, Peer] = {}

    def add_nat(self, name: str, config: NatConfig, behind: str | None = None,
                inner_address: str | int | None = None) -> NatDevice:
        dev = NatDevice(name, config, realm=behind,
                        inner_address=None if inner_address is None else parse_host(inner_address),
                        rng=self.net.rng("nat:" + name))
        self.net.add_node(dev)
        return dev

    def add_host(self, name: str, address: str | int, behind: str | None = None) -> Host:
        return self.net.add_host(name, address, behind)

    def add_peer(self, name: str, address: str | int, behind: str | None = None,
                 port: int = DEFAULT_PEER_PORT) -> Peer:
        peer = Peer(self.add_host(name, address, behind), port, name)
        self.peers[name] = peer
        return peer

    def discover(self, peer: Peer, classify: bool = True) -> Peer:
        if self.stun_a is None:
            raise ValueError("world has no STUN server")
        peer.discover(self.net, self.stun_a, self.stun_b if classify else None)
        return peer

    def register(self, *peers: Peer) -> None:
        for p in peers:
            register(self.net, p, self.rendezvous)

    def nat(self, name: str) -> NatDevice:
        return self.net.nodes[name]


__all__ = ["World", "DEFAULT_PEER_PORT", "STUN_A_ADDR", "STUN_B_ADDR", "RENDEZVOUS_ADDR", "RELAY_ADDR"]
