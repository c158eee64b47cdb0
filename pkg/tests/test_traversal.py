from __future__ import annotations

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from natlab.discovery import CandidateSet, MappedAddress, Peer
from natlab.lab import World
from natlab.natbox import (FilteringBehavior, MappingBehavior, NatClassName, NatConfig, NatDevice,
                           RandomPorts, Sequential)
from natlab.netsim import US_PER_MS, US_PER_S, Endpoint, Network, parse_host
from natlab.traversal import (Carrier, FailReason, IllegalTransition, MappingUnsupported, PathKind,
                              Policy, PreconditionError, SessionState, Strategy, TraversalSession,
                              birthday_punch, brute_force_punch, close_session, default_chunk,
                              hairpin_connect, ice_connect, keepalive, parse_ladder, relay_connect,
                              request_mapping, run_interop_matrix, send_app, simple_punch)
from natlab.traversal.ice import applicable
from natlab.wire import MessageKind
from tests.conftest import EXT_A, EXT_B, PROPERTY_CASES, pair_world

C = NatClassName
EIM, EDM = MappingBehavior.ENDPOINT_INDEPENDENT, MappingBehavior.ADDRESS_AND_PORT_DEPENDENT
F_AP = FilteringBehavior.ADDRESS_AND_PORT_DEPENDENT


def cfg(cls: NatClassName, ext: int = EXT_A, **kw) -> NatConfig:
    return NatConfig.for_class(cls, ext, **kw)


def exchange_app(net: Network, session: TraversalSession) -> bool:
    """Punch correctness: one APP datagram each way, no coordination traffic."""
    mark = len(net.trace)
    send_app(net, session, "a", b"ping")
    send_app(net, session, "b", b"pong")
    net.run_until(net.now + 2 * US_PER_S)
    kinds = {r.kind for r in net.trace[mark:] if r.type == "send"}
    # Late handshake echoes are allowed; rendezvous or STUN traffic is not.
    assert kinds <= {"APP", "RELAY_FWD", "PROBE", "PROBE_ACK", "ACK_ACK"}
    return session.app_received["b"][-1:] == [b"ping"] and session.app_received["a"][-1:] == [b"pong"]


def cgnat_world(hairpin: bool, seed: int = 0, with_relay: bool = True):
    w = World(seed=seed, with_relay=with_relay)
    w.add_nat("cgnat", NatConfig(parse_host("198.51.100.99"), hairpinning=hairpin, cgnat=True),
              inner_address="100.64.0.1")
    w.add_nat("home1", cfg(C.PORT_RESTRICTED_CONE, parse_host("100.64.0.11")), behind="cgnat")
    w.add_nat("home2", cfg(C.FULL_CONE, parse_host("100.64.0.12")), behind="cgnat")
    a = w.add_peer("alice", "10.0.0.2", behind="home1")
    b = w.add_peer("bob", "10.0.0.2", behind="home2")
    w.discover(a)
    w.discover(b)
    return w, a, b


class TestSessionStateMachine:
    def test_legal_path(self):
        w, a, b = pair_world(None, None)
        s = simple_punch(w.net, a, b)
        assert s.history == [SessionState.IDLE, SessionState.GATHERING, SessionState.PUNCHING]
        assert s.state is SessionState.ESTABLISHED and s.path is PathKind.DIRECT

    def test_illegal_transition(self):
        w, a, b = pair_world(None, None, coordinate=False)
        s = TraversalSession(a, b)
        with pytest.raises(IllegalTransition):
            s.establish(PathKind.DIRECT)

    def test_stats_invariants(self):
        w, a, b = pair_world(cfg(C.PORT_RESTRICTED_CONE), cfg(C.PORT_RESTRICTED_CONE, EXT_B))
        s = simple_punch(w.net, a, b)
        for side in "ab":
            assert s.stats.mappings_consumed[side] <= s.stats.probes_sent[side]
        assert s.stats.elapsed_us >= 0


class TestSimplePunch:
    def test_port_restricted_pair(self):
        w, a, b = pair_world(cfg(C.PORT_RESTRICTED_CONE), cfg(C.PORT_RESTRICTED_CONE, EXT_B))
        s = simple_punch(w.net, a, b)
        assert s.describe() == "Established(direct)"
        assert exchange_app(w.net, s)

    def test_eim_against_symmetric_times_out(self):
        w, a, b = pair_world(cfg(C.PORT_RESTRICTED_CONE), cfg(C.SYMMETRIC, EXT_B))
        assert simple_punch(w.net, a, b).describe() == "Failed(Timeout)"

    def test_no_nat_either_side(self):
        w, a, b = pair_world(None, None)
        s = simple_punch(w.net, a, b)
        assert s.established
        # Probe, ack and ack-ack from each side: the first exchange, no retries.
        assert s.stats.probes_sent == {"a": 3, "b": 3}

    def test_missing_candidates(self):
        w, a, b = pair_world(None, None, coordinate=False)
        assert simple_punch(w.net, a, b).reason is FailReason.NO_CANDIDATES

    def test_full_cone_partner_admits_symmetric_side(self):
        # Looser filtering on the EIM side lets the EDM side's fresh mapping in.
        w, a, b = pair_world(cfg(C.FULL_CONE), cfg(C.SYMMETRIC, EXT_B))
        assert simple_punch(w.net, a, b).established


class TestBruteForce:
    def _world(self, lo=1, hi=1024, seed=0):
        return pair_world(cfg(C.PORT_RESTRICTED_CONE),
                          cfg(C.SYMMETRIC, EXT_B, port_range=(lo, hi)), seed=seed)

    def test_scaled_run_within_a_second(self):
        w, easy, hard = self._world()
        s = brute_force_punch(w.net, easy, hard, pps=1024, port_range=(1, 1024))
        assert s.established
        # Scan time plus the handshake round trips.
        assert s.stats.elapsed_us <= US_PER_S + 200 * US_PER_MS
        assert s.stats.probes_sent["a"] <= 1024 + 2
        assert exchange_app(w.net, s)

    def test_full_port_space_little_over_a_second(self):
        w, easy, hard = self._world(1, 65535)
        s = brute_force_punch(w.net, easy, hard, pps=57000, port_range=(1, 65535))
        assert s.established
        assert s.stats.elapsed_us <= 1_150_000 + 200 * US_PER_MS

    def test_no_hard_probe_times_out(self):
        w, easy, hard = self._world()
        s = brute_force_punch(w.net, easy, hard, pps=1024, port_range=(1, 1024), hard_probe=False)
        assert s.describe() == "Failed(Timeout)"

    def test_random_order(self):
        w, easy, hard = self._world()
        s = brute_force_punch(w.net, easy, hard, pps=4096, port_range=(1, 1024), order="random")
        assert s.established

    def test_bad_arguments(self):
        w, easy, hard = self._world()
        with pytest.raises(ValueError):
            brute_force_punch(w.net, easy, hard, pps=0)
        with pytest.raises(ValueError):
            brute_force_punch(w.net, easy, hard, pps=10, port_range=(1, 2), order="sideways")


def symmetric_pair(port_space: int, seed: int, max_mappings: int = 64000,
                   ttl: int | None = 30 * US_PER_S) -> tuple[Network, Peer, Peer]:
    """Two symmetric NATs owning ports [1, P] with candidates already known."""
    net = Network(seed, trace=True)
    peers = []
    for label, ext in (("a", EXT_A), ("b", EXT_B)):
        c = cfg(C.SYMMETRIC, ext, port_range=(1, port_space), max_mappings=max_mappings, mapping_ttl=ttl)
        net.add_node(NatDevice(f"nat-{label}", c, rng=net.rng(f"nat:{label}")))
        peers.append(Peer(net.add_host(f"peer-{label}", "10.0.0.2", f"nat-{label}"), 4000, label))
    a, b = peers
    for me, other_ext in ((a, EXT_B), (b, EXT_A)):
        ep = Endpoint(other_ext, 1)
        me.remote = CandidateSet(ep, MappedAddress(ep, 0, ep))
    return net, a, b


class TestBirthday:
    def test_single_port_space_collides(self):
        net, a, b = symmetric_pair(1, seed=5)
        s = birthday_punch(net, a, b, 1, (1, 1), pps=1000, start=0)
        assert s.established
        assert s.stats.probes_sent["a"] >= 1 and s.stats.probes_sent["b"] >= 1

    def test_records_mappings_per_side(self):
        net, a, b = symmetric_pair(64, seed=1)
        s = birthday_punch(net, a, b, 200, (1, 64), pps=10_000, start=0)
        for side in "ab":
            assert 1 <= s.stats.mappings_consumed[side] <= s.stats.probes_sent[side]

    def test_unchunked_overflow_reports_table_full(self):
        net, a, b = symmetric_pair(4096, seed=2, max_mappings=8)
        s = birthday_punch(net, a, b, 64, (1, 4096), pps=10_000, chunk=None, start=0)
        assert s.reason is FailReason.TABLE_FULL

    def test_default_chunk(self):
        assert default_chunk(100, 64000) == 100
        assert default_chunk(100_000, 64000) == 32000
        assert default_chunk(5000, 64000, pool_size=2048) == 2048
        assert default_chunk(5, 1) == 1

    def test_argument_checks(self):
        net, a, b = symmetric_pair(8, seed=0)
        with pytest.raises(ValueError):
            birthday_punch(net, a, b, 0, (1, 8), pps=10)
        with pytest.raises(ValueError):
            birthday_punch(net, a, b, 4, (1, 8), pps=0)

    def test_established_session_carries_data(self):
        net, a, b = symmetric_pair(16, seed=3)
        s = birthday_punch(net, a, b, 160, (1, 16), pps=10_000, start=0)
        assert s.established
        assert exchange_app(net, s)


class TestRequestMapping:
    def _home(self, **kw):
        w = World()
        w.add_nat("home", NatConfig(parse_host("198.51.100.5"), **kw))
        p = w.add_peer("p", "10.0.0.2", behind="home")
        return w, p

    def test_free_port_granted(self):
        w, p = self._home(port_mapping=True)
        res = request_mapping(w.net, p, 6881, lifetime_s=600)
        assert res.granted_port == 6881 and res.lifetime_s == 600
        (entry,) = w.nat("home").nat.snapshot()
        assert entry["external_port"] == 6881 and entry["internal"] == "10.0.0.2:4000"

    def test_disabled_is_unsupported(self):
        w, p = self._home(port_mapping=False)
        with pytest.raises(MappingUnsupported):
            request_mapping(w.net, p, 6881)

    def test_cgnat_is_unsupported(self):
        w, p = self._home(port_mapping=True, cgnat=True)
        with pytest.raises(MappingUnsupported):
            request_mapping(w.net, p, 6881)

    def test_taken_port_gets_alternative(self):
        w, p = self._home(port_mapping=True)
        other = w.add_peer("q", "10.0.0.3", behind="home")
        assert request_mapping(w.net, other, 6881).granted_port == 6881
        res = request_mapping(w.net, p, 6881)
        assert res.granted_port != 6881
        ports = [e["external_port"] for e in w.nat("home").nat.snapshot()]
        assert len(ports) == len(set(ports)) == 2

    def test_no_gateway(self):
        w = World()
        p = w.add_peer("p", "203.0.113.1")
        with pytest.raises(PreconditionError):
            request_mapping(w.net, p, 6881)

    def test_static_mapping_outlives_ttl(self):
        w, p = self._home(port_mapping=True, mapping_ttl=US_PER_S)
        request_mapping(w.net, p, 6881, lifetime_s=60)
        w.net.run_until(w.net.now + 30 * US_PER_S)
        w.nat("home").nat.expire(w.net.now)
        assert [e["external_port"] for e in w.nat("home").nat.snapshot()] == [6881]


class TestHairpinAndRelay:
    def test_hairpin_on(self):
        w, a, b = cgnat_world(hairpin=True)
        s = hairpin_connect(w.net, a, b)
        assert s.describe() == "Established(hairpin)"
        assert exchange_app(w.net, s)

    def test_hairpin_off(self):
        w, a, b = cgnat_world(hairpin=False)
        assert hairpin_connect(w.net, a, b).describe() == "Failed(HairpinUnsupported)"

    def test_hairpin_needs_shared_nat(self):
        w, a, b = pair_world(cfg(C.FULL_CONE), cfg(C.FULL_CONE, EXT_B))
        with pytest.raises(PreconditionError):
            hairpin_connect(w.net, a, b)

    def test_relay_any_pair(self):
        w, a, b = pair_world(cfg(C.SYMMETRIC), cfg(C.SYMMETRIC, EXT_B))
        s = relay_connect(w.net, a, b, w.relay.endpoint)
        assert s.describe() == "Established(relayed)"
        before = w.relay.forwarded
        assert exchange_app(w.net, s)
        assert w.relay.forwarded == before + 2

    def test_relay_every_datagram_is_wrapped(self):
        w, a, b = pair_world(cfg(C.SYMMETRIC), cfg(C.SYMMETRIC, EXT_B))
        s = relay_connect(w.net, a, b, w.relay.endpoint)
        mark = len(w.net.trace)
        send_app(w.net, s, "a", b"x")
        w.net.run_until()
        sends = [r for r in w.net.trace[mark:] if r.type == "send"]
        assert sends and all(r.kind == MessageKind.RELAY_FWD.name for r in sends)

    def test_relay_doubles_path_latency(self):
        w, a, b = pair_world(None, None)
        direct = simple_punch(w.net, a, b)
        relayed = relay_connect(w.net, a, b, w.relay.endpoint)

        def one_way(s):
            t0 = w.net.now
            send_app(w.net, s, "a", b"t")
            w.net.run_while(lambda: not s.app_received["b"], t0 + US_PER_S)
            return w.net.now - t0

        d = one_way(direct)
        close_session(w.net, direct)
        assert one_way(relayed) == 2 * d

    def test_relay_down(self):
        w, a, b = pair_world(None, None)
        w.net.nodes["relay"].up = False
        assert relay_connect(w.net, a, b, w.relay.endpoint).describe() == "Failed(RelayDown)"

    def test_relay_succeeds_where_hairpin_failed(self):
        w, a, b = cgnat_world(hairpin=False)
        assert not hairpin_connect(w.net, a, b).established
        assert relay_connect(w.net, a, b, w.relay.endpoint).established


class TestIce:
    def _ice(self, w, a, b, policy=Policy()):
        return ice_connect(w.net, a, b, policy, rendezvous=w.rendezvous, relay=w.relay)

    def test_both_open_direct(self):
        w, a, b = pair_world(None, None, classify=True, coordinate=False)
        assert self._ice(w, a, b).strategy is Strategy.DIRECT

    def test_eim_pair_uses_simple_punch(self):
        w, a, b = pair_world(cfg(C.RESTRICTED_CONE), cfg(C.PORT_RESTRICTED_CONE, EXT_B),
                             classify=True, coordinate=False)
        res = self._ice(w, a, b)
        assert res.strategy is Strategy.SIMPLE_PUNCH
        assert res.session.path is PathKind.DIRECT

    def test_port_mapping_preferred_when_available(self):
        w, a, b = pair_world(cfg(C.PORT_RESTRICTED_CONE, port_mapping=True),
                             cfg(C.SYMMETRIC, EXT_B), classify=True, coordinate=False)
        assert self._ice(w, a, b).strategy is Strategy.PORT_MAPPING

    def test_one_symmetric_side_uses_brute_force(self):
        w, a, b = pair_world(cfg(C.PORT_RESTRICTED_CONE),
                             cfg(C.SYMMETRIC, EXT_B, port_range=(20000, 22047)),
                             classify=True, coordinate=False)
        assert self._ice(w, a, b).strategy is Strategy.BRUTE_FORCE

    def test_both_symmetric_uses_birthday(self):
        small = {"port_range": (20000, 20063)}
        w, a, b = pair_world(cfg(C.SYMMETRIC, **small), cfg(C.SYMMETRIC, EXT_B, **small),
                             classify=True, coordinate=False)
        res = self._ice(w, a, b)
        assert res.strategy is Strategy.BIRTHDAY
        assert [s for s, _ in res.attempts] == [Strategy.SIMPLE_PUNCH, Strategy.BIRTHDAY]

    def test_same_cgnat_no_hairpin_relays(self):
        w, a, b = cgnat_world(hairpin=False)
        res = self._ice(w, a, b)
        assert res.strategy is Strategy.RELAY
        assert [s for s, _ in res.attempts] == [Strategy.HAIRPIN, Strategy.RELAY]

    def test_exhausted_without_relay(self):
        w, a, b = cgnat_world(hairpin=False)
        res = self._ice(w, a, b, Policy(ladder=parse_ladder("SimplePunch,Hairpin")))
        assert res.session.describe() == "Failed(AllStrategiesExhausted)"
        assert res.strategy is None

    def test_cumulative_stats(self):
        w, a, b = cgnat_world(hairpin=False)
        res = self._ice(w, a, b)
        assert res.stats.probes_sent["a"] >= res.session.stats.probes_sent["a"]

    def test_needs_discovery(self):
        w = World()
        a, b = w.add_peer("a", "203.0.113.1"), w.add_peer("b", "203.0.113.2")
        with pytest.raises(ValueError):
            ice_connect(w.net, a, b)

    def test_parse_ladder(self):
        assert parse_ladder("birthday, simplepunch") == (Strategy.SIMPLE_PUNCH, Strategy.BIRTHDAY)
        assert len(parse_ladder("all")) == 7
        with pytest.raises(ValueError):
            parse_ladder("Teleport")
        with pytest.raises(ValueError):
            parse_ladder(" , ")

    def test_deterministic_given_seed(self):
        def run():
            w, a, b = pair_world(cfg(C.SYMMETRIC, port_range=(1, 64)),
                                 cfg(C.SYMMETRIC, EXT_B, port_range=(1, 64)),
                                 seed=11, classify=True, coordinate=False)
            return self._ice(w, a, b).to_dict()
        assert run() == run()


class TestKeepalive:
    TTL = 2 * US_PER_S

    def _session(self):
        short = {"mapping_ttl": self.TTL}
        w, a, b = pair_world(cfg(C.PORT_RESTRICTED_CONE, **short),
                             cfg(C.PORT_RESTRICTED_CONE, EXT_B, **short))
        s = simple_punch(w.net, a, b)
        assert s.established
        return w, s

    def test_half_ttl_survives_ten_ttls(self):
        w, s = self._session()
        ka = keepalive(w.net, s, self.TTL // 2)
        w.net.run_until(w.net.now + 10 * self.TTL)
        assert s.established
        assert exchange_app(w.net, s)
        assert ka.sent >= 2 * 19
        ka.stop()

    def test_idle_past_ttl_drops_inbound(self):
        w, s = self._session()
        w.net.run_until(w.net.now + self.TTL + 1)
        send_app(w.net, s, "a", b"late")
        w.net.run_until()
        assert s.app_received["b"] == []
        assert s.describe() == "Failed(MappingExpired)"

    def test_interval_longer_than_ttl_degrades(self):
        w, s = self._session()
        keepalive(w.net, s, self.TTL + US_PER_S)
        w.net.run_until(w.net.now + 5 * self.TTL)
        assert s.describe() == "Failed(MappingExpired)"

    def test_rejects_bad_arguments(self):
        w, s = self._session()
        with pytest.raises(ValueError):
            keepalive(w.net, s, 0)
        s.fail(FailReason.MAPPING_EXPIRED)
        with pytest.raises(ValueError):
            keepalive(w.net, s, 10)


CARRIERS = [
    Carrier("T-Mobile", cfg(C.PORT_RESTRICTED_CONE, port_range=(20000, 20255))),
    Carrier("Lebara", cfg(C.PORT_RESTRICTED_CONE, port_range=(20000, 20255))),
    Carrier("Lyca", cfg(C.SYMMETRIC, port_range=(20000, 20255))),
    Carrier("Vodafone", cfg(C.PORT_RESTRICTED_CONE, port_range=(20000, 20255))),
]


class TestInteropMatrix:
    def test_simple_punch_pattern(self):
        m = run_interop_matrix(CARRIERS, Policy.only(Strategy.SIMPLE_PUNCH), seed=1)
        for i, a in enumerate(m.carriers):
            for j, b in enumerate(m.carriers):
                assert m.grid[i][j] == ("Lyca" not in (a, b)), (a, b)
        assert (m.successes, m.cells) == (9, 16)
        assert m.interoperable == ["T-Mobile", "Lebara", "Vodafone"]
        assert m.summary().startswith("3 of 4 carriers interoperable (75%)")

    def test_all_eim_full_grid(self):
        eim = [Carrier(f"c{i}", cfg(C.FULL_CONE)) for i in range(4)]
        m = run_interop_matrix(eim, Policy.only(Strategy.SIMPLE_PUNCH), seed=1)
        assert (m.successes, m.cells) == (16, 16)

    def test_birthday_flips_symmetric_cells(self):
        m = run_interop_matrix(CARRIERS, Policy.only(Strategy.SIMPLE_PUNCH, Strategy.BIRTHDAY), seed=1)
        assert m.successes == 16
        lyca = m.carriers.index("Lyca")
        assert all(m.strategies[lyca][j] == "Birthday" for j in range(4))

    def test_needs_two_carriers(self):
        with pytest.raises(ValueError):
            run_interop_matrix(CARRIERS[:1])

    def test_table_and_dict(self):
        m = run_interop_matrix(CARRIERS[:2], Policy.only(Strategy.SIMPLE_PUNCH), seed=1)
        assert m.table().splitlines()[1].split() == ["T-Mobile", "yes", "yes"]
        assert m.to_dict()["ratio"] == 1.0


# -- randomized invariants ----------------------------------------------------------

EIM_CLASSES = [C.FULL_CONE, C.RESTRICTED_CONE, C.PORT_RESTRICTED_CONE]
allocs = st.one_of(st.just(RandomPorts()), st.integers(1024, 60000).map(Sequential))
seeds = st.integers(0, 2**63)


@settings(max_examples=PROPERTY_CASES)
@given(st.sampled_from(EIM_CLASSES + [None]), st.sampled_from(EIM_CLASSES + [None]), allocs, allocs,
       st.booleans(), seeds)
def test_simple_punch_completeness_and_correctness(ca, cb, alloc_a, alloc_b, cgnat_b, seed):
    """Both mappings EIM: the synchronized punch always succeeds and then
    carries application data both ways."""
    na = None if ca is None else cfg(ca, port_alloc=alloc_a)
    nb = None if cb is None else cfg(cb, EXT_B, port_alloc=alloc_b, cgnat=cgnat_b)
    w, a, b = pair_world(na, nb, seed=seed)
    s = simple_punch(w.net, a, b)
    assert s.established and s.path is PathKind.DIRECT
    assert exchange_app(w.net, s)


@settings(max_examples=PROPERTY_CASES)
@given(st.sampled_from([EIM, EDM]), st.sampled_from(list(FilteringBehavior)), allocs, allocs,
       st.booleans(), seeds)
def test_simple_punch_soundness(mapping_a, filtering_b, alloc_a, alloc_b, swap, seed):
    """An EDM side never completes a simple punch against a port-filtering partner."""
    na = NatConfig(EXT_A, mapping=mapping_a, filtering=F_AP, port_alloc=alloc_a)
    nb = NatConfig(EXT_B, mapping=EDM, filtering=filtering_b, port_alloc=alloc_b)
    if swap:
        na, nb = nb, na
        na = NatConfig(EXT_A, mapping=na.mapping, filtering=na.filtering, port_alloc=na.port_alloc)
        nb = NatConfig(EXT_B, mapping=nb.mapping, filtering=nb.filtering, port_alloc=nb.port_alloc)
    w, a, b = pair_world(na, nb, seed=seed)
    s = simple_punch(w.net, a, b)
    assert s.describe() == "Failed(Timeout)"


@settings(max_examples=PROPERTY_CASES)
@given(st.integers(2, 64), st.integers(1, 80), st.data(), seeds)
def test_birthday_chunking_safety(max_mappings, k, data, seed):
    """With chunk <= max_mappings and an otherwise empty table, no TableFull.
    A one-slot table is excluded: the handshake reply needs a slot of its own."""
    chunk = data.draw(st.integers(1, max_mappings))
    net, a, b = symmetric_pair(max(max_mappings, 16), seed, max_mappings=max_mappings,
                               ttl=data.draw(st.sampled_from([1000, 50_000, 30 * US_PER_S])))
    s = birthday_punch(net, a, b, k, None, pps=data.draw(st.sampled_from([1000, 57000])),
                       chunk=chunk, start=0)
    assert s.reason is not FailReason.TABLE_FULL
    assert not [r for r in net.trace if r.reason in ("table-full", "port-exhausted")]
    for side in "ab":
        assert s.stats.mappings_consumed[side] <= s.stats.probes_sent[side]


@settings(max_examples=PROPERTY_CASES)
@given(st.integers(1, 1024), st.integers(2, 300), seeds)
def test_brute_force_certainty(lo, width, seed):
    """An exhaustive scan over the hard NAT's whole range always connects.
    At least two ports: discovery's STUN mapping already holds one."""
    hi = lo + width - 1
    w, easy, hard = pair_world(cfg(C.PORT_RESTRICTED_CONE),
                               cfg(C.SYMMETRIC, EXT_B, port_range=(lo, hi)), seed=seed)
    s = brute_force_punch(w.net, easy, hard, pps=20_000, port_range=(lo, hi))
    assert s.established
    assert s.stats.probes_sent["a"] <= width + 2


SIDE_CONFIGS = [None, C.FULL_CONE, C.RESTRICTED_CONE, C.PORT_RESTRICTED_CONE, C.SYMMETRIC]
SMALL = (20000, 20015)


def _ladder_world(spec_a, spec_b, seed):
    out = []
    for (cls, pmp), ext in ((spec_a, EXT_A), (spec_b, EXT_B)):
        out.append(None if cls is None else cfg(cls, ext, port_range=SMALL, port_mapping=pmp))
    return pair_world(*out, seed=seed, classify=True, coordinate=False)


@settings(max_examples=PROPERTY_CASES)
@given(st.tuples(st.sampled_from(SIDE_CONFIGS), st.booleans()),
       st.tuples(st.sampled_from(SIDE_CONFIGS), st.booleans()),
       st.sets(st.sampled_from(list(Strategy)), min_size=1), seeds)
def test_ladder_monotonicity(spec_a, spec_b, ladder, seed):
    """No applicable strategy earlier in the ladder than the chosen one
    succeeds on its own under the same seed."""
    policy = Policy(ladder=tuple(ladder), birthday_k=160)
    w, a, b = _ladder_world(spec_a, spec_b, seed)
    res = ice_connect(w.net, a, b, policy, rendezvous=w.rendezvous, relay=w.relay)
    assume(res.ok)
    for s in policy.ladder:
        if s is res.strategy:
            break
        w2, a2, b2 = _ladder_world(spec_a, spec_b, seed)
        if not applicable(w2.net, a2, b2, s, w2.relay.endpoint):
            continue
        alone = ice_connect(w2.net, a2, b2, Policy(ladder=(s,), birthday_k=160),
                            rendezvous=w2.rendezvous, relay=w2.relay)
        assert not alone.ok, (s, res.strategy)
