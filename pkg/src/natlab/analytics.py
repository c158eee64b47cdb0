"""Closed-form budgets and collision probabilities, plus small exact oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from natlab.wire import FRAME_OVERHEAD

# 8-byte payload plus the per-frame overhead the simulator charges.
DEFAULT_PROBE_BYTES = 8 + FRAME_OVERHEAD
# Back-solved from 425 TB / (25e6 customers x 33e3 connections per day).
DEFAULT_RECORD_BYTES = 515
TB = 10**12


@dataclass(frozen=True)
class LinkBudget:
    upload_bps: int
    bytes_per_probe_on_wire: int = DEFAULT_PROBE_BYTES

    def __post_init__(self):
        if self.upload_bps <= 0 or self.bytes_per_probe_on_wire <= 0:
            raise ValueError("upload rate and probe size must be positive")


@dataclass(frozen=True)
class CollisionModel:
    port_space: int
    probes_per_side: int

    def __post_init__(self):
        if self.port_space < 1:
            raise ValueError("port space must be >= 1")
        if self.probes_per_side < 0:
            raise ValueError("probe count must be >= 0")


def max_probe_rate(b: LinkBudget) -> int:
    """Packets per second the uplink sustains, floored."""
    return b.upload_bps // (8 * b.bytes_per_probe_on_wire)


def brute_force_duration(combinations: int, pps: int) -> Fraction:
    """Exact seconds to send ``combinations`` probes at ``pps``."""
    if pps <= 0:
        raise ValueError("pps must be positive")
    if combinations < 0:
        raise ValueError("combinations must be non-negative")
    return Fraction(combinations, pps)


def to_ms(seconds: Fraction) -> float:
    """Round an exact duration to millisecond precision."""
    return round(seconds * 1000) / 1000


def birthday_success_probability(m: CollisionModel | int, port_space: int | None = None) -> float:
    """1 - exp(-k^2 / P^2). Accepts a CollisionModel or ``(k, P)``."""
    if not isinstance(m, CollisionModel):
        m = CollisionModel(port_space, m)
    k, p = m.probes_per_side, m.port_space
    return -math.expm1(-(k * k) / (p * p))


def probes_for_target(p: float, port_space: int) -> int:
    """Smallest k per side with model success >= p: ceil(P * sqrt(-ln(1 - p)))."""
    if not 0 <= p < 1:
        raise ValueError("target probability must lie in [0, 1)")
    if p == 0:
        return 0
    k = math.ceil(port_space * math.sqrt(-math.log1p(-p)))
    # Guard against rounding in the last ulp.
    while birthday_success_probability(k, port_space) < p:
        k += 1
    return k


def overlapping_pairs(k: int, window: int | None) -> int:
    """Probe pairs (one per side) whose mappings are live at the same time
    when each side keeps at most ``window`` mappings open."""
    if window is None or k <= window:
        return k * k
    return k * (2 * window - 1) - window * (window - 1)


def windowed_success_probability(k: int, port_space: int, window: int | None) -> float:
    """Collision model restricted to pairs whose mappings coexist."""
    return -math.expm1(-overlapping_pairs(k, window) / port_space**2)


def probes_for_target_windowed(p: float, port_space: int, window: int | None) -> int:
    """Like :func:`probes_for_target` but under a sliding mapping window."""
    k = probes_for_target(p, port_space)
    if window is None or k <= window:
        return k
    need = port_space**2 * -math.log1p(-p)
    k = max(window, math.ceil((need + window * (window - 1)) / (2 * window - 1)))
    while windowed_success_probability(k, port_space, window) < p:
        k += 1
    return k


def birthday_success_ceiling(k: int, port_space: int) -> float:
    """Best achievable success when each side owns only ``port_space`` ports."""
    return windowed_success_probability(k, port_space, min(k, port_space))


def birthday_party_probability(n: int, days: int = 365) -> float:
    """Probability that at least two of ``n`` people share a birthday."""
    if n < 0 or days < 1:
        raise ValueError("need n >= 0 and days >= 1")
    q = 1.0
    for i in range(n):
        q *= 1 - i / days
        if q == 0:
            break
    return 1 - q


def pair_count(n: int) -> int:
    if n < 0:
        raise ValueError("n must be non-negative")
    return n * (n - 1) // 2


def retention_volume(customers: int, connections_per_day: int,
                     bytes_per_record: int = DEFAULT_RECORD_BYTES) -> int:
    """Bytes of connection log written per day."""
    if min(customers, connections_per_day, bytes_per_record) < 0:
        raise ValueError("inputs must be non-negative")
    return customers * connections_per_day * bytes_per_record


# -- exact oracles for small port spaces ------------------------------------------


def _poly_mul(a: list, b: list, deg: int) -> list:
    out = [0] * (deg + 1)
    for i, x in enumerate(a):
        if not x:
            continue
        for j, y in enumerate(b[: deg + 1 - i]):
            out[i + j] += x * y
    return out


def _poly_pow(a: list, n: int, deg: int) -> list:
    result = [1] + [0] * deg
    while n:
        if n & 1:
            result = _poly_mul(result, a, deg)
        a = _poly_mul(a, a, deg)
        n >>= 1
    return result


def exact_collision_probability(k: int, port_space: int, *, replacement: bool = True) -> Fraction:
    """Exact double-collision probability for ``k`` probes per side.

    With ``replacement`` each probe's external port and destination are
    independent uniform draws, so only the number of distinct (src, dst)
    pairs on one side matters. Without replacement one side's external
    ports are distinct (a real NAT never reuses a live port) and the
    expectation is taken with an exponential generating function.
    """
    P, N = port_space, port_space * port_space
    if k == 0:
        return Fraction(0)
    if replacement:
        # dist[d] = P(d distinct pairs after j draws)
        dist = [Fraction(1)]
        for _ in range(k):
            nxt = [Fraction(0)] * (len(dist) + 1)
            for d, pr in enumerate(dist):
                if pr:
                    nxt[d] += pr * Fraction(d, N)
                    nxt[d + 1] += pr * Fraction(N - d, N)
            dist = nxt
        fail = sum(pr * Fraction(N - d, N) ** k for d, pr in enumerate(dist))
        return 1 - fail
    if k > P:
        raise ValueError("without replacement a side holds at most P ports")
    # Side B fails on its probe from port t unless the destination avoids the
    # c_t sources of A that targeted t; E[prod over k ports of (1 - c_t/P)].
    fact = [math.factorial(i) for i in range(k + 1)]
    inner = [Fraction(P - c, P) / fact[c] for c in range(k + 1)]
    rest = [Fraction((P - k) ** i, fact[i]) for i in range(k + 1)]
    gf = _poly_mul(_poly_pow(inner, k, k), rest, k)
    fail = gf[k] * fact[k] / Fraction(P) ** k
    return 1 - fail


def enumerate_collision_probability(k: int, port_space: int, *, replacement: bool = True) -> Fraction:
    """Brute-force enumeration over every outcome; only for tiny inputs."""
    from itertools import permutations, product

    P = port_space
    ports = range(P)
    if replacement:
        srcs = list(product(ports, repeat=k))
    else:
        srcs = list(permutations(ports, k))
    dsts = list(product(ports, repeat=k))
    sides = [tuple(zip(s, d)) for s in srcs for d in dsts]
    hits = 0
    for a in sides:
        swapped = {(d, s) for s, d in a}
        for b in sides:
            if any(pair in swapped for pair in b):
                hits += 1
    return Fraction(hits, len(sides) ** 2)


def exact_birthday_party(n: int, days: int = 365) -> Fraction:
    """Permutation-counting oracle: 1 - days!/(days-n)! / days^n."""
    if n > days:
        return Fraction(1)
    return 1 - Fraction(math.perm(days, n), days**n)


# -- provenance-carrying reports (the ``estimate`` command) ---------------------------


def _report(inputs: dict, formula: str, value, note: str, **extra) -> dict:
    out = {"inputs": inputs, "formula": formula, "value": value, "provenance_note": note}
    out.update(extra)
    return out


def estimate_probe_rate(upload_bps: int, bytes_per_probe: int = DEFAULT_PROBE_BYTES) -> dict:
    b = LinkBudget(upload_bps, bytes_per_probe)
    return _report(
        {"upload_bps": upload_bps, "bytes_per_probe_on_wire": bytes_per_probe},
        "floor(upload_bps / (8 * bytes_per_probe_on_wire))", max_probe_rate(b),
        "Assumes 88 bytes on the wire per probe (8-byte payload + 80 bytes framing); "
        "that reproduces the quoted ~57000 pps at 40 Mbit/s. With 84 bytes of overhead "
        "(92 total) the same uplink gives 54347 pps.",
        unit="packets/s")


def estimate_brute_force(combinations: int, pps: int) -> dict:
    exact = brute_force_duration(combinations, pps)
    return _report(
        {"combinations": combinations, "pps": pps}, "combinations / pps", to_ms(exact),
        "Exact rational rounded to millisecond precision.",
        unit="s", display=f"{to_ms(exact):.3f} s", exact=f"{exact.numerator}/{exact.denominator}",
        hours=round(float(exact) / 3600, 3))


def estimate_birthday(k: int, port_space: int = 65535) -> dict:
    return _report(
        {"k": k, "port_space": port_space}, "1 - exp(-k^2 / P^2)",
        birthday_success_probability(k, port_space),
        "k probes per side, each from a fresh external port to a uniformly random "
        "destination port; independent draws with replacement.",
        ceiling_with_port_reuse_limit=birthday_success_ceiling(k, port_space))


def estimate_probes_for_target(p: float, port_space: int = 65535) -> dict:
    return _report(
        {"p": p, "port_space": port_space}, "ceil(P * sqrt(-ln(1 - p)))",
        probes_for_target(p, port_space), "Per-side probe count; inverse of the birthday model.")


def estimate_birthday_party(n: int, days: int = 365) -> dict:
    return _report(
        {"n": n, "days": days}, "1 - prod_{i<n} (1 - i/days)", birthday_party_probability(n, days),
        "Exact product.", pair_count=pair_count(n))


def estimate_retention(customers: int, connections_per_day: int,
                       bytes_per_record: int = DEFAULT_RECORD_BYTES) -> dict:
    v = retention_volume(customers, connections_per_day, bytes_per_record)
    note = "Product of the three inputs."
    if bytes_per_record == DEFAULT_RECORD_BYTES:
        note = ("ASSUMPTION: 515 bytes per record is back-solved from a ~425 TB/day total for "
                "25 million customers at 33 thousand connections a day; it is not a measured value.")
    return _report(
        {"customers": customers, "connections_per_day": connections_per_day,
         "bytes_per_record": bytes_per_record},
        "customers * connections_per_day * bytes_per_record", v, note,
        unit="bytes/day", terabytes=v / TB)


__all__ = [
    "LinkBudget", "CollisionModel", "max_probe_rate", "brute_force_duration", "to_ms",
    "birthday_success_probability", "probes_for_target", "overlapping_pairs",
    "windowed_success_probability", "probes_for_target_windowed", "birthday_success_ceiling",
    "birthday_party_probability", "pair_count", "retention_volume", "exact_collision_probability",
    "enumerate_collision_probability", "exact_birthday_party", "estimate_probe_rate",
    "estimate_brute_force", "estimate_birthday", "estimate_probes_for_target",
    "estimate_birthday_party", "estimate_retention", "DEFAULT_PROBE_BYTES", "DEFAULT_RECORD_BYTES",
]
