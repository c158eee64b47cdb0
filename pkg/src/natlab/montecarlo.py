"""Monte Carlo sweeps of the birthday punch, in the simulator or the kernel."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from natlab import _kernels
from natlab.analytics import birthday_success_probability
from natlab.discovery import CandidateSet, MappedAddress, Peer
from natlab.natbox import NatClassName, NatConfig, NatDevice, RandomPorts
from natlab.netsim import Endpoint, Network, derive_seed, parse_host
from natlab.traversal.strategies import birthday_punch

CSV_FIELDS = ("P", "k", "trials", "successes", "empirical_p", "analytic_p")
_EXT = (parse_host("198.51.100.1"), parse_host("198.51.100.2"))


def default_window(k: int, port_space: int) -> int:
    """Largest legal window: every external port may hold a live mapping."""
    return min(k, port_space)


def sim_trial(port_space: int, k: int, seed: int, *, window: int | None = None,
              pps: int = 57000) -> bool:
    """One birthday punch between two symmetric NATs owning ports [1, P]."""
    net = Network(seed, trace=False)
    peers = []
    for label, ext in zip("ab", _EXT):
        cfg = NatConfig.for_class(NatClassName.SYMMETRIC, ext, port_alloc=RandomPorts(),
                                  port_range=(1, port_space))
        net.add_node(NatDevice(f"nat-{label}", cfg, rng=net.rng(f"nat:{label}")))
        peers.append(Peer(net.add_host(f"peer-{label}", "10.0.0.2", f"nat-{label}"), 4000, label))
    a, b = peers
    a.remote = CandidateSet(Endpoint(_EXT[1], 1), MappedAddress(Endpoint(_EXT[1], 1), 0, Endpoint(0, 1)))
    b.remote = CandidateSet(Endpoint(_EXT[0], 1), MappedAddress(Endpoint(_EXT[0], 1), 0, Endpoint(0, 1)))
    w = window if window is not None else default_window(k, port_space)
    s = birthday_punch(net, a, b, k, (1, port_space), pps, chunk=w, start=0)
    return s.established


def _sim_batch(args: tuple[int, int, int, list[int], int | None]) -> int:
    port_space, k, _, seeds, window = args
    return sum(sim_trial(port_space, k, s, window=window) for s in seeds)


@dataclass(frozen=True)
class SweepRow:
    P: int
    k: int
    trials: int
    successes: int

    @property
    def empirical_p(self) -> float:
        return self.successes / self.trials

    @property
    def analytic_p(self) -> float:
        return birthday_success_probability(self.k, self.P)

    def as_dict(self) -> dict:
        return {"P": self.P, "k": self.k, "trials": self.trials, "successes": self.successes,
                "empirical_p": round(self.empirical_p, 6), "analytic_p": round(self.analytic_p, 6)}


def run_point(port_space: int, k: int, trials: int, seed: int, *, engine: str = "sim",
              window: int | None = None, workers: int = 1) -> SweepRow:
    """``trials`` independent birthday punches at one (P, k) point."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    w = window if window is not None else default_window(k, port_space)
    if engine == "kernel":
        kseed = derive_seed(seed, "kernel", port_space, k)
        return SweepRow(port_space, k, trials, _kernels.birthday_trials(port_space, k, w, trials, kseed))
    if engine != "sim":
        raise ValueError(f"unknown engine {engine!r}")
    seeds = [derive_seed(seed, "trial", port_space, k, i) for i in range(trials)]
    if workers <= 1:
        wins = _sim_batch((port_space, k, 0, seeds, w))
    else:
        chunks = [seeds[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            wins = sum(pool.map(_sim_batch, [(port_space, k, 0, c, w) for c in chunks]))
    return SweepRow(port_space, k, trials, wins)


def sweep(port_space: int, ks: list[int], trials: int, seed: int, *, engine: str = "sim",
          workers: int = 1) -> list[SweepRow]:
    return [run_point(port_space, k, trials, seed, engine=engine, workers=workers) for k in ks]


def rows_to_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r.as_dict())
    return buf.getvalue()


__all__ = ["sim_trial", "run_point", "sweep", "rows_to_csv", "SweepRow", "CSV_FIELDS", "default_window"]
