"""Command-line front end: ``natlab classify|punch|matrix|montecarlo|estimate``."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from natlab import analytics
from natlab.discovery import DiscoveryError
from natlab.montecarlo import rows_to_csv, sweep
from natlab.scenario import ScenarioError, build_world, load_scenario
from natlab.traversal.ice import ice_connect, parse_ladder, run_interop_matrix

EXIT_OK, EXIT_INPUT, EXIT_FAILED = 0, 1, 2


class InputError(Exception):
    pass


def _seed(args, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("NATLAB_SEED")
    if env:
        try:
            return int(env, 0)
        except ValueError:
            raise InputError(f"NATLAB_SEED is not an integer: {env!r}") from None
    return default


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 0:
        raise argparse.ArgumentTypeError("need at least one non-negative integer")
    return values


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _scenario(args):
    if not args.scenario:
        raise InputError(f"{args.command} needs --scenario")
    try:
        spec = load_scenario(args.scenario)
    except OSError as exc:
        raise InputError(f"cannot read scenario: {exc}") from None
    if args.policy:
        from dataclasses import replace

        try:
            spec.policy = replace(spec.policy, ladder=parse_ladder(args.policy))
        except ValueError as exc:
            raise InputError(str(exc)) from None
    return spec


def _emit(obj, out: str, text: str) -> None:
    if out == "json":
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        print(text)


# -- commands -----------------------------------------------------------------------


def cmd_classify(args) -> int:
    spec = _scenario(args)
    world = build_world(spec, _seed(args, spec.seed))
    if world.stun_b is None:
        raise InputError("classification needs two STUN servers in the scenario")
    results = {}
    for name, peer in world.peers.items():
        try:
            world.discover(peer)
            results[name] = {"class": peer.nat_class.value, "reflexive": str(peer.mapped.reflexive)}
        except DiscoveryError as exc:
            results[name] = {"class": None, "error": str(exc)}
    text = "\n".join(f"{n:<12} {r['class'] or 'Inconclusive'}" for n, r in results.items())
    _emit({"peers": results}, args.out, text)
    return EXIT_OK


def cmd_punch(args) -> int:
    spec = _scenario(args)
    world = build_world(spec, _seed(args, spec.seed))
    names = list(world.peers)
    a_name = args.a or (names[0] if names else None)
    b_name = args.b or (names[1] if len(names) > 1 else None)
    if a_name not in world.peers or b_name not in world.peers or a_name == b_name:
        raise InputError("punch needs two distinct peers (role=peer) in the scenario")
    if world.stun_a is None:
        raise InputError("punch needs a STUN server in the scenario")
    a, b = world.peers[a_name], world.peers[b_name]
    for p in (a, b):
        world.discover(p, classify=world.stun_b is not None)
    res = ice_connect(world.net, a, b, spec.policy, rendezvous=world.rendezvous, relay=world.relay)
    out = {"a": a_name, "b": b_name, **res.to_dict()}
    lines = [f"{a_name} <-> {b_name}: {res.session.describe()}",
             f"strategy: {out['strategy'] or '-'}",
             f"path: {out['path'] or '-'}",
             f"probes sent: a={res.stats.probes_sent['a']} b={res.stats.probes_sent['b']}",
             f"mappings consumed: a={res.stats.mappings_consumed['a']} b={res.stats.mappings_consumed['b']}",
             f"elapsed: {res.stats.elapsed_us / 1e6:.3f} s"]
    _emit(out, args.out, "\n".join(lines))
    return EXIT_OK if res.ok else EXIT_FAILED


def cmd_matrix(args) -> int:
    spec = _scenario(args)
    carriers = spec.carriers
    if len(carriers) < 2:
        raise InputError("matrix needs at least two NATs marked with carrier=<name>")
    m = run_interop_matrix(carriers, spec.policy, _seed(args, spec.seed))
    if args.out == "csv":
        rows = ["a,b,success,strategy"]
        for i, a in enumerate(m.carriers):
            for j, b in enumerate(m.carriers):
                rows.append(f"{a},{b},{int(m.grid[i][j])},{m.strategies[i][j] or ''}")
        print("\n".join(rows))
    else:
        _emit(m.to_dict(), args.out, m.table() + "\n\n" + m.summary())
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    P = args.port_space
    ks = args.k or [round(P * 400 / 1024), math.ceil(P * math.sqrt(math.log(2))), round(P * 2000 / 1024)]
    if P < 1:
        raise InputError("--port-space must be >= 1")
    if args.trials < 1:
        raise InputError("--trials must be >= 1")
    rows = sweep(P, ks, args.trials, _seed(args), engine=args.engine, workers=args.workers)
    if args.out == "json":
        print(json.dumps([r.as_dict() for r in rows], indent=2))
    elif args.out == "text":
        print(f"{'P':>6} {'k':>7} {'trials':>7} {'succ':>6} {'empirical':>10} {'analytic':>10}")
        for r in rows:
            d = r.as_dict()
            print(f"{d['P']:>6} {d['k']:>7} {d['trials']:>7} {d['successes']:>6} "
                  f"{d['empirical_p']:>10.4f} {d['analytic_p']:>10.4f}")
    else:
        sys.stdout.write(rows_to_csv(rows))
    return EXIT_OK


def cmd_estimate(args) -> int:
    kind = args.kind
    try:
        if kind == "probe-rate":
            rep = analytics.estimate_probe_rate(args.upload_bps, args.bytes_per_probe)
        elif kind == "brute-force":
            rep = analytics.estimate_brute_force(args.combinations, args.pps)
        elif kind == "birthday":
            rep = analytics.estimate_birthday(args.k, args.port_space)
        elif kind == "probes-for-target":
            rep = analytics.estimate_probes_for_target(args.p, args.port_space)
        elif kind == "birthday-party":
            rep = analytics.estimate_birthday_party(args.n, args.days)
        else:
            rep = analytics.estimate_retention(args.customers, args.connections, args.bytes_per_record)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    shown = rep.get("display") or f"{rep['value']}" + (f" {rep['unit']}" if "unit" in rep else "")
    text = f"{rep['formula']} = {shown}"
    text += f"\n{rep['provenance_note']}"
    _emit(rep, "json" if args.out == "csv" else args.out, text)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def _common(out_default: str, scenario: bool) -> argparse.ArgumentParser:
    # A fresh parent per subcommand: argparse shares action objects between
    # parents, so per-command defaults would otherwise leak across commands.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, default=None,
                        help="root seed (default: $NATLAB_SEED, then the scenario's seed, then 0)")
    common.add_argument("--out", choices=("json", "text", "csv"), default=out_default,
                        help=f"output format (default {out_default})")
    if scenario:
        common.add_argument("--scenario", help="scenario file, or the name of a bundled scenario")
        common.add_argument("--policy",
                            help="comma-separated strategy ladder subset, e.g. SimplePunch,Birthday")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="natlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("classify", parents=[_common("text", True)], help="classify each peer's NAT")

    p = sub.add_parser("punch", parents=[_common("text", True)], help="connect two peers with the ICE ladder")
    p.add_argument("--a", help="first peer (default: first role=peer host)")
    p.add_argument("--b", help="second peer (default: second role=peer host)")

    sub.add_parser("matrix", parents=[_common("text", True)], help="carrier interoperability grid")

    m = sub.add_parser("montecarlo", parents=[_common("csv", False)], help="birthday-punch success sweep")
    m.add_argument("--port-space", type=int, default=1024, help="ports per NAT, P (default 1024)")
    m.add_argument("--k", type=_int_list, help="comma-separated probes per side to sweep")
    m.add_argument("--trials", type=int, default=500, help="trials per k (default 500)")
    m.add_argument("--engine", choices=("sim", "kernel"), default="sim",
                   help="full event simulation or the fast collision kernel")
    m.add_argument("--workers", type=int, default=1, help="worker processes for the sim engine")

    e = sub.add_parser("estimate", help="evaluate a closed-form estimate")
    kinds = e.add_subparsers(dest="kind", required=True)
    k = kinds.add_parser("probe-rate", parents=[_common("json", False)], help="packets per second an uplink sustains")
    k.add_argument("--upload-bps", type=int, default=40_000_000)
    k.add_argument("--bytes-per-probe", type=int, default=analytics.DEFAULT_PROBE_BYTES)
    k = kinds.add_parser("brute-force", parents=[_common("json", False)], help="time to send every combination")
    k.add_argument("--combinations", type=int, default=65535)
    k.add_argument("--pps", type=int, default=57000)
    k = kinds.add_parser("birthday", parents=[_common("json", False)], help="double-collision success probability")
    k.add_argument("--k", type=int, default=54000)
    k.add_argument("--port-space", type=int, default=65535)
    k = kinds.add_parser("probes-for-target", parents=[_common("json", False)], help="probes per side for a target probability")
    k.add_argument("--p", type=float, default=0.5)
    k.add_argument("--port-space", type=int, default=65535)
    k = kinds.add_parser("birthday-party", parents=[_common("json", False)], help="classic shared-birthday probability")
    k.add_argument("--n", type=int, default=23)
    k.add_argument("--days", type=int, default=365)
    k = kinds.add_parser("retention", parents=[_common("json", False)], help="daily connection-log volume")
    k.add_argument("--customers", type=int, default=25_000_000)
    k.add_argument("--connections", type=int, default=33_000)
    k.add_argument("--bytes-per-record", type=int, default=analytics.DEFAULT_RECORD_BYTES)
    return parser


COMMANDS = {"classify": cmd_classify, "punch": cmd_punch, "matrix": cmd_matrix,
            "montecarlo": cmd_montecarlo, "estimate": cmd_estimate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except (InputError, ScenarioError) as exc:
        print(f"natlab: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_INPUT", "EXIT_FAILED"]
