"""Compare the compiled birthday kernel with its pure-Python twin.

Both backends must return identical results for identical seeds; the
benchmark checks that before timing anything.

    python3 benchmarks/bench_birthday_kernel.py [--trials N] [--port-space P]
"""

from __future__ import annotations

import argparse
import math
import time

from natlab._kernels import _birthday_py

try:
    from natlab._kernels import _birthday as _compiled
except ImportError:  # extension not built
    _compiled = None


def _time(fn, *args) -> tuple[float, object]:
    t0 = time.perf_counter()
    out = fn(*args)
    return time.perf_counter() - t0, out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--port-space", type=int, default=1024)
    ap.add_argument("--seed", type=int, default=12345)
    args = ap.parse_args()

    P = args.port_space
    points = [math.ceil(P * math.sqrt(math.log(2))), math.ceil(P * math.sqrt(math.log(1000)))]
    print(f"port space {P}, {args.trials} trials per point")
    print(f"{'k':>7} {'window':>7} {'python s':>10} {'cython s':>10} {'speedup':>8} {'successes':>10}")
    for k in points:
        w = min(k, P)
        t_py, wins_py = _time(_birthday_py.birthday_trials, P, k, w, args.trials, args.seed)
        if _compiled is None:
            print(f"{k:>7} {w:>7} {t_py:>10.3f} {'n/a':>10} {'n/a':>8} {wins_py:>10}")
            continue
        t_c, wins_c = _time(_compiled.birthday_trials, P, k, w, args.trials, args.seed)
        if wins_c != wins_py:
            raise SystemExit(f"backends disagree at k={k}: python {wins_py}, cython {wins_c}")
        print(f"{k:>7} {w:>7} {t_py:>10.3f} {t_c:>10.4f} {t_py / t_c:>7.0f}x {wins_c:>10}")


if __name__ == "__main__":
    main()
