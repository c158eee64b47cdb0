"""Pure-Python birthday-collision kernel (reference for the compiled one).

Slot model of one birthday punch: in slot ``t`` each side opens a mapping on
a random free external port in ``[0, P)`` and aims it at a random port of
the peer. A side keeps at most ``window`` mappings live; the oldest is
released before a new one is opened. The punch succeeds at the first slot
where some live mapping of one side was aimed at the external port of a
live mapping of the other side, and vice versa.

The RNG is splitmix64 and bounded draws use ``((x >> 32) * n) >> 32`` so
the compiled kernel reproduces every draw exactly.
"""

from __future__ import annotations

MASK = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15


def trial_seed(seed: int, trial: int) -> int:
    return (seed + trial * GAMMA) & MASK


def birthday_trial(port_space: int, k: int, window: int, seed: int) -> int:
    """Slots (probes per side) until success, or 0 when ``k`` slots fail."""
    P = port_space
    if P < 1 or P >= 1 << 32:
        raise ValueError("port space must lie in [1, 2**32)")
    if window < 1 or window > P:
        raise ValueError("window must lie in [1, port_space]")
    state = seed & MASK

    def draw(n: int) -> int:
        nonlocal state
        state = (state + GAMMA) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        z ^= z >> 31
        return ((z >> 32) * n) >> 32

    free = [list(range(P)), list(range(P))]
    nfree = [P, P]
    live_dst = [[-1] * P, [-1] * P]
    ring = [[0] * window, [0] * window]
    for t in range(k):
        slot = t % window
        ports = [0, 0]
        dsts = [0, 0]
        for s in (0, 1):
            fl, ld, rg = free[s], live_dst[s], ring[s]
            if t >= window:
                old = rg[slot]
                ld[old] = -1
                fl[nfree[s]] = old
                nfree[s] += 1
            i = draw(nfree[s])
            port = fl[i]
            nfree[s] -= 1
            fl[i] = fl[nfree[s]]
            dst = draw(P)
            ld[port] = dst
            rg[slot] = port
            ports[s], dsts[s] = port, dst
        # A's new mapping against B's live set (which includes B's new one),
        # then B's new mapping against A's live set.
        if live_dst[1][dsts[0]] == ports[0] or live_dst[0][dsts[1]] == ports[1]:
            return t + 1
    return 0


def birthday_trials(port_space: int, k: int, window: int, trials: int, seed: int) -> int:
    """Number of successful trials among ``trials`` independent ones."""
    return sum(1 for i in range(trials) if birthday_trial(port_space, k, window, trial_seed(seed, i)))
