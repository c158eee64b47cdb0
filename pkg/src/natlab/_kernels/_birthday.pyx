# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled birthday-collision kernel. Mirrors _birthday_py draw for draw."""

from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport free, malloc

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t _draw(uint64_t* state, uint64_t n) nogil:
    state[0] += GAMMA
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    z ^= z >> 31
    return ((z >> 32) * n) >> 32


def trial_seed(uint64_t seed, uint64_t trial):
    return seed + trial * GAMMA


cdef int64_t _trial(int64_t P, int64_t k, int64_t window, uint64_t seed,
                    int64_t* buf) nogil:
    cdef int64_t* free_a = buf
    cdef int64_t* free_b = buf + P
    cdef int64_t* dst_a = buf + 2 * P
    cdef int64_t* dst_b = buf + 3 * P
    cdef int64_t* ring_a = buf + 4 * P
    cdef int64_t* ring_b = buf + 4 * P + window
    cdef int64_t nfa = P, nfb = P
    cdef int64_t i, t, slot, old, pa, pb, da, db
    cdef uint64_t state = seed
    for i in range(P):
        free_a[i] = i
        free_b[i] = i
        dst_a[i] = -1
        dst_b[i] = -1
    for t in range(k):
        slot = t % window
        if t >= window:
            old = ring_a[slot]
            dst_a[old] = -1
            free_a[nfa] = old
            nfa += 1
        i = <int64_t>_draw(&state, <uint64_t>nfa)
        pa = free_a[i]
        nfa -= 1
        free_a[i] = free_a[nfa]
        da = <int64_t>_draw(&state, <uint64_t>P)
        dst_a[pa] = da
        ring_a[slot] = pa

        if t >= window:
            old = ring_b[slot]
            dst_b[old] = -1
            free_b[nfb] = old
            nfb += 1
        i = <int64_t>_draw(&state, <uint64_t>nfb)
        pb = free_b[i]
        nfb -= 1
        free_b[i] = free_b[nfb]
        db = <int64_t>_draw(&state, <uint64_t>P)
        dst_b[pb] = db
        ring_b[slot] = pb

        if dst_b[da] == pa or dst_a[db] == pb:
            return t + 1
    return 0


cdef int64_t* _alloc(int64_t P, int64_t window) except NULL:
    if P < 1 or P >= (<int64_t>1 << 32):
        raise ValueError("port space must lie in [1, 2**32)")
    if window < 1 or window > P:
        raise ValueError("window must lie in [1, port_space]")
    cdef int64_t* buf = <int64_t*>malloc((4 * P + 2 * window) * sizeof(int64_t))
    if buf == NULL:
        raise MemoryError()
    return buf


def birthday_trial(int64_t port_space, int64_t k, int64_t window, uint64_t seed):
    """Slots (probes per side) until success, or 0 when ``k`` slots fail."""
    cdef int64_t* buf = _alloc(port_space, window)
    cdef int64_t r
    try:
        with nogil:
            r = _trial(port_space, k, window, seed, buf)
    finally:
        free(buf)
    return r


def birthday_trials(int64_t port_space, int64_t k, int64_t window, int64_t trials, uint64_t seed):
    """Number of successful trials among ``trials`` independent ones."""
    cdef int64_t* buf = _alloc(port_space, window)
    cdef int64_t n, wins = 0
    try:
        with nogil:
            for n in range(trials):
                if _trial(port_space, k, window, seed + <uint64_t>n * GAMMA, buf):
                    wins += 1
    finally:
        free(buf)
    return wins
