"""Numba kernels for the event-driven constrained lattice gas.

Data conventions shared with the rest of the package:

* ``occ``    -- uint8 occupancy, one entry per site (row-major flattening).
* ``nbr``    -- int64 table of shape (V, 2d); ``nbr[i, k]`` is the flat index
  of the k-th neighbour of site i, or -1 when that neighbour is a virtual
  mirror site outside the box.  Direction order: axis 1 minus, axis 1 plus,
  axis 2 minus, ... (1-based axes as in the public API).
* edge ids  -- the ordered jump (i -> nbr[i, k]) has id ``i * 2d + k``.
* the allowed-jump set is an indexable set: ``pos[eid]`` is the slot of the
  edge in ``items`` (or -1), ``cnt[0]`` the number of present edges.  This
  gives O(1) insert/delete/uniform-sample.

All randomness comes from an explicit xoshiro256++ state (uint64[4]) so that
trajectories are reproducible and resumable; nothing touches global RNGs.
"""

import numpy as np
from numba import njit

U64_MASK = (1 << 64) - 1

# run_core return codes
STOP_TIME = 0
STOP_EVENTS = 1
STOP_ABSORBED = 2

# counters[] layout
CNT_EVENTS = 0
CNT_JUMPS = 1
CNT_NDELTA = 2
CNT_J_LEFT = 3
CNT_J_RIGHT = 4
CNT_RESAMPLES = 5
N_COUNTERS = 6


def splitmix64(z):
    """One splitmix64 step (pure python, used only for seeding)."""
    z = (z + 0x9E3779B97F4A7C15) & U64_MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & U64_MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & U64_MASK
    return z ^ (z >> 31)


def mix_seed(*path):
    """Fold a root seed plus an index path into a single 64-bit seed.

    This is the documented stream splitter: replica/purpose indices are
    absorbed one by one, so (root, i) and (root, j) give independent
    streams for i != j regardless of scheduling.  Tuple/list entries are
    hashed recursively, so composite indices are fine anywhere in the path.
    """
    acc = 0
    for v in path:
        if isinstance(v, (tuple, list)):
            acc = splitmix64((acc ^ (mix_seed(*v) & U64_MASK))
                             + 0x9E3779B97F4A7C15)
        else:
            acc = splitmix64((acc ^ (int(v) & U64_MASK)) + 0x9E3779B97F4A7C15)
    return acc


def make_rng_state(*path):
    """xoshiro256++ state (uint64[4]) derived from a seed path."""
    z = mix_seed(*path)
    out = np.empty(4, dtype=np.uint64)
    for k in range(4):
        z2 = splitmix64(z)
        out[k] = np.uint64(z2)
        z = (z + 0x9E3779B97F4A7C15) & U64_MASK
    if not out.any():  # all-zero state is the one forbidden xoshiro state
        out[0] = np.uint64(1)
    return out


_K23 = np.uint64(23)
_K17 = np.uint64(17)
_K45 = np.uint64(45)
_K41 = np.uint64(41)
_K19 = np.uint64(19)
_K11 = np.uint64(11)
_U64_MAX = np.uint64(0xFFFFFFFFFFFFFFFF)
_ONE = np.uint64(1)
_DBL = 1.1102230246251565e-16  # 2**-53


@njit(inline="always")
def _rotl23(x):
    return (x << _K23) | (x >> _K41)


@njit(inline="always")
def _rotl45(x):
    return (x << _K45) | (x >> _K19)


@njit(inline="always")
def rng_next(state):
    s0 = state[0]
    s1 = state[1]
    s2 = state[2]
    s3 = state[3]
    result = _rotl23(s0 + s3) + s0
    t = s1 << _K17
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = _rotl45(s3)
    return result


@njit(inline="always")
def rng_double(state):
    # uniform in [0, 1)
    return np.float64(rng_next(state) >> _K11) * _DBL


@njit(inline="always")
def rng_exponential(state):
    return -np.log(1.0 - rng_double(state))


@njit(inline="always")
def rng_below(state, n):
    """Uniform integer in [0, n), unbiased (rejection sampling)."""
    n64 = np.uint64(n)
    # 2**64 mod n
    threshold = (_U64_MAX - n64 + _ONE) % n64
    while True:
        x = rng_next(state)
        if x >= threshold:
            return np.int64(x % n64)


@njit(inline="always")
def is_active_site(occ, nbr, i):
    """A_i: occupied with at least one occupied neighbour.

    Mirror neighbours (nbr < 0) count as occupied, which makes every
    occupied boundary site active in open/cylinder mode.
    """
    if occ[i] == 0:
        return False
    nd = nbr.shape[1]
    for k in range(nd):
        q = nbr[i, k]
        if q < 0 or occ[q] == 1:
            return True
    return False


@njit(inline="always")
def _set_add(pos, items, cnt, eid):
    if pos[eid] < 0:
        items[cnt[0]] = eid
        pos[eid] = cnt[0]
        cnt[0] += 1


@njit(inline="always")
def _set_remove(pos, items, cnt, eid):
    slot = pos[eid]
    if slot >= 0:
        last = items[cnt[0] - 1]
        items[slot] = last
        pos[last] = slot
        cnt[0] -= 1
        pos[eid] = -1


@njit
def resync_site(occ, nbr, pos, items, cnt, p):
    """Bring all outgoing edges of site p in line with the configuration."""
    nd = nbr.shape[1]
    act = is_active_site(occ, nbr, p)
    base = p * nd
    for k in range(nd):
        q = nbr[p, k]
        want = act and q >= 0 and occ[q] == 0
        eid = base + k
        if want:
            _set_add(pos, items, cnt, eid)
        else:
            _set_remove(pos, items, cnt, eid)


@njit
def resync_around(occ, nbr, pos, items, cnt, i, j, scratch):
    """Resync edges after occupancy changed at site i (and j, if >= 0).

    Only A_p for p in {i,j} and their neighbours, and eta at {i,j}, can have
    changed, so rescanning the outgoing edges of that radius-1 set is
    equivalent to the radius-2 data rescan.
    """
    nd = nbr.shape[1]
    m = 0
    scratch[m] = i
    m += 1
    if j >= 0:
        scratch[m] = j
        m += 1
    base = m
    for s in range(base):
        p = scratch[s]
        for k in range(nd):
            q = nbr[p, k]
            if q >= 0:
                seen = False
                for t in range(m):
                    if scratch[t] == q:
                        seen = True
                        break
                if not seen:
                    scratch[m] = q
                    m += 1
    for s in range(m):
        resync_site(occ, nbr, pos, items, cnt, scratch[s])


@njit
def build_edges(occ, nbr, pos, items, cnt):
    """Recompute the allowed-jump set from scratch."""
    pos[:] = -1
    cnt[0] = 0
    for p in range(occ.shape[0]):
        resync_site(occ, nbr, pos, items, cnt, p)


@njit(cache=True)
def run_core(occ, nbr, pos, items, cnt,
             bsites, balpha, bledger,
             rng_state, clock, counters, last_event, scratch,
             stop_time, stop_events):
    """Advance the chain until a stop condition fires.

    Total rate is cnt[0] (allowed jumps, rate 1 each) plus one per boundary
    site (Bernoulli resampling).  stop_time is an absolute clock value
    (negative = disabled); stop_events is a budget of additional events
    (negative = disabled).  Returns STOP_TIME / STOP_EVENTS / STOP_ABSORBED.

    Reservoir ledgers: counters[CNT_J_LEFT/RIGHT] accumulate the net number
    of particles absorbed by the tracked reservoir (occupancy 1 -> 0 at a
    tracked boundary site counts +1, 0 -> 1 counts -1).
    """
    nd = nbr.shape[1]
    n_boundary = bsites.shape[0]
    done = 0
    while True:
        if stop_events >= 0 and done >= stop_events:
            return STOP_EVENTS
        n_edges = cnt[0]
        total_rate = n_edges + n_boundary
        if total_rate == 0:
            return STOP_ABSORBED
        dt = rng_exponential(rng_state) / total_rate
        if stop_time >= 0.0 and clock[0] + dt > stop_time:
            clock[0] = stop_time
            return STOP_TIME
        clock[0] += dt
        r = rng_below(rng_state, total_rate)
        if r < n_edges:
            eid = items[r]
            i = eid // nd
            j = nbr[i, eid % nd]
            occ[i] = 0
            occ[j] = 1
            resync_around(occ, nbr, pos, items, cnt, i, j, scratch)
            counters[CNT_JUMPS] += 1
            last_event[0] = 0
            last_event[1] = i
            last_event[2] = j
        else:
            b = r - n_edges
            site = bsites[b]
            newval = 1 if rng_double(rng_state) < balpha[b] else 0
            old = occ[site]
            if newval != old:
                occ[site] = newval
                resync_around(occ, nbr, pos, items, cnt, site, -1, scratch)
                counters[CNT_NDELTA] += newval - old
                code = bledger[b]
                if code == 1:
                    counters[CNT_J_LEFT] += old - newval
                elif code == 2:
                    counters[CNT_J_RIGHT] += old - newval
            counters[CNT_RESAMPLES] += 1
            last_event[0] = 1
            last_event[1] = site
            last_event[2] = newval
        counters[CNT_EVENTS] += 1
        done += 1
