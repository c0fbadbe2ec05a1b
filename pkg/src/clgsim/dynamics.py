"""Continuous-time Markov evolution of the constrained lattice gas.

Exact event-driven simulation: the total rate is the number of allowed
jumps plus (in open/cylinder mode) one per reservoir boundary site, waiting
times are exponential, and the event is picked uniformly among the unit-rate
channels.  A boundary event resamples the site occupancy to Bernoulli(alpha).

All randomness is drawn from explicit xoshiro256++ streams derived from a
root seed through :func:`clgsim._kernel.mix_seed`; per-replica streams are
``make_rng_state(root, replica_index)`` so sweeps reproduce independently of
scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernel
from .lattice import (Geometry, Configuration, ActiveEdgeSet, UsageError,
                      PERIODIC, OPEN, CYLINDER)

STOP_TIME = "time"
STOP_EVENTS = "events"
STOP_ABSORBED = "absorbed"
_REASONS = {_kernel.STOP_TIME: STOP_TIME,
            _kernel.STOP_EVENTS: STOP_EVENTS,
            _kernel.STOP_ABSORBED: STOP_ABSORBED}


@dataclass(frozen=True)
class BoundarySpec:
    """Reservoir active-density alpha(i) on the boundary sites.

    alpha maps 1-based coordinate tuples of boundary sites to values in the
    open interval (0,1); it must cover the whole reservoir boundary of the
    geometry it is used with.
    """

    alpha: dict

    def __post_init__(self):
        for site, a in self.alpha.items():
            if not (0.0 < a < 1.0):
                raise UsageError(f"alpha({site}) = {a} not in (0,1)")

    @classmethod
    def uniform(cls, g: Geometry, value: float) -> "BoundarySpec":
        return cls({g.site_coords(i): value for i in g.boundary_sites()})

    @classmethod
    def cylinder(cls, g: Geometry, alpha_left: float, alpha_right: float) -> "BoundarySpec":
        """Left face (axis-1 coordinate 1) at alpha_left, right face at alpha_right."""
        if g.mode != CYLINDER and not (g.mode == OPEN and g.d == 1):
            raise UsageError("cylinder boundary spec needs cylinder geometry")
        out = {}
        for i in g.boundary_sites():
            site = g.site_coords(i)
            out[site] = alpha_left if site[0] == 1 else alpha_right
        return cls(out)

    def arrays(self, g: Geometry):
        """(bsites, balpha, bledger) kernel arrays; ledger codes 1 = left
        face, 2 = right face (axis 1)."""
        bsites = g.boundary_sites()
        want = {g.site_coords(i) for i in bsites}
        have = set(self.alpha)
        if want != have:
            missing = sorted(want - have)[:3]
            extra = sorted(have - want)[:3]
            raise UsageError(
                f"boundary spec mismatch (missing {missing}, extra {extra})")
        balpha = np.array([self.alpha[g.site_coords(i)] for i in bsites])
        bledger = np.zeros(len(bsites), dtype=np.int8)
        for k, i in enumerate(bsites):
            site = g.site_coords(i)
            if site[0] == 1:
                bledger[k] = 1
            elif site[0] == g.L:
                bledger[k] = 2
        return bsites, balpha, bledger


_EMPTY_BSITES = np.empty(0, dtype=np.int64)
_EMPTY_BALPHA = np.empty(0, dtype=np.float64)
_EMPTY_BLEDGER = np.empty(0, dtype=np.int8)


@dataclass
class Event:
    kind: str          # "jump" or "resample"
    site: tuple
    target: tuple | int  # destination site for jumps, new value for resamples
    t: float


class SimulationState:
    """Configuration + allowed-jump set + clock + RNG stream."""

    def __init__(self, config: Configuration, seed=0, *, rng_state=None,
                 boundary: Optional[BoundarySpec] = None):
        g = config.geometry
        if g.mode != PERIODIC and boundary is None:
            raise UsageError(f"{g.mode} geometry requires a BoundarySpec")
        if g.mode == PERIODIC and boundary is not None:
            raise UsageError("periodic geometry takes no BoundarySpec")
        self.config = config
        self.edges = ActiveEdgeSet(config)
        self.boundary = boundary
        if boundary is not None:
            self._bsites, self._balpha, self._bledger = boundary.arrays(g)
        else:
            self._bsites = _EMPTY_BSITES
            self._balpha = _EMPTY_BALPHA
            self._bledger = _EMPTY_BLEDGER
        self._clock = np.zeros(1, dtype=np.float64)
        self.counters = np.zeros(_kernel.N_COUNTERS, dtype=np.int64)
        self._last_event = np.full(3, -1, dtype=np.int64)
        if rng_state is not None:
            self.rng_state = np.asarray(rng_state, dtype=np.uint64).copy()
        else:
            self.rng_state = _kernel.make_rng_state(seed)

    @property
    def t(self) -> float:
        return float(self._clock[0])

    @property
    def event_count(self) -> int:
        return int(self.counters[_kernel.CNT_EVENTS])

    @property
    def jump_count(self) -> int:
        return int(self.counters[_kernel.CNT_JUMPS])

    @property
    def j_left(self) -> int:
        """Net particles absorbed by the left reservoir (leavers positive)."""
        return int(self.counters[_kernel.CNT_J_LEFT])

    @property
    def j_right(self) -> int:
        return int(self.counters[_kernel.CNT_J_RIGHT])

    @property
    def total_rate(self) -> float:
        return float(self.edges.total_count + len(self._bsites))

    @property
    def is_absorbed(self) -> bool:
        return self.total_rate == 0

    def _run(self, stop_time: float, stop_events: int) -> str:
        g = self.config.geometry
        code = _kernel.run_core(
            self.config.occ, g.neighbor_table,
            self.edges.pos, self.edges.items, self.edges.cnt,
            self._bsites, self._balpha, self._bledger,
            self.rng_state, self._clock, self.counters,
            self._last_event, self.edges.scratch,
            stop_time, stop_events)
        return _REASONS[code]


def kmc_step(state: SimulationState) -> Optional[Event]:
    """Execute one event; returns its descriptor, or None on absorption
    (periodic mode with no allowed jump -- the clock does not advance)."""
    reason = state._run(-1.0, 1)
    if reason == STOP_ABSORBED:
        return None
    g = state.config.geometry
    kind_code, a, b = (int(x) for x in state._last_event)
    if kind_code == 0:
        return Event("jump", g.site_coords(a), g.site_coords(b), state.t)
    return Event("resample", g.site_coords(a), b, state.t)


def run_until(state: SimulationState, *, time: Optional[float] = None,
              events: Optional[int] = None) -> str:
    """Advance until the first stop condition: absolute clock `time`,
    `events` additional events, or absorption.  Returns which one fired."""
    if time is None and events is None:
        raise UsageError("run_until needs a time or an event budget")
    stop_time = -1.0 if time is None else float(time)
    stop_events = -1 if events is None else int(events)
    return state._run(stop_time, stop_events)


def absorption_time(initial: Configuration, seeds,
                    event_cap: int = 10 ** 8,
                    boundary: Optional[BoundarySpec] = None):
    """Absorption times for one initial condition over a list of seeds.

    Returns a list of (time, censored).  Runs hitting the event cap are
    returned censored at the reached clock value, never discarded.
    """
    out = []
    for seed in seeds:
        st = SimulationState(initial.copy(), seed=seed, boundary=boundary)
        reason = run_until(st, events=event_cap)
        out.append((st.t, reason != STOP_ABSORBED))
    return out


def numpy_rng(*path) -> np.random.Generator:
    """Deterministic numpy generator from a seed path (used for initial
    conditions and estimator subsampling, never for the dynamics)."""
    return np.random.Generator(np.random.PCG64(_kernel.mix_seed(*path)))


def initial_condition(kind: str, g: Geometry, seed=0, *, n: int = None,
                      rho: float = None, block: int = None) -> Configuration:
    """Draw an initial configuration of the requested law.

    kinds: 'uniform-n' (n occupied sites without replacement),
    'bernoulli' (product Bernoulli(rho)), 'chessboard',
    'centered-block' (block^d occupied cube centered in an empty box),
    'grand-canonical-1d' (the exact 1D stationary law at density rho).
    """
    rng = numpy_rng(seed, 0x1C)
    V = g.volume
    if kind == "uniform-n":
        if n is None or not (0 <= n <= V):
            raise UsageError(f"uniform-n needs 0 <= n <= {V}")
        occ = np.zeros(V, dtype=np.uint8)
        occ[rng.choice(V, size=n, replace=False)] = 1
        return Configuration(g, occ)
    if kind == "bernoulli":
        if rho is None or not (0.0 <= rho <= 1.0):
            raise UsageError("bernoulli needs rho in [0,1]")
        return Configuration(g, (rng.random(V) < rho).astype(np.uint8))
    if kind == "chessboard":
        coords = np.indices((g.L,) * g.d).reshape(g.d, V)
        occ = (coords.sum(axis=0) % 2 == 0).astype(np.uint8)
        return Configuration(g, occ)
    if kind == "centered-block":
        if block is None or block > g.L:
            raise UsageError("centered-block needs block <= L")
        occ = np.zeros((g.L,) * g.d, dtype=np.uint8)
        lo = (g.L - block) // 2
        occ[tuple(slice(lo, lo + block) for _ in range(g.d))] = 1
        return Configuration(g, occ.ravel())
    if kind == "grand-canonical-1d":
        if g.d != 1:
            raise UsageError("grand-canonical-1d needs d = 1")
        from .exact1d import sample_pi_rho
        return sample_pi_rho(rho, g.L, seed, geometry=g)
    raise UsageError(f"unknown initial condition kind {kind!r}")


# --- checkpointing -------------------------------------------------------
#
# Snapshot format (.npz): d, L, mode, packed occupancy bits, clock, the
# xoshiro256++ state, and the event counters.  Sufficient for exact resume;
# the boundary spec is part of the experiment config, not the snapshot.

def save_checkpoint(state: SimulationState, path):
    g = state.config.geometry
    np.savez(path,
             d=g.d, L=g.L, mode=g.mode,
             occ_bits=np.packbits(state.config.occ),
             clock=state._clock, rng_state=state.rng_state,
             counters=state.counters)


def load_checkpoint(path, boundary: Optional[BoundarySpec] = None) -> SimulationState:
    with np.load(path) as z:
        g = Geometry(int(z["d"]), int(z["L"]), str(z["mode"]))
        occ = np.unpackbits(z["occ_bits"])[:g.volume].astype(np.uint8)
        st = SimulationState(Configuration(g, occ),
                             rng_state=z["rng_state"], boundary=boundary)
        st._clock[:] = z["clock"]
        st.counters[:] = z["counters"]
    return st
