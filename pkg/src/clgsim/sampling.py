"""Measurement protocols: how snapshot ensembles are produced.

Two declared protocols:

* 1D supercritical (rho > 1/2): start from the exact stationary sampler
  (optionally conditioned on the exact particle number, which removes the
  O(L^-1/2) canonical density scatter), burn a fixed event budget, then
  record evenly spaced snapshots.  Several independent replicas decorrelate
  the slow conserved modes that a single trajectory cannot.

* d >= 2 quasi-stationary (rho_c < rho < 1/2): burn-in of burn_factor * L^2
  time units from a uniform-n draw, then measurement windows; a trajectory
  absorbed mid-measurement is restarted from a fresh draw and the restart is
  counted, never silently discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .lattice import Geometry, Configuration, UsageError, PERIODIC
from .dynamics import (SimulationState, initial_condition, run_until,
                       STOP_ABSORBED)
from .exact1d import sample_pi_rho


@dataclass
class SnapshotRun:
    geometry: Geometry
    snapshots: list              # Configurations
    snapshot_times: list
    total_time: float            # summed measurement time over replicas
    total_jumps: int             # executed jumps during measurement
    restarts: int = 0
    censored: bool = False


def pinned_pi_rho(rho: float, L: int, seed, max_tries: int = 5000) -> Configuration:
    """Grand-canonical 1D sample conditioned on n = round(rho * L)."""
    target = round(rho * L)
    for k in range(max_tries):
        cfg = sample_pi_rho(rho, L, seed=(seed, k) if k else seed)
        if cfg.n == target:
            return cfg
    raise RuntimeError("particle-number conditioning did not terminate")


def stationary_snapshots_1d(L: int, rho: float, n_snapshots: int,
                            seed=0, *, replicas: int = 1,
                            burn_events: int | None = None,
                            spacing: float = 2.0,
                            pin_density: bool = True) -> SnapshotRun:
    """Stationary 1D snapshot ensemble at rho > 1/2 on the torus."""
    if burn_events is None:
        burn_events = 10 * L
    g = Geometry(1, L, PERIODIC)
    per_rep = n_snapshots // replicas
    if per_rep * replicas != n_snapshots:
        raise UsageError("n_snapshots must divide evenly among replicas")
    snaps, times = [], []
    total_time = 0.0
    total_jumps = 0
    for rep in range(replicas):
        if pin_density:
            cfg = pinned_pi_rho(rho, L, (seed, rep, 0xA))
        else:
            cfg = sample_pi_rho(rho, L, seed=(seed, rep, 0xA))
        st = SimulationState(cfg, rng_state=_dyn_state(seed, rep))
        run_until(st, events=burn_events)
        t_start, j_start = st.t, st.jump_count
        for k in range(per_rep):
            run_until(st, time=st.t + spacing)
            snaps.append(st.config.copy())
            times.append(st.t)
        total_time += st.t - t_start
        total_jumps += st.jump_count - j_start
    return SnapshotRun(g, snaps, times, total_time, total_jumps)


def _dyn_state(seed, rep):
    from ._kernel import make_rng_state
    return make_rng_state(seed, rep)


def quasi_stationary_snapshots(g: Geometry, rho: float, n_snapshots: int,
                               seed=0, *, burn_factor: float = 10.0,
                               spacing: float = 1.0,
                               max_restarts: int = 50) -> SnapshotRun:
    """Quasi-stationary ensemble for d >= 2 below the permanently active
    threshold: burn burn_factor * L^2, record snapshots, restart from a
    fresh uniform-n draw whenever the trajectory absorbs."""
    if g.mode != PERIODIC:
        raise UsageError("quasi-stationary protocol runs on the torus")
    n = round(rho * g.volume)
    burn = burn_factor * g.L ** 2
    snaps, times = [], []
    total_time = 0.0
    total_jumps = 0
    restarts = 0
    attempt = 0
    while len(snaps) < n_snapshots:
        if restarts > max_restarts:
            return SnapshotRun(g, snaps, times, total_time, total_jumps,
                               restarts, censored=True)
        cfg = initial_condition("uniform-n", g, (seed, attempt), n=n)
        st = SimulationState(cfg, rng_state=_dyn_state(seed, attempt))
        attempt += 1
        if run_until(st, time=burn) == STOP_ABSORBED:
            restarts += 1
            continue
        t_start, j_start = st.t, st.jump_count
        absorbed = False
        while len(snaps) < n_snapshots:
            if run_until(st, time=st.t + spacing) == STOP_ABSORBED:
                absorbed = True
                break
            snaps.append(st.config.copy())
            times.append(st.t)
        total_time += st.t - t_start
        total_jumps += st.jump_count - j_start
        if absorbed:
            restarts += 1
    return SnapshotRun(g, snaps, times, total_time, total_jumps, restarts)
