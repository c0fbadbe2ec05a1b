"""Boundary-driven stationary state: Dirichlet solver, measured profiles,
and the reservoir current ledger.

The stationary active-density profile solves the discrete Dirichlet problem
with the reservoir values alpha placed on the virtual mirror sites; on the
2D cylinder with flat reservoirs the solution is the linear profile
alpha_l + (alpha_r - alpha_l) * i1 / (L + 1) and the expected reservoir
current is K * (alpha_r - alpha_l) per unit time with K = L / (L + 1).

Current sign convention: the ledger J counts net particles absorbed by the
tracked reservoir (a particle leaving the system into the reservoir is +1),
which makes the stationary left-ledger slope equal K * (alpha_r - alpha_l).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import Geometry, Configuration, UsageError, activity_field, PERIODIC
from .dynamics import (BoundarySpec, SimulationState, initial_condition,
                       run_until)


@dataclass
class DirichletSolution:
    geometry: Geometry
    boundary: BoundarySpec
    values: np.ndarray          # rho_a per site, flat
    residual: float

    def grid(self) -> np.ndarray:
        return self.values.reshape((self.geometry.L,) * self.geometry.d)


def _mirror_load(g: Geometry, b: BoundarySpec) -> np.ndarray:
    """Right-hand side: sum of alpha over each site's mirror neighbours."""
    nbr = g.neighbor_table
    load = np.zeros(g.volume)
    n_mirror = (nbr < 0).sum(axis=1)
    for i in np.nonzero(n_mirror)[0]:
        load[i] = n_mirror[i] * b.alpha[g.site_coords(i)]
    return load


def _laplacian_residual(g: Geometry, values: np.ndarray, load: np.ndarray) -> float:
    nbr = g.neighbor_table
    acc = -2 * g.d * values + load
    for k in range(2 * g.d):
        col = nbr[:, k]
        inside = col >= 0
        acc[inside] += values[col[inside]]
    return float(np.abs(acc).max())


def dirichlet_solve(g: Geometry, b: BoundarySpec, tol: float = 1e-10) -> DirichletSolution:
    """Solve sum_{j ~ i} (x_j - x_i) = 0 for all i in the box, with the
    boundary data alpha on the mirror sites (sparse direct solve)."""
    if g.mode == PERIODIC:
        raise UsageError("Dirichlet problem needs an open or cylinder geometry")
    b.arrays(g)  # validates coverage of the boundary
    nbr = g.neighbor_table
    V = g.volume
    rows, cols, vals = [], [], []
    for k in range(2 * g.d):
        col = nbr[:, k]
        inside = np.nonzero(col >= 0)[0]
        rows.append(inside)
        cols.append(col[inside])
        vals.append(-np.ones(len(inside)))
    rows.append(np.arange(V))
    cols.append(np.arange(V))
    vals.append(np.full(V, 2.0 * g.d))
    A = sp.csr_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(V, V))
    load = _mirror_load(g, b)
    x = spla.spsolve(A, load)
    residual = _laplacian_residual(g, x, load)
    if residual > tol:
        raise RuntimeError(
            f"Dirichlet solve did not reach tolerance: residual {residual:.3e} > {tol:.1e}")
    return DirichletSolution(g, b, x, residual)


@dataclass
class StationaryProfile:
    geometry: Geometry
    rho_a: np.ndarray            # per-site time average, flat
    stderr: np.ndarray           # batch-means standard errors
    n_windows: int
    burn_in: float
    window_time: float

    def column_means(self):
        """Per-axis-1-column averages (value, stderr) -- the cylinder profile."""
        L = self.geometry.L
        grid = self.rho_a.reshape((L,) * self.geometry.d)
        err = self.stderr.reshape((L,) * self.geometry.d)
        axes = tuple(range(1, self.geometry.d))
        ncol = L ** (self.geometry.d - 1)
        return (grid.mean(axis=axes) if axes else grid,
                (np.sqrt((err ** 2).sum(axis=axes)) / ncol) if axes else err)


def _fresh_state(g: Geometry, b: BoundarySpec, seed) -> SimulationState:
    rho0 = float(np.mean(list(b.alpha.values())))
    cfg = initial_condition("bernoulli", g, seed, rho=min(max(rho0, 0.05), 0.95))
    return SimulationState(cfg, seed=seed, boundary=b)


def measure_stationary_profile(g: Geometry, b: BoundarySpec,
                               burn_in: Optional[float] = None,
                               windows: int = 20,
                               window_time: Optional[float] = None,
                               seed=0, snapshot_dt: float = 0.5) -> StationaryProfile:
    """Time-averaged A_i per site with batch-means errors.

    Defaults: burn-in 20 L^2 time units, measurement windows of L^2 each,
    sampled every snapshot_dt.  The reservoir dynamics is ergodic, so any
    initial condition works; we start from product Bernoulli at the mean
    reservoir density.

    Caveat: the slowest collective mode (bulk density exchanging with the
    reservoirs) decorrelates slowly, so batch-means errors from a single
    trajectory can undershoot; for calibrated errors average several
    independent runs (different seeds) and take the scatter across them."""
    if burn_in is None:
        burn_in = 20.0 * g.L ** 2
    if window_time is None:
        window_time = float(g.L ** 2)
    st = _fresh_state(g, b, seed)
    run_until(st, time=burn_in)
    means = np.zeros((windows, g.volume))
    for w in range(windows):
        t_end = st.t + window_time
        acc = np.zeros(g.volume)
        k = 0
        while st.t < t_end:
            run_until(st, time=min(st.t + snapshot_dt, t_end))
            acc += activity_field(st.config)
            k += 1
        means[w] = acc / k
    rho_a = means.mean(axis=0)
    stderr = means.std(axis=0, ddof=1) / math.sqrt(windows)
    return StationaryProfile(g, rho_a, stderr, windows, burn_in, window_time)


@dataclass
class CurrentTrajectory:
    times: np.ndarray
    j_left: np.ndarray           # particles absorbed by the left reservoir
    j_right: np.ndarray
    K: float
    slope_left: float
    slope_left_err: float
    slope_right: float
    slope_right_err: float
    final_state: SimulationState


def track_current(g: Geometry, b: BoundarySpec, T: float, seed=0,
                  burn_in: Optional[float] = None,
                  n_checkpoints: int = 200) -> CurrentTrajectory:
    """Reservoir ledgers J_t on a cylinder over a measurement horizon T.

    Ledgers are zeroed after burn-in; E[J_left]/t = K (alpha_r - alpha_l)
    with K = L/(L+1) in the flat-reservoir cylinder stationary state."""
    from .exponents import _ols
    if burn_in is None:
        burn_in = 20.0 * g.L ** 2
    st = _fresh_state(g, b, seed)
    run_until(st, time=burn_in)
    jl0, jr0, t0 = st.j_left, st.j_right, st.t
    times = np.linspace(0.0, T, n_checkpoints + 1)
    jl = np.zeros(n_checkpoints + 1)
    jr = np.zeros(n_checkpoints + 1)
    for k, t in enumerate(times[1:], start=1):
        run_until(st, time=t0 + t)
        jl[k] = st.j_left - jl0
        jr[k] = st.j_right - jr0
    sl, _, sl_err, _, _ = _ols(times, jl)
    sr, _, sr_err, _, _ = _ols(times, jr)
    return CurrentTrajectory(times, jl, jr, g.L / (g.L + 1.0),
                             sl, sl_err, sr, sr_err, st)


def write_profile_csv(path, measured: StationaryProfile,
                      solution: Optional[DirichletSolution] = None):
    import csv
    g = measured.geometry
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"i{a+1}" for a in range(g.d)]
                   + ["rhoA_measured", "stderr", "rhoA_dirichlet"])
        for i in range(g.volume):
            row = list(g.site_coords(i))
            row += [f"{measured.rho_a[i]:.10g}", f"{measured.stderr[i]:.10g}"]
            row.append(f"{solution.values[i]:.10g}" if solution is not None else "")
            w.writerow(row)


def write_current_csv(path, traj: CurrentTrajectory):
    import csv
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "J_left", "J_right"])
        for t, a, c in zip(traj.times, traj.j_left, traj.j_right):
            w.writerow([f"{t:.10g}", int(a), int(c)])
