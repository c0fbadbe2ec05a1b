"""Estimators for the macroscopic observables.

Spatial estimators work on immutable occupancy snapshots and are exactly
translation covariant on the torus (everything reduces to FFT
autocorrelations or box counts with wraparound).  Correlation functions use
the pooled empirical mean of the sample set rather than the nominal density;
this avoids an O(1/L^d) mean mismatch at the price of a documented negative
bias of the same order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .lattice import Geometry, Configuration, UsageError, activity_field
from . import exponents as _exp


def _occ_stack(samples) -> tuple[Geometry, np.ndarray]:
    """Stack Configurations (or raw occupancy arrays + geometry) to (S, V)."""
    if isinstance(samples, tuple) and isinstance(samples[0], Geometry):
        g, arr = samples
        return g, np.asarray(arr, dtype=np.float64)
    samples = list(samples)
    g = samples[0].geometry
    if any(c.geometry != g for c in samples):
        raise UsageError("samples must share one geometry")
    return g, np.stack([c.occ for c in samples]).astype(np.float64)


def measure_rho_a(c: Configuration) -> float:
    """Active density n_a / L^d."""
    return float(activity_field(c).sum()) / c.geometry.volume


def _ordered_pair_count(c: Configuration) -> int:
    nbr = c.geometry.neighbor_table
    A = activity_field(c).astype(bool)
    empty_nbr = (nbr >= 0) & (c.occ[np.clip(nbr, 0, None)] == 0)
    return int(empty_nbr[A].sum())


def measure_activity(c: Configuration) -> float:
    """Activity a = (ordered pairs i~j with A_i (1 - eta_j) = 1) / L^d."""
    return _ordered_pair_count(c) / c.geometry.volume


def n_lattice_edges(g: Geometry) -> int:
    """Unordered in-lattice nearest-neighbour edges (d * L^d on the torus)."""
    return int((g.neighbor_table >= 0).sum()) // 2


def conductivity_estimate(samples) -> tuple[float, float]:
    """Conductivity via the symmetrized edge rate: sigma = E[c_edge] / 2.

    The summed edge function over all unordered edges equals the ordered
    pair count, so per snapshot sigma_hat = pairs / (2 * n_edges).
    Returns (estimate, standard error over snapshots).
    """
    samples = list(samples)
    g = samples[0].geometry
    E = n_lattice_edges(g)
    vals = np.array([_ordered_pair_count(c) / (2.0 * E) for c in samples])
    err = vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
    return float(vals.mean()), float(err)


def conductivity_from_crossings(n_jumps: int, elapsed: float, g: Geometry) -> float:
    """Conductivity from realized jump counts: each executed jump crosses
    one edge, so sigma = crossings / (2 * n_edges * T)."""
    if elapsed <= 0:
        raise UsageError("need positive elapsed time")
    return n_jumps / (2.0 * n_lattice_edges(g) * elapsed)


# --- two-point correlations ----------------------------------------------

@dataclass
class CorrelationProfile:
    """Spatial two-point correlation estimate on a torus.

    lags/phi/phi_err: correlation along the axis directions (averaged over
    axes).  shells/shell_sum: summed correlation per l1 shell, with
    cumulative sums and their sample-to-sample errors for compressibility
    estimates.  xi_cross is filled by fit_xi().
    """
    geometry: Geometry
    rho_hat: float
    n_samples: int
    lags: np.ndarray
    phi: np.ndarray
    phi_err: np.ndarray
    shells: np.ndarray
    shell_sum: np.ndarray
    cum_sum: np.ndarray
    cum_err: np.ndarray
    low_statistics: bool = False
    xi_cross: Optional[_exp.XiCrossFit] = None

    def fit_xi(self, r_max=None) -> _exp.XiCrossFit:
        self.xi_cross = _exp.xi_cross_fit(self.lags, self.phi, r_max=r_max)
        return self.xi_cross

    def noise_floor_r_max(self, snr: float = 5.0) -> int:
        """Largest lag before |phi| drops below snr standard errors: the
        default upper end of the exponential-decay fit window (overridable
        wherever it matters)."""
        for r in range(1, len(self.lags)):
            if abs(self.phi[r]) < snr * max(self.phi_err[r], 1e-300):
                return max(int(self.lags[r]) - 1, 3)
        return int(self.lags[-1])


def _l1_shell_index(g: Geometry) -> np.ndarray:
    axes = np.arange(g.L)
    dist1 = np.minimum(axes, g.L - axes)
    total = np.zeros((g.L,) * g.d, dtype=np.int64)
    for a in range(g.d):
        shape = [1] * g.d
        shape[a] = g.L
        total = total + dist1.reshape(shape)
    return total.ravel()


def two_point_correlation(samples, max_lag: int) -> CorrelationProfile:
    """phi(r) = avg over samples and translations of
    (eta_i - rho_hat)(eta_{i+r} - rho_hat), via FFT autocorrelation."""
    g, occ = _occ_stack(samples)
    if g.mode != "periodic":
        raise UsageError("correlation estimator needs a torus")
    if not (0 < max_lag < g.L // 2 or g.L == 2):
        raise UsageError(f"max_lag must be in (0, L/2), got {max_lag}")
    S = occ.shape[0]
    if S < 2:
        raise UsageError("need at least 2 samples for correlation errors")
    rho_hat = float(occ.mean())
    shape = (g.L,) * g.d
    centered = occ.reshape((S,) + shape) - rho_hat
    spec = np.fft.rfftn(centered, axes=tuple(range(1, g.d + 1)))
    corr = np.fft.irfftn(np.abs(spec) ** 2, s=shape,
                         axes=tuple(range(1, g.d + 1))) / g.volume
    corr_flat = corr.reshape(S, g.volume)

    # axis profile, averaged over the d axes (both lag signs are identical
    # by construction of the autocorrelation)
    lags = np.arange(max_lag + 1)
    axis_vals = np.zeros((S, max_lag + 1))
    for a in range(g.d):
        idx = [0] * g.d
        for r in lags:
            idx[a] = r
            axis_vals[:, r] += corr.reshape((S,) + shape)[(slice(None),) + tuple(idx)]
    axis_vals /= g.d
    phi = axis_vals.mean(axis=0)
    phi_err = axis_vals.std(axis=0, ddof=1) / math.sqrt(S)

    shell_idx = _l1_shell_index(g)
    n_shells = int(shell_idx.max()) + 1
    per_sample_shell = np.zeros((S, n_shells))
    for s in range(S):
        per_sample_shell[s] = np.bincount(shell_idx, weights=corr_flat[s],
                                          minlength=n_shells)
    cum = per_sample_shell.cumsum(axis=1)
    return CorrelationProfile(
        geometry=g, rho_hat=rho_hat, n_samples=S,
        lags=lags, phi=phi, phi_err=phi_err,
        shells=np.arange(n_shells),
        shell_sum=per_sample_shell.mean(axis=0),
        cum_sum=cum.mean(axis=0),
        cum_err=cum.std(axis=0, ddof=1) / math.sqrt(S),
        low_statistics=S < 8)


@dataclass(frozen=True)
class ChiEstimate:
    value: float
    err: float
    tail: float
    cutoff: int
    non_decaying: bool


def compressibility_from_correlations(profile: CorrelationProfile,
                                      cutoff: int) -> ChiEstimate:
    """chi = sum of phi over the l1 ball of radius cutoff, plus a geometric
    tail correction from the fitted exponential decay.

    Flags non_decaying when the cutoff sits inside the correlation length
    (tail correction then untrustworthy)."""
    if cutoff >= len(profile.cum_sum):
        raise UsageError("cutoff exceeds available shells")
    core = float(profile.cum_sum[cutoff])
    err = float(profile.cum_err[cutoff])
    tail = 0.0
    non_decaying = False
    try:
        fit = profile.xi_cross or profile.fit_xi(r_max=min(cutoff, profile.lags[-1]))
        if fit.xi >= cutoff / 2.0 or fit.nonmonotone:
            non_decaying = True
        q = math.exp(-1.0 / fit.xi)
        last = float(profile.shell_sum[cutoff])
        sign = math.copysign(1.0, profile.phi[min(cutoff, len(profile.phi) - 1)]
                             * profile.phi[min(cutoff, len(profile.phi) - 1) - 1])
        q = q if sign > 0 else -q
        tail = last * q / (1.0 - q)
    except UsageError:
        pass  # no resolvable decay (e.g. independent samples): no tail
    return ChiEstimate(core + tail, err, tail, cutoff, non_decaying)


# --- box-variance estimators ----------------------------------------------

@dataclass
class BoxVarianceCurve:
    box_sizes: np.ndarray
    var: np.ndarray
    var_err: np.ndarray
    dimension: int
    n_counts: int


def _integral_image(grid: np.ndarray, pad: int) -> np.ndarray:
    padded = np.pad(grid, [(0, pad)] * grid.ndim, mode="wrap").astype(np.int64)
    out = padded
    for a in range(grid.ndim):
        out = out.cumsum(axis=a)
        out = np.concatenate(
            [np.zeros_like(np.take(out, [0], axis=a)), out], axis=a)
    return out


def _box_counts(integral: np.ndarray, corners: np.ndarray, R: int) -> np.ndarray:
    d = corners.shape[1]
    total = np.zeros(corners.shape[0], dtype=np.int64)
    for signs in product((0, 1), repeat=d):
        idx = tuple(corners[:, a] + signs[a] * R for a in range(d))
        parity = (-1) ** (d - sum(signs))
        total += parity * integral[idx]
    return total


def box_variance_curve(samples, box_sizes: Sequence[int], seed=0,
                       n_boxes: int = 200) -> BoxVarianceCurve:
    """Variance of the particle count in boxes [R]^d at random torus
    positions (wraparound), per box size."""
    from .dynamics import numpy_rng
    g, occ = _occ_stack(samples)
    box_sizes = sorted(int(R) for R in box_sizes)
    if box_sizes[-1] >= g.L:
        raise UsageError("largest box must be smaller than the lattice")
    rng = numpy_rng(seed, 0xB0)
    S = occ.shape[0]
    shape = (g.L,) * g.d
    Rmax = box_sizes[-1]
    counts = {R: [] for R in box_sizes}
    for s in range(S):
        integral = _integral_image(occ[s].reshape(shape), Rmax)
        corners = rng.integers(0, g.L, size=(n_boxes, g.d))
        for R in box_sizes:
            counts[R].append(_box_counts(integral, corners, R))
    var = np.empty(len(box_sizes))
    var_err = np.empty(len(box_sizes))
    for k, R in enumerate(box_sizes):
        x = np.concatenate(counts[R]).astype(np.float64)
        var[k] = x.var(ddof=1)
        # moment-based error on a sample variance (ignores box overlap,
        # adequate as a scale for plateau checks)
        m2 = var[k]
        m4 = ((x - x.mean()) ** 4).mean()
        var_err[k] = math.sqrt(max(m4 - m2 ** 2, 0.0) / len(x))
    return BoxVarianceCurve(np.array(box_sizes), var, var_err, g.d, S * n_boxes)


@dataclass(frozen=True)
class BoxChiEstimate:
    value: Optional[float]
    err: float
    no_plateau: bool
    curve: BoxVarianceCurve


def compressibility_from_box_variance(samples, box_sizes, seed=0,
                                      n_boxes: int = 200) -> BoxChiEstimate:
    """Plateau of Var(count in [R]^d)/R^d over the largest available decade
    of R.  In the hyperuniform regime there is no plateau; the curve is then
    returned with chi = None and no_plateau set."""
    curve = box_variance_curve(samples, box_sizes, seed=seed, n_boxes=n_boxes)
    R = curve.box_sizes.astype(float)
    density = curve.var / R ** curve.dimension
    density_err = curve.var_err / R ** curve.dimension
    window = R >= R[-1] / 10.0
    if window.sum() < 2:
        window = np.ones_like(R, dtype=bool)
    slope, _, slope_err, _, _ = _exp._ols(np.log(R[window]),
                                          np.log(np.maximum(density[window], 1e-300)))
    no_plateau = abs(slope) > max(3.0 * slope_err, 0.15)
    # unweighted mean over the plateau window: inverse-variance weights would
    # overweight small boxes, which carry an O(1/R) discreteness bias
    value = float(density[window].mean())
    err = float(np.sqrt((density_err[window] ** 2).sum()) / window.sum())
    if no_plateau:
        return BoxChiEstimate(None, err, True, curve)
    return BoxChiEstimate(value, err, False, curve)


def hyperuniformity_exponent(curve: BoxVarianceCurve) -> tuple[float, float]:
    """zeta from the slope of log Var against log R (divided by 2).

    Needs at least 5 box sizes spanning at least one decade."""
    R = curve.box_sizes.astype(float)
    if len(R) < 5 or R[-1] / R[0] < 10.0:
        raise UsageError("zeta fit needs >= 5 box sizes spanning a decade")
    slope, _, slope_err, _, _ = _exp._ols(np.log(R),
                                          np.log(np.maximum(curve.var, 1e-300)))
    return slope / 2.0, slope_err / 2.0


# --- space-time correlations ----------------------------------------------

@dataclass
class SpaceTimeCorrelation:
    geometry: Geometry
    dt: float
    lag_steps: np.ndarray        # in snapshot steps
    times: np.ndarray            # lag_steps * dt
    psi: np.ndarray              # (n_lags, V) mean over time origins
    mass: np.ndarray             # (n_lags,) mean of sum_i psi(t, i)
    mass_err: np.ndarray
    rho_hat: float
    n_origins: int


def space_time_correlation(snapshots: np.ndarray, g: Geometry, dt: float,
                           lag_steps: Sequence[int]) -> SpaceTimeCorrelation:
    """psi(t, i) averaged over time origins and translations, from a
    stationary trajectory sampled every dt time units."""
    snaps = np.asarray(snapshots, dtype=np.float64)
    S = snaps.shape[0]
    lag_steps = np.array(sorted(int(k) for k in lag_steps))
    if lag_steps[-1] >= S:
        raise UsageError("trajectory too short for the requested lags")
    rho_hat = float(snaps.mean())
    shape = (g.L,) * g.d
    fft_axes = tuple(range(1, g.d + 1))
    spec = np.fft.rfftn(snaps.reshape((S,) + shape) - rho_hat, axes=fft_axes)
    n_origins = S - int(lag_steps[-1])
    psi = np.empty((len(lag_steps), g.volume))
    mass = np.empty(len(lag_steps))
    mass_err = np.empty(len(lag_steps))
    for idx, k in enumerate(lag_steps):
        prod_spec = np.conj(spec[:n_origins]) * spec[k:k + n_origins]
        cross = np.fft.irfftn(prod_spec, s=shape, axes=fft_axes) / g.volume
        cross = cross.reshape(n_origins, g.volume)
        psi[idx] = cross.mean(axis=0)
        sums = cross.sum(axis=1)
        mass[idx] = sums.mean()
        mass_err[idx] = sums.std(ddof=1) / math.sqrt(n_origins)
    return SpaceTimeCorrelation(g, dt, lag_steps, lag_steps * dt, psi,
                                mass, mass_err, rho_hat, n_origins)


@dataclass
class EinsteinCheck:
    times: np.ndarray
    lhs: np.ndarray              # truncated sum_i i1^2 [psi(t,i) - psi(0,i)]
    lhs_err: np.ndarray
    slope: float
    slope_err: float
    sigma_hat: float             # slope / 2: the Einstein-relation estimate
    sigma_err: float
    expected_slope: Optional[float]
    mass_residual: float         # worst |mass(t) - mass(0)| / combined err
    mass_leak: bool


def einstein_spreading_check(snapshots, g: Geometry, dt: float,
                             lag_steps: Sequence[int], cutoff: int,
                             chi_d: Optional[float] = None,
                             fit_window: Optional[tuple] = None) -> EinsteinCheck:
    """Second-moment spreading of the space-time correlation.

    The truncated sum over |i_1| <= cutoff of i1^2 [psi(t,i) - psi(0,i)]
    grows linearly with slope 2 * chi * D: summing the heat equation by
    parts against i1^2 picks up the discrete Laplacian of i1^2, which is 2.
    Half the least-squares slope therefore estimates the Einstein product
    sigma = chi * D, and is compared against chi_d when supplied.  Mass
    leaking past the cutoff shows up in the conservation residual of the
    truncated zeroth moment and is flagged.
    """
    snaps = np.asarray(snapshots, dtype=np.float64)
    S = snaps.shape[0]
    lag_steps = np.array(sorted(set(int(k) for k in lag_steps) | {0}))
    if lag_steps[-1] >= S:
        raise UsageError("trajectory too short for the requested lags")
    if cutoff >= g.L // 2:
        raise UsageError("cutoff must be below L/2")
    rho_hat = float(snaps.mean())
    shape = (g.L,) * g.d
    fft_axes = tuple(range(1, g.d + 1))
    spec = np.fft.rfftn(snaps.reshape((S,) + shape) - rho_hat, axes=fft_axes)
    n_origins = S - int(lag_steps[-1])

    i1 = np.arange(g.L)
    i1 = np.where(i1 <= g.L // 2, i1, i1 - g.L)  # signed min-image coordinate
    inside = np.abs(i1) <= cutoff
    w2 = np.where(inside, i1.astype(float) ** 2, 0.0)
    w0 = inside.astype(float)
    if g.d > 1:
        expand = (slice(None),) + (None,) * (g.d - 1)
        w2 = np.broadcast_to(w2[expand], shape).copy()
        w0 = np.broadcast_to(w0[expand], shape).copy()
    w2 = w2.ravel()
    w0 = w0.ravel()

    second = np.empty((len(lag_steps), n_origins))
    zeroth = np.empty((len(lag_steps), n_origins))
    for idx, k in enumerate(lag_steps):
        prod_spec = np.conj(spec[:n_origins]) * spec[k:k + n_origins]
        cross = np.fft.irfftn(prod_spec, s=shape, axes=fft_axes) / g.volume
        cross = cross.reshape(n_origins, g.volume)
        second[idx] = cross @ w2
        zeroth[idx] = cross @ w0
    diff = second - second[0]
    lhs = diff.mean(axis=1)
    lhs_err = diff.std(axis=1, ddof=1) / math.sqrt(n_origins)
    mdiff = zeroth - zeroth[0]
    merr = zeroth.std(axis=1, ddof=1) / math.sqrt(n_origins)
    with np.errstate(divide="ignore", invalid="ignore"):
        mass_resid = np.nanmax(np.abs(mdiff.mean(axis=1)[1:])
                               / np.maximum(np.hypot(merr[1:], merr[0]), 1e-300))
    times = lag_steps * dt
    if fit_window is None:
        fit_mask = lag_steps > 0
    else:
        fit_mask = (times >= fit_window[0]) & (times <= fit_window[1])
    slope, _, slope_err, _, _ = _exp._ols(times[fit_mask], lhs[fit_mask])
    expected = None if chi_d is None else 2.0 * chi_d
    return EinsteinCheck(times, lhs, lhs_err, slope, slope_err,
                         slope / 2.0, slope_err / 2.0, expected,
                         float(mass_resid), bool(mass_resid > 5.0))


# --- self-organized criticality spread experiment --------------------------

@dataclass
class SocResult:
    inner_densities: list        # accepted per-seed inner-window densities
    pooled: float
    pooled_err: float
    frozen: list                 # accepted frozen Configurations
    rejected_edge: list          # seeds whose cluster reached the box edge
    censored: list               # seeds that hit the event cap


def soc_spread_experiment(g: Geometry, block: int, seeds,
                          event_cap: int = 10 ** 9,
                          inner_fraction: float = 0.5,
                          edge_margin: int = 2) -> SocResult:
    """Spread a centered block^d cluster in an empty periodic box until it
    freezes; the density in the central window of side block * inner_fraction
    estimates rho_c.  Runs whose cluster reaches the box edge (any occupied
    site within edge_margin of the border in the frozen state) are rejected
    and reported, as are event-capped runs."""
    from .dynamics import SimulationState, initial_condition, run_until, STOP_ABSORBED
    if g.mode != "periodic":
        raise UsageError("spread experiment runs in a periodic box")
    if block >= g.L // 2:
        raise UsageError("block must be well inside the box")
    inner = max(2, int(round(block * inner_fraction)))
    lo = (g.L - inner) // 2
    window = tuple(slice(lo, lo + inner) for _ in range(g.d))
    densities, frozen, rejected, censored = [], [], [], []
    for seed in seeds:
        cfg = initial_condition("centered-block", g, seed, block=block)
        st = SimulationState(cfg, seed=seed)
        reason = run_until(st, events=event_cap)
        if reason != STOP_ABSORBED:
            censored.append(seed)
            continue
        grid = st.config.as_grid()
        border = np.ones_like(grid, dtype=bool)
        core = tuple(slice(edge_margin, g.L - edge_margin) for _ in range(g.d))
        border[core] = False
        if grid[border].any():
            rejected.append(seed)
            continue
        densities.append(float(grid[window].mean()))
        frozen.append(st.config)
    if densities:
        pooled = float(np.mean(densities))
        err = (float(np.std(densities, ddof=1) / math.sqrt(len(densities)))
               if len(densities) > 1 else 0.0)
    else:
        pooled, err = math.nan, math.nan
    return SocResult(densities, pooled, err, frozen, rejected, censored)


# --- per-snapshot records and CSV output -----------------------------------

@dataclass
class ObservableRecord:
    t: float
    rho: float
    rho_a: float
    activity: float
    sigma_hat: float
    absorbed: bool
    box_variances: dict = field(default_factory=dict)


def record_observables(c: Configuration, t: float = 0.0,
                       absorbed: Optional[bool] = None) -> ObservableRecord:
    pairs = _ordered_pair_count(c)
    if absorbed is None:
        absorbed = pairs == 0 and c.geometry.mode == "periodic"
    return ObservableRecord(
        t=t, rho=c.density, rho_a=measure_rho_a(c),
        activity=pairs / c.geometry.volume,
        sigma_hat=pairs / (2.0 * n_lattice_edges(c.geometry)),
        absorbed=bool(absorbed))


def write_observables_csv(path, records):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "rho", "rhoA", "activity", "sigmaHat", "absorbed"])
        for r in records:
            w.writerow([f"{r.t:.10g}", f"{r.rho:.10g}", f"{r.rho_a:.10g}",
                        f"{r.activity:.10g}", f"{r.sigma_hat:.10g}",
                        int(r.absorbed)])


def write_corr_csv(path, profile: CorrelationProfile):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["lag", "phi", "stderr"])
        for r, p, e in zip(profile.lags, profile.phi, profile.phi_err):
            w.writerow([int(r), f"{p:.10g}", f"{e:.10g}"])


def write_boxvar_csv(path, curve: BoxVarianceCurve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["R", "var", "stderr"])
        for R, v, e in zip(curve.box_sizes, curve.var, curve.var_err):
            w.writerow([int(R), f"{v:.10g}", f"{e:.10g}"])


def write_psi_csv(path, st: SpaceTimeCorrelation, max_i1: int):
    g = st.geometry
    i1 = np.arange(g.L)
    i1 = np.where(i1 <= g.L // 2, i1, i1 - g.L)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "i1", "psi"])
        for row, t in enumerate(st.times):
            psi_grid = st.psi[row].reshape((g.L,) * g.d)
            # profile along axis 1 at zero transverse lag
            line = psi_grid[(slice(None),) + (0,) * (g.d - 1)]
            for k in np.argsort(i1):
                if abs(i1[k]) <= max_i1:
                    w.writerow([f"{t:.10g}", int(i1[k]), f"{line[k]:.10g}"])
