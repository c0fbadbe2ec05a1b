"""Critical-exponent estimation and the scaling-relation checker.

Log-log fits are plain OLS on explicitly supplied windows; window choice
dominates exponent bias, so it is never auto-selected.  The relation checker
evaluates the algebraic identities between exponents,

    r1 = alpha - beta + 1
    r2 = gamma - nu_cross * (d - 2*zeta)
    r3 = nu_perp * (d - zeta) - 1
    r4 = alpha - b + gamma

plus the derived dynamical exponents z = (zeta - d)(1 - beta) + 2 and
theta = d - zeta, the latter pair applicable only when gamma is close to 1
(far from criticality the white-noise scaling z = 2, zeta = d/2, gamma = 0,
theta = d holds instead).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lattice import UsageError


@dataclass
class ExponentSet:
    """Exponent estimates with standard errors; None marks a missing entry."""
    rho_c: Optional[float] = None
    beta: Optional[float] = None
    b: Optional[float] = None
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    nu_cross: Optional[float] = None
    nu_perp: Optional[float] = None
    zeta: Optional[float] = None
    z: Optional[float] = None
    theta: Optional[float] = None
    errors: dict = field(default_factory=dict)

    def err(self, name: str) -> float:
        return float(self.errors.get(name, 0.0))

    def as_dict(self) -> dict:
        keys = ("rho_c", "beta", "b", "alpha", "gamma",
                "nu_cross", "nu_perp", "zeta", "z", "theta")
        return {k: getattr(self, k) for k in keys}


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    exponent_err: float
    prefactor_err: float
    r_squared: float
    window: tuple
    n_points: int
    n_excluded: int


def _ols(x: np.ndarray, y: np.ndarray):
    n = len(x)
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        raise UsageError("degenerate fit window (no x spread)")
    slope = float(((x - xm) * (y - ym)).sum()) / sxx
    intercept = ym - slope * xm
    resid = y - slope * x - intercept
    ssr = float((resid ** 2).sum())
    sst = float(((y - ym) ** 2).sum())
    s2 = ssr / max(n - 2, 1)
    slope_err = math.sqrt(s2 / sxx)
    intercept_err = math.sqrt(s2 * (1.0 / n + xm ** 2 / sxx))
    r2 = 1.0 if sst == 0.0 else 1.0 - ssr / sst
    return slope, intercept, slope_err, intercept_err, r2


def log_log_fit(u, y, window) -> PowerLawFit:
    """OLS of log y against log u restricted to u in [window[0], window[1]].

    Points with y <= 0 are excluded and counted in n_excluded; at least 4
    usable points are required.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    lo, hi = window
    in_win = (u >= lo) & (u <= hi) & (u > 0)
    usable = in_win & (y > 0)
    n_excluded = int(in_win.sum() - usable.sum())
    if usable.sum() < 4:
        raise UsageError(
            f"log-log fit needs >= 4 positive points in window, got {int(usable.sum())}")
    slope, intercept, slope_err, intercept_err, r2 = _ols(
        np.log(u[usable]), np.log(y[usable]))
    pref = math.exp(intercept)
    return PowerLawFit(slope, pref, slope_err, pref * intercept_err, r2,
                       (float(lo), float(hi)), int(usable.sum()), n_excluded)


def numerical_d(rho, rho_a, rho_a_err=None):
    """Finite-difference diffusion coefficient D = d(rho_a)/d(rho).

    Central differences in the interior, one-sided at the endpoints;
    errors propagated from the rho_a standard errors when given.
    Returns (rho, D, D_err) arrays.
    """
    rho = np.asarray(rho, dtype=float)
    rho_a = np.asarray(rho_a, dtype=float)
    if len(rho) < 3:
        raise UsageError("numerical D needs a grid of at least 3 points")
    if np.any(np.diff(rho) <= 0):
        raise UsageError("rho grid must be strictly increasing")
    err = (np.zeros_like(rho) if rho_a_err is None
           else np.asarray(rho_a_err, dtype=float))
    D = np.empty_like(rho)
    D_err = np.empty_like(rho)
    D[1:-1] = (rho_a[2:] - rho_a[:-2]) / (rho[2:] - rho[:-2])
    D_err[1:-1] = np.sqrt(err[2:] ** 2 + err[:-2] ** 2) / (rho[2:] - rho[:-2])
    D[0] = (rho_a[1] - rho_a[0]) / (rho[1] - rho[0])
    D_err[0] = np.sqrt(err[1] ** 2 + err[0] ** 2) / (rho[1] - rho[0])
    D[-1] = (rho_a[-1] - rho_a[-2]) / (rho[-1] - rho[-2])
    D_err[-1] = np.sqrt(err[-1] ** 2 + err[-2] ** 2) / (rho[-1] - rho[-2])
    return rho, D, D_err


@dataclass(frozen=True)
class XiCrossFit:
    xi: float
    err: float
    nonmonotone: bool
    window: tuple


def xi_cross_fit(lags, phi, r_max=None) -> XiCrossFit:
    """Correlation length from the exponential decay of |phi(r)|.

    Linear fit of log|phi(r)| against r over r in [2, r_max]; the absolute
    value handles the sign-alternating 1D correlations.  A non-monotone
    |phi| on the window is flagged, not silently fitted away.
    """
    lags = np.asarray(lags, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if r_max is None:
        r_max = lags.max()
    mask = (lags >= 2) & (lags <= r_max) & (np.abs(phi) > 0)
    if mask.sum() < 2:
        raise UsageError("xi fit needs at least 2 lags in [2, r_max]")
    r = lags[mask]
    a = np.abs(phi[mask])
    order = np.argsort(r)
    nonmonotone = bool(np.any(np.diff(a[order]) > 0))
    slope, _, slope_err, _, _ = _ols(r, np.log(a))
    if slope >= 0:
        raise UsageError("correlations do not decay on the fit window")
    xi = -1.0 / slope
    return XiCrossFit(xi, slope_err / slope ** 2, nonmonotone,
                      (2.0, float(r_max)))


@dataclass(frozen=True)
class XiPerpEstimate:
    value: Optional[float]
    err: float
    method: str
    censored: bool = False
    interval: tuple = (None, None)


def xi_perp_crossover(sizes, absorption_times, threshold_factor=10.0) -> XiPerpEstimate:
    """Crossover system size: smallest L whose median absorption time
    exceeds threshold_factor * L^2 (below it activity dies out quickly).

    absorption_times maps L -> sample of absorption times.  When no
    crossover lies inside the sampled ladder the estimate is returned
    interval-censored.
    """
    sizes = sorted(int(s) for s in sizes)
    above = [L for L in sizes
             if np.median(absorption_times[L]) > threshold_factor * L ** 2]
    if not above:
        return XiPerpEstimate(None, 0.0, "crossover-size", censored=True,
                              interval=(float(sizes[-1]), math.inf))
    L_star = min(above)
    if L_star == sizes[0]:
        return XiPerpEstimate(None, 0.0, "crossover-size", censored=True,
                              interval=(0.0, float(L_star)))
    below = max(L for L in sizes if L < L_star)
    return XiPerpEstimate(float(L_star), (L_star - below) / 2.0,
                          "crossover-size", interval=(float(below), float(L_star)))


def xi_perp_hidden_density(rho, rho_c, zeta, d,
                           rho_c_err=0.0, zeta_err=0.0) -> XiPerpEstimate:
    """xi_perp = (rho - rho_c)^(-1/(d - zeta)), the scale at which the
    density excess stops being hidden by critical fluctuations."""
    if zeta >= d:
        raise UsageError("hidden-density estimator needs zeta < d")
    u = rho - rho_c
    if u <= 0:
        raise UsageError("hidden-density estimator needs rho > rho_c")
    expo = -1.0 / (d - zeta)
    value = u ** expo
    d_rho_c = value / (u * (d - zeta))        # |d xi / d rho_c|
    d_zeta = abs(value * math.log(u)) / (d - zeta) ** 2
    err = math.hypot(d_rho_c * rho_c_err, d_zeta * zeta_err)
    return XiPerpEstimate(value, err, "hidden-density")


@dataclass(frozen=True)
class RelationReport:
    residuals: dict            # name -> (value, err) for computable relations
    gaps: list                 # relations skipped for missing entries
    z_derived: Optional[float]
    theta_derived: Optional[float]
    z_theta_applicable: bool   # derived (z, theta) formulas assume gamma ~ 1
    notes: list

    def max_abs_residual(self) -> float:
        if not self.residuals:
            return 0.0
        return max(abs(v) for v, _ in self.residuals.values())


def relation_check(e: ExponentSet, d: int, gamma_one_tol: float = 0.1) -> RelationReport:
    """Evaluate the scaling relations on an exponent set.

    Missing entries produce explicit gaps rather than failures.  The derived
    (z, theta) pair is computed whenever beta and zeta are present but is
    marked non-applicable when gamma deviates from 1.
    """
    res, gaps, notes = {}, [], []

    def have(*names):
        missing = [n for n in names if getattr(e, n) is None]
        return missing

    m = have("alpha", "beta")
    if m:
        gaps.append(("r1", m))
    else:
        res["r1"] = (e.alpha - e.beta + 1.0,
                     math.hypot(e.err("alpha"), e.err("beta")))

    m = have("gamma", "nu_cross", "zeta")
    if m:
        gaps.append(("r2", m))
    else:
        val = e.gamma - e.nu_cross * (d - 2.0 * e.zeta)
        err = math.sqrt(e.err("gamma") ** 2
                        + ((d - 2.0 * e.zeta) * e.err("nu_cross")) ** 2
                        + (2.0 * e.nu_cross * e.err("zeta")) ** 2)
        res["r2"] = (val, err)

    m = have("nu_perp", "zeta")
    if m:
        gaps.append(("r3", m))
    else:
        val = e.nu_perp * (d - e.zeta) - 1.0
        err = math.hypot((d - e.zeta) * e.err("nu_perp"),
                         e.nu_perp * e.err("zeta"))
        res["r3"] = (val, err)

    m = have("alpha", "b", "gamma")
    if m:
        gaps.append(("r4", m))
    else:
        res["r4"] = (e.alpha - e.b + e.gamma,
                     math.sqrt(e.err("alpha") ** 2 + e.err("b") ** 2
                               + e.err("gamma") ** 2))

    z_derived = theta_derived = None
    applicable = False
    if not have("beta", "zeta"):
        z_derived = (e.zeta - d) * (1.0 - e.beta) + 2.0
        theta_derived = d - e.zeta
        applicable = e.gamma is not None and abs(e.gamma - 1.0) <= gamma_one_tol
        if not applicable:
            notes.append("derived (z, theta) assume gamma ~ 1; "
                         "set has gamma = {!r}".format(e.gamma))
    else:
        gaps.append(("z_theta", have("beta", "zeta")))

    if applicable and e.z is not None:
        res["z"] = (e.z - z_derived, e.err("z") + abs(1.0 - e.beta) * e.err("zeta"))
    if applicable and e.theta is not None:
        res["theta"] = (e.theta - theta_derived,
                        math.hypot(e.err("theta"), e.err("zeta")))

    return RelationReport(res, gaps, z_derived, theta_derived, applicable, notes)
