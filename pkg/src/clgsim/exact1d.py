"""Closed-form one-dimensional results used as oracles for the estimators.

For density rho in (1/2, 1] the 1D stationary state is explicit: writing
rho_a = (2*rho - 1)/rho for the active density, every macroscopic observable
has a closed form, the stationary measure is the law of a two-state Markov
chain (no two adjacent holes), and all critical exponents equal 0 or 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .lattice import Geometry, Configuration, UsageError, PERIODIC
from .exponents import ExponentSet


@dataclass(frozen=True)
class ExactOneDim:
    rho: float
    rho_a: float
    activity: float
    D: float
    chi: float
    sigma: float
    xi_cross: float
    xi_perp: float


def exact_observables(rho: float) -> ExactOneDim:
    """All seven 1D closed forms at density rho in (1/2, 1]."""
    if not (0.5 < rho <= 1.0):
        raise UsageError(f"exact 1D formulas need rho in (1/2, 1], got {rho}")
    rho_a = (2.0 * rho - 1.0) / rho
    activity = 2.0 * rho_a * (1.0 - rho)
    D = 1.0 / rho ** 2
    chi = rho * (1.0 - rho) * (2.0 * rho - 1.0)
    sigma = (1.0 - rho) * (2.0 * rho - 1.0) / rho
    xi_cross = 0.0 if rho_a >= 1.0 else -1.0 / math.log(1.0 - rho_a)
    xi_perp = 1.0 / rho_a
    return ExactOneDim(rho, rho_a, activity, D, chi, sigma, xi_cross, xi_perp)


def exact_correlation(rho: float, lag: int) -> float:
    """Two-point correlation rho(1-rho)(rho_a - 1)^|lag| of the 1D state."""
    e = exact_observables(rho)
    return rho * (1.0 - rho) * (e.rho_a - 1.0) ** abs(int(lag))


def exact_exponents() -> ExponentSet:
    """The exact 1D exponent set (all errors zero)."""
    return ExponentSet(rho_c=0.5, beta=1.0, b=1.0, alpha=0.0, gamma=1.0,
                       nu_cross=1.0, nu_perp=1.0, zeta=0.0)


def is_ergodic_pattern(sigma) -> bool:
    """No two adjacent holes."""
    return all(sigma[k] + sigma[k + 1] >= 1 for k in range(len(sigma) - 1))


def marginal_probability(sigma, rho: float) -> float:
    """Exact stationary probability of the pattern sigma on a window.

    Vanishes on non-ergodic patterns; note the formula involves negative
    powers of (1 - rho_a) for dense patterns.
    """
    e = exact_observables(rho)
    sigma = tuple(int(x) for x in sigma)
    if not is_ergodic_pattern(sigma):
        return 0.0
    ell = len(sigma)
    p = sum(sigma)
    return ((1.0 - rho)
            * e.rho_a ** (2 * p - ell + 1 - sigma[0] - sigma[-1])
            * (1.0 - e.rho_a) ** (ell - 1 - p))


def enumerate_marginal(ell: int, rho: float) -> dict:
    """Pattern -> probability for all windows of length ell (sums to 1)."""
    return {sigma: marginal_probability(sigma, rho)
            for sigma in product((0, 1), repeat=ell)}


def chain_sample(rho: float, length: int, rng: np.random.Generator) -> np.ndarray:
    """Raw Markov-chain construction of the 1D stationary state on a window.

    eta_1 ~ Bernoulli(rho); from an occupied site the next site is occupied
    with probability rho_a, from a hole the next site is always occupied.
    Sampled by drawing geometric run lengths of occupied sites (each run is
    followed by exactly one hole), which keeps the construction vectorized.
    """
    if not (0.5 < rho < 1.0):
        raise UsageError(f"chain sampler needs rho in (1/2, 1), got {rho}")
    if length < 2:
        raise UsageError("length must be >= 2")
    rho_a = (2.0 * rho - 1.0) / rho
    out = np.empty(length, dtype=np.uint8)
    pos = 0
    if rng.random() >= rho:  # eta_1 = 0; successor is occupied a.s.
        out[0] = 0
        pos = 1
    mean_runs = max(64, int(length * (1.0 - rho) * 1.25) + 16)
    while pos < length:
        runs = rng.geometric(1.0 - rho_a, size=mean_runs)
        for r in runs:
            stop = min(pos + int(r), length)
            out[pos:stop] = 1
            pos = stop
            if pos < length:
                out[pos] = 0
                pos += 1
            if pos >= length:
                break
    return out


def sample_pi_rho(rho: float, length: int, seed=0, *,
                  geometry: Geometry | None = None,
                  tail: int = 50, max_tries: int = 10000) -> Configuration:
    """1D stationary sample as a Configuration.

    The chain construction lives on the line; for use on a torus we sample
    length + 2*tail sites, discard the ends, and reject unless the wrap
    edge is ergodic (edge effects decay at rate 1 - rho_a, so tail = 50 is
    far beyond any relevant correlation length).
    """
    from .dynamics import numpy_rng
    g = geometry if geometry is not None else Geometry(1, length, PERIODIC)
    if g.d != 1 or g.L != length:
        raise UsageError("geometry must be one-dimensional with side = length")
    rng = numpy_rng(seed, 0xE1D)
    for _ in range(max_tries):
        seq = chain_sample(rho, length + 2 * tail, rng)
        window = seq[tail:tail + length]
        if not g.axis_periodic(0) or window[0] + window[-1] >= 1:
            return Configuration(g, window.copy())
    raise RuntimeError("wrap-edge rejection did not terminate")  # unreachable in practice
