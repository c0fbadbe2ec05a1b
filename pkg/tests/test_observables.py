"""Stationary-state estimators validated on planted and exactly-known data."""

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clgsim.lattice import (Geometry, Configuration, UsageError,
                            activity_field, MODES)
from clgsim.dynamics import SimulationState, initial_condition, run_until, numpy_rng
from clgsim.exact1d import exact_observables, exact_correlation, sample_pi_rho
from clgsim import observables as obs


def bernoulli_samples(g, rho, n_samples, seed):
    rng = numpy_rng(seed, 0xBE)
    return [Configuration(g, (rng.random(g.volume) < rho).astype(np.uint8))
            for _ in range(n_samples)]


@pytest.fixture(scope="module")
def sampler_draws():
    """iid draws from the exact 1D stationary law at rho = 0.75."""
    return [sample_pi_rho(0.75, 4096, seed=(31, k)) for k in range(300)]


# --- pointwise observables ----------------------------------------------------

def test_rho_a_and_activity_handcrafted():
    g = Geometry(1, 6)
    c = Configuration.from_occupied(g, [(1,), (2,), (4,)])
    # sites 1,2 active (adjacent pair); 4 isolated
    assert obs.measure_rho_a(c) == pytest.approx(2 / 6)
    # ordered pairs: (1,6), (2,3) -> activity 2/6; sigma = 2/(2*6)
    assert obs.measure_activity(c) == pytest.approx(2 / 6)
    assert obs.n_lattice_edges(g) == 6
    sigma, err = obs.conductivity_estimate([c, c])
    assert sigma == pytest.approx(2 / 12)


@given(st.tuples(st.integers(1, 3), st.integers(3, 5),
                 st.sampled_from(MODES)).map(lambda t: Geometry(*t)),
       st.floats(0.1, 0.9), st.integers(0, 10 ** 6))
@settings(max_examples=60, deadline=None)
def test_activity_bounded_by_coordination(g, rho, seed):
    # every active particle has >= 1 occupied neighbour, blocking one of its
    # 2d exits: a <= (2d - 1) rho_a on every configuration
    rng = numpy_rng(seed, 1)
    c = Configuration(g, (rng.random(g.volume) < rho).astype(np.uint8))
    assert obs.measure_activity(c) <= (2 * g.d - 1) * obs.measure_rho_a(c) + 1e-12


def test_conductivity_from_crossings():
    g = Geometry(2, 8)
    assert obs.conductivity_from_crossings(640, 10.0, g) == pytest.approx(
        640 / (2 * 128 * 10.0))


# --- two-point correlations ------------------------------------------------------

def test_correlation_on_independent_field():
    g = Geometry(1, 2048)
    samples = bernoulli_samples(g, 0.4, 80, seed=5)
    p = obs.two_point_correlation(samples, max_lag=20)
    assert p.phi[0] == pytest.approx(0.24, abs=0.005)
    assert np.abs(p.phi[1:]).max() < 6 * p.phi_err[1:].min() + 1e-3
    chi = obs.compressibility_from_correlations(p, cutoff=10)
    assert chi.value == pytest.approx(0.24, rel=0.03)
    assert chi.tail == 0.0                     # no resolvable decay to extend


def test_correlation_matches_exact_law(sampler_draws):
    e = exact_observables(0.75)
    p = obs.two_point_correlation(sampler_draws, max_lag=12)
    for r in range(6):
        assert p.phi[r] == pytest.approx(exact_correlation(0.75, r), abs=4e-4)
    fit = p.fit_xi(r_max=p.noise_floor_r_max())   # signal dies after ~5 lags
    assert fit.xi == pytest.approx(e.xi_cross, rel=0.02)
    chi = obs.compressibility_from_correlations(p, cutoff=8)
    assert chi.value == pytest.approx(e.chi, rel=0.03)


def test_correlation_translation_covariance(sampler_draws):
    g = sampler_draws[0].geometry
    rolled = [Configuration(g, np.roll(c.occ, 137)) for c in sampler_draws[:20]]
    a = obs.two_point_correlation(sampler_draws[:20], max_lag=8)
    b = obs.two_point_correlation(rolled, max_lag=8)
    np.testing.assert_allclose(a.phi, b.phi, atol=1e-12)
    np.testing.assert_allclose(a.cum_sum, b.cum_sum, atol=1e-12)


def test_correlation_guards():
    g = Geometry(1, 64)
    samples = bernoulli_samples(g, 0.5, 4, seed=1)
    with pytest.raises(UsageError):
        obs.two_point_correlation(samples, max_lag=40)
    with pytest.raises(UsageError):
        obs.two_point_correlation(samples[:1], max_lag=10)


# --- box variance ------------------------------------------------------------------

def test_box_variance_independent_field_1d():
    g = Geometry(1, 4096)
    samples = bernoulli_samples(g, 0.3, 60, seed=9)
    est = obs.compressibility_from_box_variance(samples, [16, 32, 64, 128, 256],
                                                seed=2)
    assert not est.no_plateau
    assert est.value == pytest.approx(0.21, rel=0.05)
    zeta, zeta_err = obs.hyperuniformity_exponent(est.curve)
    assert zeta == pytest.approx(0.5, abs=0.02)


def test_box_variance_independent_field_2d():
    g = Geometry(2, 128)
    samples = bernoulli_samples(g, 0.5, 40, seed=11)
    est = obs.compressibility_from_box_variance(samples, [4, 8, 16, 32],
                                                seed=3)
    assert est.value == pytest.approx(0.25, rel=0.06)


def test_hyperuniformity_needs_a_decade():
    g = Geometry(1, 256)
    samples = bernoulli_samples(g, 0.5, 10, seed=4)
    curve = obs.box_variance_curve(samples, [8, 16, 32], seed=1)
    with pytest.raises(UsageError):
        obs.hyperuniformity_exponent(curve)


# --- space-time correlations ---------------------------------------------------------

@pytest.fixture(scope="module")
def trajectory_1d():
    L = 1024
    g = Geometry(1, L)
    st_ = SimulationState(sample_pi_rho(0.75, L, seed=40, geometry=g), seed=40)
    run_until(st_, events=10 * L)
    snaps = []
    dt = 0.5
    for k in range(400):
        run_until(st_, time=st_.t + dt)
        snaps.append(st_.config.occ.copy())
    return g, np.array(snaps), dt


def test_space_time_zero_lag_matches_static(trajectory_1d):
    g, snaps, dt = trajectory_1d
    stc = obs.space_time_correlation(snaps, g, dt, lag_steps=[0, 4, 16])
    # psi(0, 0) is the on-site variance rho(1-rho)
    assert stc.psi[0][0] == pytest.approx(0.75 * 0.25, abs=0.01)
    # conservation: total correlation mass is time-independent
    assert np.abs(stc.mass - stc.mass[0]).max() < 6 * stc.mass_err.max() + 1e-4


def test_einstein_spreading_estimates_sigma(trajectory_1d):
    # a wide cutoff sums i1^2-weighted noise over too many sites; keep it a
    # few spreading widths (sqrt(2 D t) ~ 8 at t = 20) for a usable slope
    g, snaps, dt = trajectory_1d
    chk = obs.einstein_spreading_check(snaps, g, dt, lag_steps=range(0, 41, 4),
                                       cutoff=30, chi_d=1 / 6)
    assert chk.slope > 0
    assert not chk.mass_leak
    assert chk.expected_slope == pytest.approx(1 / 3)
    assert chk.sigma_hat == chk.slope / 2
    assert chk.sigma_hat == pytest.approx(1 / 6, rel=0.35)  # tight check in acceptance


# --- SOC spread experiment --------------------------------------------------------------

def test_soc_guards_and_bookkeeping():
    with pytest.raises(UsageError):
        obs.soc_spread_experiment(Geometry(2, 32, "open"), 8, seeds=[0])
    with pytest.raises(UsageError):
        obs.soc_spread_experiment(Geometry(2, 16), 10, seeds=[0])
    res = obs.soc_spread_experiment(Geometry(2, 64), 16, seeds=[0, 1],
                                    event_cap=10)
    assert res.censored == [0, 1] and math.isnan(res.pooled)


def test_soc_small_run_freezes_inside():
    res = obs.soc_spread_experiment(Geometry(2, 96), 24, seeds=range(3))
    assert len(res.inner_densities) + len(res.rejected_edge) == 3
    for c in res.frozen:
        assert obs.measure_activity(c) == 0.0
    for v in res.inner_densities:
        assert 0.0 < v < 1.0


# --- records and CSV layout ---------------------------------------------------------------

def test_record_and_csv_headers(tmp_path):
    g = Geometry(2, 6)
    c = initial_condition("chessboard", g)
    rec = obs.record_observables(c, t=1.5)
    assert rec.absorbed and rec.rho == 0.5 and rec.activity == 0.0
    path = tmp_path / "o.csv"
    obs.write_observables_csv(path, [rec])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "rho", "rhoA", "activity", "sigmaHat", "absorbed"]
    assert rows[1][0] == "1.5" and rows[1][5] == "1"

    samples = bernoulli_samples(Geometry(1, 128), 0.6, 8, seed=2)
    p = obs.two_point_correlation(samples, max_lag=6)
    obs.write_corr_csv(tmp_path / "c.csv", p)
    assert list(csv.reader(open(tmp_path / "c.csv")))[0] == ["lag", "phi", "stderr"]
    curve = obs.box_variance_curve(samples, [4, 8, 16], seed=1)
    obs.write_boxvar_csv(tmp_path / "b.csv", curve)
    assert list(csv.reader(open(tmp_path / "b.csv")))[0] == ["R", "var", "stderr"]
