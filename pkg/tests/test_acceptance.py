"""Acceptance suite: one test per top-level criterion.

Each test prints a single [PASS]/[FAIL] line with the measured numbers and
the tolerance it was held to.  Protocol sizes (replica counts, cutoffs, fit
windows) are frozen here from calibration runs; see the module docstrings
for the estimator conventions they exercise.
"""

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from itertools import product

import numpy as np
import pytest

from clgsim.lattice import (Geometry, Configuration, UsageError, neighbors,
                            brute_force_jumps, activity_field,
                            PERIODIC, OPEN, CYLINDER, MODES)
from clgsim.dynamics import (BoundarySpec, SimulationState, kmc_step,
                             run_until, initial_condition, numpy_rng)
from clgsim.exact1d import (exact_observables, exact_correlation,
                            exact_exponents, sample_pi_rho,
                            enumerate_marginal)
from clgsim.exponents import ExponentSet, relation_check
from clgsim.sampling import stationary_snapshots_1d
from clgsim import boundary as bd
from clgsim import observables as obs
from clgsim.cli import main, read_sweep_csv


_CAPMAN = None


@pytest.fixture(autouse=True)
def _grab_capture_manager(request):
    # remember pytest's capture manager so _report can print the verdict
    # line to the real terminal even when output capture is on
    global _CAPMAN
    _CAPMAN = request.config.pluginmanager.getplugin("capturemanager")
    yield


def _report(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    if _CAPMAN is not None:
        with _CAPMAN.global_and_fixture_disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)
    assert ok, line


# --- shared 1D stationary ensemble ------------------------------------------

L1D = 4096
RHO = 0.75
N_SNAPSHOTS = 500
REPLICAS = 10


@pytest.fixture(scope="module")
def stationary_1d():
    return stationary_snapshots_1d(L1D, RHO, N_SNAPSHOTS, seed=424,
                                   replicas=REPLICAS)


def test_criterion_1_stationary_observables_1d(stationary_1d):
    run = stationary_1d
    e = exact_observables(RHO)
    records = [obs.record_observables(c, t=t)
               for c, t in zip(run.snapshots, run.snapshot_times)]
    rho_a = float(np.mean([r.rho_a for r in records]))
    act = float(np.mean([r.activity for r in records]))
    sigma_p = float(np.mean([r.sigma_hat for r in records]))
    sigma_x = obs.conductivity_from_crossings(run.total_jumps,
                                              run.total_time, run.geometry)
    profile = obs.two_point_correlation(run.snapshots, max_lag=32)
    chi_c = obs.compressibility_from_correlations(
        profile, cutoff=profile.noise_floor_r_max()).value
    boxes = [4, 8, 16, 32, 64, 128, 256]
    chi_b = obs.compressibility_from_box_variance(run.snapshots, boxes,
                                                  seed=9).value
    phi1 = float(profile.phi[1])
    phi1_exact = exact_correlation(RHO, 1)

    checks = [
        ("rhoA", abs(rho_a / e.rho_a - 1), 0.01),
        ("activity", abs(act / e.activity - 1), 0.02),
        ("sigma_pairs", abs(sigma_p / e.sigma - 1), 0.03),
        ("sigma_crossings", abs(sigma_x / e.sigma - 1), 0.03),
        ("chi_corr", abs(chi_c / e.chi - 1), 0.07),
        ("chi_box", abs(chi_b / e.chi - 1), 0.07),
        ("phi1", abs(phi1 - phi1_exact), 0.003),
    ]
    ok = all(dev < tol for _, dev, tol in checks)
    detail = (f"L={L1D} rho={RHO}, " +
              ", ".join(f"{n} dev {d:.4f} (tol {t})" for n, d, t in checks))
    _report("1D stationary observables", ok, detail)


def _pattern_freqs(occs, ell):
    """Per-sample frequency of every length-ell window pattern."""
    codes = np.zeros(occs.shape, dtype=np.int64)
    for k in range(ell):
        codes = 2 * codes + np.roll(occs, -k, axis=1)
    return np.stack([np.bincount(row, minlength=2 ** ell) / occs.shape[1]
                     for row in codes])


def test_criterion_2_sampler_vs_dynamics_patterns(stationary_1d):
    run = stationary_1d
    dyn = np.stack([c.occ for c in run.snapshots]).astype(np.int64)
    draws = np.stack([sample_pi_rho(RHO, L1D, seed=(515, k)).occ
                      for k in range(300)]).astype(np.int64)
    worst = 0.0
    worst_name = ""
    for ell in range(1, 5):
        fd = _pattern_freqs(dyn, ell)
        # replica-level batch means: snapshots within a replica are correlated
        fd = fd.reshape(REPLICAS, N_SNAPSHOTS // REPLICAS, -1).mean(axis=1)
        fs = _pattern_freqs(draws, ell)
        md, sd = fd.mean(axis=0), fd.std(axis=0, ddof=1) / math.sqrt(len(fd))
        ms, ss = fs.mean(axis=0), fs.std(axis=0, ddof=1) / math.sqrt(len(fs))
        for code in range(2 ** ell):
            diff = abs(md[code] - ms[code])
            if diff == 0.0:
                continue               # e.g. zero-mass patterns: both exact 0
            dev = diff / math.hypot(sd[code], ss[code])
            if dev > worst:
                worst, worst_name = dev, f"ell={ell} code={code:0{ell}b}"
    ok = worst < 5.0
    _report("1D sampler vs dynamics pattern frequencies", ok,
            f"worst |diff|/se {worst:.2f} at {worst_name} (tol 5)")


# --- Dirichlet ----------------------------------------------------------------

def _dense_dirichlet(g, spec):
    V = g.volume
    A = np.zeros((V, V))
    rhs = np.zeros(V)
    for i in range(V):
        site = g.site_coords(i)
        nl = neighbors(g, site)
        A[i, i] = 2 * g.d
        for s in nl.in_lattice:
            A[i, g.site_index(s)] -= 1.0
        for _ in nl.mirror:
            rhs[i] += spec.alpha[site]
    return np.linalg.solve(A, rhs)


def test_criterion_3_dirichlet_solver():
    g = Geometry(2, 8, OPEN)
    rng = numpy_rng(42, 3)
    spec = BoundarySpec({g.site_coords(i): float(a)
                         for i, a in zip(g.boundary_sites(),
                                         rng.uniform(0.05, 0.95,
                                                     len(g.boundary_sites())))})
    sol = bd.dirichlet_solve(g, spec)
    gap_oracle = float(np.abs(sol.values - _dense_dirichlet(g, spec)).max())

    gcyl = Geometry(2, 16, CYLINDER)
    scyl = bd.dirichlet_solve(gcyl, BoundarySpec.cylinder(gcyl, 0.8, 0.4))
    lin = 0.8 + (0.4 - 0.8) * np.arange(1, 17) / 17.0
    gap_lin = float(np.abs(scyl.grid() - lin[:, None]).max())

    ok = gap_oracle < 1e-10 and gap_lin < 1e-10
    _report("Dirichlet solver", ok,
            f"8x8 vs dense oracle {gap_oracle:.2e} (tol 1e-10), "
            f"cylinder vs linear profile {gap_lin:.2e} (tol 1e-10)")


# --- boundary-driven simulation -------------------------------------------------

_BDY_G = Geometry(2, 16, CYLINDER)
_BDY_SPEC = BoundarySpec.cylinder(_BDY_G, 0.8, 0.4)


def _profile_replica(seed):
    prof = bd.measure_stationary_profile(_BDY_G, _BDY_SPEC, burn_in=5120.0,
                                         windows=10, window_time=512.0,
                                         seed=(606, seed))
    return prof.column_means()[0]


def test_criterion_4_boundary_driven_cylinder():
    sol = bd.dirichlet_solve(_BDY_G, _BDY_SPEC)
    expect = sol.grid().mean(axis=1)
    # independent replicas: within-run batch errors undershoot the slow
    # collective density mode, cross-replica scatter does not
    with ProcessPoolExecutor(max_workers=min(8, os.cpu_count() or 1)) as pool:
        cols = np.array(list(pool.map(_profile_replica, range(8))))
    vals = cols.mean(axis=0)
    errs = cols.std(axis=0, ddof=1) / math.sqrt(len(cols))
    dev = float(np.abs((vals - expect) / errs).max())
    err_max = float(errs.max())

    traj = bd.track_current(_BDY_G, _BDY_SPEC, T=40000.0, seed=607,
                            burn_in=5120.0)
    expected_slope = _BDY_G.L / (_BDY_G.L + 1.0) * (0.4 - 0.8)
    slope_rel = abs(traj.slope_left / expected_slope - 1)
    events = traj.final_state.event_count

    ok = dev < 3.0 and err_max < 0.01 and slope_rel < 0.05 and events >= 10 ** 7
    _report("boundary-driven cylinder", ok,
            f"profile max dev {dev:.2f} se (tol 3), max se {err_max:.4f} "
            f"(tol 0.01), current slope {traj.slope_left:.4f} vs "
            f"{expected_slope:.4f} rel dev {slope_rel:.4f} (tol 0.05), "
            f"events {events:.2e} (>= 1e7)")


# --- exponent sweep ----------------------------------------------------------------

def test_criterion_5_exponent_sweep(tmp_path):
    out = tmp_path / "sweep"
    ini = tmp_path / "s.ini"
    ini.write_text("")
    rc = main(["sweep", str(ini), "--out", str(out),
               "--set", "sweep.L=4096",
               "--set", "sweep.rho_grid="
                        "0.52,0.53,0.54,0.55,0.56,0.57,0.58,0.59,0.60",
               "--set", "sweep.snapshots=2500",
               "--set", "sweep.replicas=25",
               "--set", "sweep.max_lag=48",
               "--set", "sweep.fit_window=0.02,0.05",
               "--set", "sweep.rho_c=0.5",
               "--set", "experiment.seed=2026"])
    assert rc == 0
    rep = json.loads((out / "exponents.json").read_text())
    exps = rep["exponents"]
    exp_devs = {k: abs(exps[k] - 1.0)
                for k in ("beta", "b", "gamma", "nu_cross")}
    res = {k: abs(v["residual"]) for k, v in rep["relations"].items()}
    ok = all(v < 0.15 for v in exp_devs.values()) and \
        all(res[k] < 0.2 for k in ("r1", "r2", "r3", "r4"))
    detail = ("exponent devs from 1 " +
              ", ".join(f"{k}={v:.3f}" for k, v in sorted(exp_devs.items())) +
              " (tol 0.15); residuals " +
              ", ".join(f"{k}={res[k]:.3f}" for k in sorted(res)) +
              " (tol 0.2)")
    _report("1D exponent sweep", ok, detail)


# --- Einstein spreading -------------------------------------------------------------

def test_criterion_6_einstein_spreading():
    g = Geometry(1, 4096)
    dt = 0.5
    vals, leaks = [], 0
    for rep in range(16):
        st = SimulationState(sample_pi_rho(RHO, g.L, seed=(90, rep),
                                           geometry=g), seed=(91, rep))
        run_until(st, events=10 * g.L)
        snaps = []
        for _ in range(500):
            run_until(st, time=st.t + dt)
            snaps.append(st.config.occ.copy())
        chk = obs.einstein_spreading_check(np.array(snaps), g, dt,
                                           lag_steps=range(0, 41, 2),
                                           cutoff=30, chi_d=1 / 6)
        vals.append(chk.sigma_hat)
        leaks += chk.mass_leak
    sigma_hat = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / 4)
    rel = abs(sigma_hat * 6 - 1)
    ok = rel < 0.10 and leaks == 0
    _report("Einstein spreading", ok,
            f"sigma_hat {sigma_hat:.4f} +- {se:.4f} vs 1/6, rel dev "
            f"{rel:.4f} (tol 0.10), mass-leak flags {leaks}")


# --- exact identities ----------------------------------------------------------------

def test_criterion_7_exact_identity_suite():
    worst = 0.0
    for rho in np.linspace(0.5 + 1e-6, 1.0, 1000):
        e = exact_observables(rho)
        worst = max(worst, abs(e.sigma - e.D * e.chi))
    rep = relation_check(exact_exponents(), d=1)
    max_res = rep.max_abs_residual()
    far_ok = True
    for d in (1, 2, 3):
        far = relation_check(ExponentSet(z=2.0, zeta=d / 2.0, gamma=0.0,
                                         beta=1.0, theta=float(d)), d=d)
        far_ok &= (far.max_abs_residual() == 0.0
                   and not far.z_theta_applicable)
    ok = worst < 1e-12 and max_res < 1e-14 and far_ok
    _report("exact-identity suite", ok,
            f"max |sigma - D chi| {worst:.2e} on 1000-point grid (tol 1e-12), "
            f"exact exponent-set residual {max_res:.2e}, "
            f"far-from-criticality set consistent: {far_ok}")


# --- structural properties -----------------------------------------------------------

def test_criterion_8_structural_randomized():
    rng = numpy_rng(808)
    n_traj = 10 ** 4
    checks = 0
    for traj in range(n_traj):
        d = int(rng.integers(1, 3))
        L = int(rng.integers(3, 7))
        mode = MODES[rng.integers(3)]
        g = Geometry(d, L, mode)
        c = initial_condition("bernoulli", g, (1, traj),
                              rho=float(rng.uniform(0.2, 0.8)))
        b = BoundarySpec.uniform(g, 0.5) if mode != PERIODIC else None
        st = SimulationState(c, seed=(2, traj), boundary=b)
        n0 = st.config.n
        for _ in range(8):
            if kmc_step(st) is None:
                break
            assert st.edges.jumps() == brute_force_jumps(st.config)
            if mode == PERIODIC:
                assert st.config.n == n0
            assert obs.measure_activity(st.config) <= \
                (2 * d - 1) * obs.measure_rho_a(st.config) + 1e-12
            checks += 1

    # absorbing states stay absorbed
    g = Geometry(2, 6)
    for c in (initial_condition("chessboard", g),
              Configuration(g, np.ones(g.volume, dtype=np.uint8))):
        st = SimulationState(c, seed=0)
        assert st.is_absorbed and kmc_step(st) is None and st.t == 0.0

    # translation covariance of the spatial estimators is exact
    g = Geometry(1, 512)
    samples = [sample_pi_rho(0.7, 512, seed=(9, k), geometry=g)
               for k in range(20)]
    rolled = [Configuration(g, np.roll(c.occ, 201)) for c in samples]
    a = obs.two_point_correlation(samples, max_lag=8)
    btc = obs.two_point_correlation(rolled, max_lag=8)
    assert np.abs(a.phi - btc.phi).max() < 1e-12
    for c, r in zip(samples, rolled):
        assert obs.measure_activity(c) == obs.measure_activity(r)
        assert obs.measure_rho_a(c) == obs.measure_rho_a(r)

    _report("structural properties", True,
            f"{n_traj} randomized trajectories, {checks} per-step checks of "
            "jump-set consistency / conservation / activity bound; absorbing "
            "states and exact translation covariance verified")


# --- SOC spread experiment --------------------------------------------------------------

def test_criterion_9_soc_spread(tmp_path):
    ini = tmp_path / "soc.ini"
    ini.write_text("")
    out = tmp_path / "soc"
    rc = main(["soc", str(ini), "--out", str(out),
               "--set", "soc.L=256", "--set", "soc.block=64",
               "--set", "soc.seeds=20", "--set", "soc.ratio_L=64",
               "--set", "experiment.seed=7"])
    assert rc == 0
    rep = json.loads((out / "soc.json").read_text())
    rho_c, err = rep["rho_c_hat"], rep["rho_c_err"]
    ratio = rep["ratio"]["activity_over_rhoA"]
    ok = (0.25 < rho_c < 0.5) and 2.4 <= ratio <= 3.6 \
        and rep["n_accepted"] == 20
    _report("SOC spread experiment", ok,
            f"pooled inner density {rho_c:.4f} +- {err:.4f} in (0.25, 0.5), "
            f"activity/rhoA ratio {ratio:.3f} at rho_c+0.02 (window "
            f"[2.4, 3.6]), accepted {rep['n_accepted']}/20 seeds")


# --- determinism across workers ------------------------------------------------------------

def test_criterion_10_worker_count_determinism(tmp_path, monkeypatch):
    ini = tmp_path / "s.ini"
    ini.write_text("")
    args = ["--set", "sweep.L=256",
            "--set", "sweep.rho_grid=0.52,0.53,0.54,0.55,0.56,0.57,0.58,0.59",
            "--set", "sweep.snapshots=40", "--set", "sweep.replicas=2",
            "--set", "sweep.max_lag=16", "--set", "sweep.xi_r_max=8",
            "--set", "sweep.chi_cutoff=8", "--set", "experiment.seed=5"]
    digests = {}
    for workers in (1, 4, 8):
        monkeypatch.setenv("CLG_THREADS", str(workers))
        out = tmp_path / f"w{workers}"
        assert main(["sweep", str(ini), "--out", str(out)] + args) == 0
        digests[workers] = ((out / "sweep.csv").read_bytes(),
                            (out / "exponents.json").read_bytes())
    ok = digests[1] == digests[4] == digests[8]
    _report("worker-count determinism", ok,
            "sweep.csv and exponents.json byte-identical across "
            "1, 4, and 8 workers" if ok else "outputs differ across workers")
