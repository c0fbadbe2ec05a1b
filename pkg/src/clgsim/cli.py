"""Reproducible experiment driver.

Subcommands
    run        one experiment from a config file (recipes: plain,
               exact1d-check, cylinder-current); resumable from checkpoint
    sweep      replica-parallel density sweep -> sweep.csv + exponents.json
    soc        spread experiment estimating rho_c, plus the activity ratio
               measured in the quasi-stationary state near it
    boundary   cylinder profile + reservoir current ledgers
    exact      closed-form 1D observable table -> exact.csv
    analyze    re-fit exponents from an existing sweep.csv
    plot-data  emit figure-spec JSON files for the plotting companion

Configuration is line-oriented INI text with nested sections; every key can
be overridden on the command line with ``--set section.key=value``.  All
randomness flows from the single root seed (``experiment.seed``) through the
documented stream splitter, so outputs are byte-identical across runs and
across worker counts (``CLG_THREADS`` caps parallelism).  Each command
writes a ``manifest.json`` recording the resolved configuration, seeds,
package versions, and wall time.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, boundary as bd, observables as obs
from ._kernel import make_rng_state, mix_seed
from .dynamics import (BoundarySpec, SimulationState, initial_condition,
                       load_checkpoint, run_until, save_checkpoint,
                       STOP_ABSORBED)
from .exact1d import exact_observables
from .exponents import (ExponentSet, log_log_fit, numerical_d, relation_check,
                        xi_perp_hidden_density)
from .lattice import Geometry, UsageError, PERIODIC
from .sampling import quasi_stationary_snapshots, stationary_snapshots_1d

# numeric stream tags so different purposes never share an RNG stream
_TAG_DYNAMICS = 0xD1
_TAG_INITIAL = 0x1C
_TAG_BOXES = 0xB0


# --- configuration ---------------------------------------------------------

def load_config(path, overrides=()):
    """Parse an INI config file into {section: {key: value}} (strings).

    ``overrides`` are ``section.key=value`` strings applied afterwards,
    one-for-one.  Parse problems are reported with file/line positions.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    if path is not None:
        try:
            with open(path) as f:
                cp.read_file(f, source=str(path))
        except configparser.Error as exc:
            raise UsageError(f"config parse error: {exc}") from exc
    cfg = {s: dict(cp.items(s)) for s in cp.sections()}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(
                f"override {item!r} is not of the form section.key=value")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        cfg.setdefault(section, {})[name.strip()] = value.strip()
    return cfg


def config_to_text(cfg: dict) -> str:
    """Canonical serialization: sorted sections and keys, 'key = value'
    lines.  load_config(config_to_text(c)) == c for string-valued configs."""
    out = []
    for section in sorted(cfg):
        out.append(f"[{section}]")
        for key in sorted(cfg[section]):
            out.append(f"{key} = {cfg[section][key]}")
        out.append("")
    return "\n".join(out)


class _Section:
    """Typed, error-localizing access to one config section."""

    def __init__(self, cfg: dict, name: str):
        self.name = name
        self.data = cfg.get(name, {})

    def _get(self, key, cast, default):
        if key not in self.data or self.data[key] == "":
            if default is _REQUIRED:
                raise UsageError(f"missing required config key {self.name}.{key}")
            return default
        raw = self.data[key]
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise UsageError(
                f"bad value for {self.name}.{key}: {raw!r} ({exc})") from exc

    def geti(self, key, default=None):
        return self._get(key, int, default)

    def getf(self, key, default=None):
        return self._get(key, float, default)

    def gets(self, key, default=None):
        return self._get(key, str, default)

    def getfloats(self, key, default=None):
        return self._get(key, lambda s: [float(x) for x in s.split(",")], default)


_REQUIRED = object()


def _geometry(cfg) -> Geometry:
    sec = _Section(cfg, "geometry")
    return Geometry(sec.geti("d", _REQUIRED), sec.geti("L", _REQUIRED),
                    sec.gets("mode", PERIODIC))


def _boundary_spec(cfg, g: Geometry) -> BoundarySpec:
    sec = _Section(cfg, "boundary")
    if "alpha" in sec.data:
        return BoundarySpec.uniform(g, sec.getf("alpha"))
    return BoundarySpec.cylinder(g, sec.getf("alpha_left", _REQUIRED),
                                 sec.getf("alpha_right", _REQUIRED))


def _require_config(cfg, required):
    """Top-level validation: ``required`` is {section: [keys]}."""
    missing = []
    for section, keys in required.items():
        for key in keys:
            if cfg.get(section, {}).get(key, "") == "":
                missing.append(f"{section}.{key}")
    if missing:
        raise UsageError("config is missing required keys: "
                         + ", ".join(missing))


# --- manifest --------------------------------------------------------------

def _write_manifest(outdir: Path, command: str, cfg: dict, seed,
                    outputs, t_start: float, extra=None):
    import numba
    import scipy
    manifest = {
        "command": command,
        "config": cfg,
        "root_seed": seed,
        "outputs": sorted(str(p) for p in outputs),
        "versions": {"clgsim": __version__,
                     "python": sys.version.split()[0],
                     "numpy": np.__version__,
                     "numba": numba.__version__,
                     "scipy": scipy.__version__},
        "wall_time_s": round(time.monotonic() - t_start, 3),
    }
    if extra:
        manifest.update(extra)
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (outdir / "resolved_config.ini").write_text(config_to_text(cfg))
    return path


def _outdir(cfg) -> Path:
    sec = _Section(cfg, "output")
    out = Path(sec.gets("dir", _REQUIRED))
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- run -------------------------------------------------------------------

def cmd_run(cfg, resume: bool = False) -> Path:
    _require_config(cfg, {"geometry": ["d", "L"], "experiment": ["seed"],
                          "output": ["dir"]})
    exp = _Section(cfg, "experiment")
    recipe = exp.gets("recipe", "plain")
    if recipe == "exact1d-check":
        return _run_exact1d_check(cfg)
    if recipe == "cylinder-current":
        return cmd_boundary(cfg)
    if recipe != "plain":
        raise UsageError(f"unknown recipe {recipe!r} "
                         "(plain, exact1d-check, cylinder-current)")
    return _run_plain(cfg, resume)


def _run_plain(cfg, resume: bool) -> Path:
    t0 = time.monotonic()
    g = _geometry(cfg)
    exp = _Section(cfg, "experiment")
    run = _Section(cfg, "run")
    seed = exp.geti("seed", _REQUIRED)
    n_snapshots = run.geti("snapshots", 100)
    dt = run.getf("snapshot_dt", 1.0)
    outdir = _outdir(cfg)
    b = _boundary_spec(cfg, g) if g.mode != PERIODIC else None
    ckpt = outdir / "checkpoint.npz"
    obs_path = outdir / "observables.csv"

    progress = outdir / "progress.json"
    done = 0
    if resume:
        if not ckpt.exists() or not progress.exists():
            raise UsageError(f"--resume: no checkpoint in {outdir}")
        st = load_checkpoint(ckpt, boundary=b)
        done = json.loads(progress.read_text())["rows"]
        # a crash between the row write and the checkpoint save leaves one
        # extra CSV row; truncate back to the checkpointed state
        with open(obs_path, newline="") as f:
            lines = f.readlines()
        with open(obs_path, "w", newline="") as f:
            f.writelines(lines[:1 + done])
    else:
        kind = run.gets("initial", _REQUIRED)
        c0 = initial_condition(kind, g, (seed, _TAG_INITIAL),
                               n=run.geti("n"), rho=run.getf("rho"),
                               block=run.geti("block"))
        st = SimulationState(c0, rng_state=make_rng_state(seed, _TAG_DYNAMICS),
                             boundary=b)
        with open(obs_path, "w", newline="") as f:
            csv.writer(f).writerow(["t", "rho", "rhoA", "activity",
                                    "sigmaHat", "absorbed"])

    absorbed = st.is_absorbed
    with open(obs_path, "a", newline="") as f:
        w = csv.writer(f)
        for k in range(done, n_snapshots + 1):
            if k > 0 and not absorbed:
                absorbed = run_until(st, time=k * dt) == STOP_ABSORBED
            # canonicalize the allowed-jump order at every checkpoint: a
            # resumed run rebuilds the set from scratch, and uniform event
            # sampling replays identically only if the order matches
            st.edges.refresh(st.config)
            r = obs.record_observables(st.config, t=st.t, absorbed=absorbed)
            w.writerow([f"{r.t:.10g}", f"{r.rho:.10g}", f"{r.rho_a:.10g}",
                        f"{r.activity:.10g}", f"{r.sigma_hat:.10g}",
                        int(r.absorbed)])
            f.flush()
            save_checkpoint(st, ckpt)
            progress.write_text(json.dumps({"rows": k + 1}) + "\n")
    _write_manifest(outdir, "run", cfg, seed, [obs_path, ckpt], t0,
                    extra={"events": st.event_count, "final_time": st.t})
    return outdir


def _run_exact1d_check(cfg) -> Path:
    """1D stationary measurement against the closed forms at the same rho."""
    t0 = time.monotonic()
    g = _geometry(cfg)
    if g.d != 1 or g.mode != PERIODIC:
        raise UsageError("exact1d-check needs a 1D periodic geometry")
    exp = _Section(cfg, "experiment")
    seed = exp.geti("seed", _REQUIRED)
    rho = exp.getf("rho", _REQUIRED)
    n_snapshots = exp.geti("snapshots", 500)
    replicas = exp.geti("replicas", 10)
    max_lag = exp.geti("max_lag", 32)
    outdir = _outdir(cfg)

    run = stationary_snapshots_1d(g.L, rho, n_snapshots, seed=seed,
                                  replicas=replicas)
    records = [obs.record_observables(c, t=t)
               for c, t in zip(run.snapshots, run.snapshot_times)]
    profile = obs.two_point_correlation(run.snapshots, max_lag)
    boxes = [R for R in (4, 8, 16, 32, 64, 128, 256) if R <= g.L // 8]
    curve = obs.box_variance_curve(run.snapshots, boxes,
                                   seed=mix_seed(seed, _TAG_BOXES))
    chi_corr = obs.compressibility_from_correlations(
        profile, cutoff=profile.noise_floor_r_max())
    chi_box = obs.compressibility_from_box_variance(
        run.snapshots, boxes, seed=mix_seed(seed, _TAG_BOXES))
    sigma_x = obs.conductivity_from_crossings(run.total_jumps, run.total_time, g)

    exact = exact_observables(rho)
    obs_path = outdir / "observables.csv"
    obs.write_observables_csv(obs_path, records)
    corr_path = outdir / "corr.csv"
    obs.write_corr_csv(corr_path, profile)
    box_path = outdir / "boxvar.csv"
    obs.write_boxvar_csv(box_path, curve)
    exact_path = outdir / "exact.csv"
    write_exact_csv(exact_path, [exact])

    summary = {
        "rho": rho,
        "measured": {
            "rhoA": float(np.mean([r.rho_a for r in records])),
            "activity": float(np.mean([r.activity for r in records])),
            "sigma_pairs": float(np.mean([r.sigma_hat for r in records])),
            "sigma_crossings": sigma_x,
            "chi_corr": chi_corr.value,
            "chi_box": chi_box.value,
            "phi1": float(profile.phi[1]),
        },
        "exact": {"rhoA": exact.rho_a, "activity": exact.activity,
                  "sigma": exact.sigma, "chi": exact.chi,
                  "phi1": -rho * (1 - rho) * (1 - exact.rho_a)},
        "tolerances": {"rhoA": 0.01, "activity": 0.02, "sigma": 0.03,
                       "chi": 0.07, "phi1_abs": 0.003},
    }
    sum_path = outdir / "summary.json"
    sum_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_manifest(outdir, "run", cfg, seed,
                    [obs_path, corr_path, box_path, exact_path, sum_path], t0)
    return outdir


# --- sweep -----------------------------------------------------------------

def _worker_count(n_tasks: int) -> int:
    cap = int(os.environ.get("CLG_THREADS", os.cpu_count() or 1))
    return max(1, min(cap, n_tasks))


def _sweep_point(args):
    """One density point of the sweep; self-contained and deterministically
    seeded, so the result is independent of worker scheduling."""
    (idx, rho, L, n_snapshots, replicas, seed, max_lag,
     xi_r_max, chi_cutoff) = args
    run = stationary_snapshots_1d(L, rho, n_snapshots, seed=(seed, idx),
                                  replicas=replicas)
    per_rep = n_snapshots // replicas
    rho_a = np.array([obs.measure_rho_a(c) for c in run.snapshots])
    act = np.array([obs.measure_activity(c) for c in run.snapshots])
    sig = act * run.geometry.volume / (2.0 * obs.n_lattice_edges(run.geometry))

    def batch(v):  # replica-level batch means: honest stderr under correlation
        means = v.reshape(replicas, per_rep).mean(axis=1)
        return float(means.mean()), float(means.std(ddof=1) / math.sqrt(replicas))

    profile = obs.two_point_correlation(run.snapshots, max_lag)
    # explicit short windows: the 1D decay is exactly exponential, so small
    # r keeps the fit inside the high-signal lags (far lags carry correlated
    # long-wavelength noise that the naive noise floor underestimates)
    if xi_r_max is None:
        xi_r_max = profile.noise_floor_r_max()
    if chi_cutoff is None:
        chi_cutoff = profile.noise_floor_r_max()
    chi = obs.compressibility_from_correlations(profile, cutoff=chi_cutoff)
    fit = profile.fit_xi(r_max=max(xi_r_max, 4))
    row = {"rho": rho}
    row["rhoA"], row["rhoA_err"] = batch(rho_a)
    row["activity"], row["activity_err"] = batch(act)
    row["sigma"], row["sigma_err"] = batch(sig)
    row["chi"], row["chi_err"] = chi.value, chi.err
    row["xiCross"], row["xiCross_err"] = fit.xi, fit.err
    row["snapshots"] = n_snapshots
    return idx, row


_SWEEP_COLUMNS = ["rho", "rhoA", "rhoA_err", "activity", "activity_err",
                  "sigma", "sigma_err", "chi", "chi_err",
                  "D", "D_err", "xiCross", "xiCross_err", "snapshots"]


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_SWEEP_COLUMNS)
        for row in rows:
            w.writerow(["" if row.get(c) is None else
                        (f"{row[c]:.10g}" if isinstance(row[c], float) else row[c])
                        for c in _SWEEP_COLUMNS])


def read_sweep_csv(path):
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for rec in reader:
            rows.append({k: (None if v == "" else
                             (int(v) if k == "snapshots" else float(v)))
                         for k, v in rec.items()})
    return rows


def fit_exponents(rows, rho_c: float, zeta: float, d: int = 1, window=None):
    """Power-law fits of the sweep observables in the density gap rho-rho_c.

    Returns (ExponentSet, details dict).  zeta is an input, not a fit: the
    grid sits off criticality where the number variance is extensive, so the
    hyperuniformity exponent is not measurable from these data.  The fit
    window (in gap units) is explicit configuration; a window hugging rho_c
    reduces the bias from analytic prefactors varying across the grid.
    """
    rows = sorted(rows, key=lambda r: r["rho"])
    rho = np.array([r["rho"] for r in rows])
    gap = rho - rho_c
    if np.any(gap <= 0):
        raise UsageError("sweep grid must lie strictly above rho_c")
    if window is None:
        window = (float(gap.min()), float(gap.max()))
    # pad against float noise in gap = rho - rho_c (0.55 - 0.5 > 0.05)
    window = (window[0] * (1.0 - 1e-9), window[1] * (1.0 + 1e-9))
    if len(rows) < 4:
        raise UsageError(
            f"exponent fits need >= 4 grid points, got {len(rows)}")

    def col(name):
        return np.array([r[name] for r in rows])

    fits, details = {}, {}

    def add(name, values, sign=+1.0):
        f = log_log_fit(gap, values, window)
        fits[name] = (sign * f.exponent, f.exponent_err)
        details[name] = {"value": sign * f.exponent, "err": f.exponent_err,
                         "prefactor": f.prefactor, "r_squared": f.r_squared,
                         "window": list(f.window), "n_points": f.n_points}

    add("beta", col("rhoA"))
    add("b", col("activity"))
    add("gamma", col("chi"))
    add("nu_cross", col("xiCross"), sign=-1.0)
    _, D, D_err = numerical_d(rho, col("rhoA"), col("rhoA_err"))
    add("alpha", D)
    xi_perp = np.array([xi_perp_hidden_density(r, rho_c, zeta, d).value
                        for r in rho])
    add("nu_perp", xi_perp, sign=-1.0)

    e = ExponentSet(rho_c=rho_c, zeta=zeta,
                    **{k: v for k, (v, _) in fits.items()},
                    errors={k: err for k, (_, err) in fits.items()})
    return e, details, (D, D_err)


def cmd_sweep(cfg) -> Path:
    t0 = time.monotonic()
    _require_config(cfg, {"sweep": ["L"], "experiment": ["seed"],
                          "output": ["dir"]})
    sw = _Section(cfg, "sweep")
    exp = _Section(cfg, "experiment")
    seed = exp.geti("seed", _REQUIRED)
    L = sw.geti("L", _REQUIRED)
    grid = sw.getfloats("rho_grid")
    if grid is None:
        lo, hi = sw.getf("rho_min", _REQUIRED), sw.getf("rho_max", _REQUIRED)
        step = sw.getf("rho_step", _REQUIRED)
        grid = list(np.round(np.arange(lo, hi + step / 2, step), 12))
    rho_c = sw.getf("rho_c", 0.5)
    zeta = sw.getf("zeta", 0.0)
    n_snapshots = sw.geti("snapshots", 500)
    replicas = sw.geti("replicas", 10)
    max_lag = sw.geti("max_lag", 48)
    fit_window = sw.getfloats("fit_window")
    if fit_window is not None and len(fit_window) != 2:
        raise UsageError("sweep.fit_window needs two values: lo,hi (gap units)")
    outdir = _outdir(cfg)

    xi_r_max = sw.geti("xi_r_max", 12)
    chi_cutoff = sw.geti("chi_cutoff", 12)
    tasks = [(i, rho, L, n_snapshots, replicas, seed, max_lag,
              xi_r_max, chi_cutoff)
             for i, rho in enumerate(grid)]
    workers = _worker_count(len(tasks))
    results = {}
    if workers == 1:
        for t in tasks:
            idx, row = _sweep_point(t)
            results[idx] = row
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, row in pool.map(_sweep_point, tasks):
                results[idx] = row
    rows = [results[i] for i in sorted(results)]  # merge in grid order

    sweep_path = outdir / "sweep.csv"
    exp_path = outdir / "exponents.json"
    outputs = [sweep_path, exp_path]
    refused = None
    try:
        e, details, (D, D_err) = fit_exponents(
            rows, rho_c, zeta,
            window=None if fit_window is None else tuple(fit_window))
        for row, dv, de in zip(rows, D, D_err):
            row["D"], row["D_err"] = float(dv), float(de)
    except UsageError as exc:
        refused = str(exc)
        e = details = None
        if len(rows) >= 3:
            _, D, D_err = numerical_d([r["rho"] for r in rows],
                                      [r["rhoA"] for r in rows],
                                      [r["rhoA_err"] for r in rows])
            for row, dv, de in zip(rows, D, D_err):
                row["D"], row["D_err"] = float(dv), float(de)
    write_sweep_csv(sweep_path, rows)

    if refused is not None:
        exp_path.write_text(json.dumps(
            {"fit_refused": refused, "rho_c": rho_c, "zeta": zeta},
            indent=2, sort_keys=True) + "\n")
        print(f"exponent fit refused: {refused}", file=sys.stderr)
    else:
        report = relation_check(e, d=1)
        exp_path.write_text(json.dumps({
            "rho_c": rho_c,
            "zeta": zeta,
            "zeta_source": "input (1D off-critical sweeps cannot measure it)",
            "exponents": e.as_dict(),
            "errors": e.errors,
            "fits": details,
            "relations": {k: {"residual": v, "err": err}
                          for k, (v, err) in report.residuals.items()},
            "relation_gaps": [list(gap) for gap in report.gaps],
            "z_derived": report.z_derived,
            "theta_derived": report.theta_derived,
            "z_theta_applicable": report.z_theta_applicable,
            "seed": seed,
        }, indent=2, sort_keys=True) + "\n")
    _write_manifest(outdir, "sweep", cfg, seed, outputs, t0,
                    extra={"workers": workers, "rho_grid": list(grid)})
    return outdir


def cmd_analyze(cfg) -> Path:
    t0 = time.monotonic()
    _require_config(cfg, {"analyze": ["sweep_csv"], "output": ["dir"]})
    an = _Section(cfg, "analyze")
    rows = read_sweep_csv(an.gets("sweep_csv", _REQUIRED))
    rho_c = an.getf("rho_c", 0.5)
    zeta = an.getf("zeta", 0.0)
    fit_window = an.getfloats("fit_window")
    outdir = _outdir(cfg)
    e, details, _ = fit_exponents(
        rows, rho_c, zeta,
        window=None if fit_window is None else tuple(fit_window))
    report = relation_check(e, d=1)
    exp_path = outdir / "exponents.json"
    exp_path.write_text(json.dumps({
        "rho_c": rho_c, "zeta": zeta,
        "exponents": e.as_dict(), "errors": e.errors, "fits": details,
        "relations": {k: {"residual": v, "err": err}
                      for k, (v, err) in report.residuals.items()},
        "z_derived": report.z_derived,
        "theta_derived": report.theta_derived,
        "z_theta_applicable": report.z_theta_applicable,
    }, indent=2, sort_keys=True) + "\n")
    _write_manifest(outdir, "analyze", cfg, None, [exp_path], t0)
    return outdir


# --- soc -------------------------------------------------------------------

def cmd_soc(cfg) -> Path:
    t0 = time.monotonic()
    _require_config(cfg, {"soc": ["L", "block"], "experiment": ["seed"],
                          "output": ["dir"]})
    sc = _Section(cfg, "soc")
    exp = _Section(cfg, "experiment")
    seed = exp.geti("seed", _REQUIRED)
    L = sc.geti("L", _REQUIRED)
    block = sc.geti("block", _REQUIRED)
    n_seeds = sc.geti("seeds", 20)
    d = sc.geti("d", 2)
    outdir = _outdir(cfg)

    g = Geometry(d, L)
    res = obs.soc_spread_experiment(g, block,
                                    seeds=[(seed, k) for k in range(n_seeds)],
                                    event_cap=sc.geti("event_cap", 10 ** 9))
    soc_csv = outdir / "soc.csv"
    accepted = iter(res.inner_densities)
    with open(soc_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed_index", "status", "inner_density"])
        rej = {(seed, k) for k in range(n_seeds)} & set(map(tuple, res.rejected_edge))
        cen = {(seed, k) for k in range(n_seeds)} & set(map(tuple, res.censored))
        for k in range(n_seeds):
            key = (seed, k)
            if key in rej:
                w.writerow([k, "edge-rejected", ""])
            elif key in cen:
                w.writerow([k, "censored", ""])
            else:
                w.writerow([k, "accepted", f"{next(accepted):.10g}"])

    summary = {"L": L, "block": block, "seeds": n_seeds,
               "rho_c_hat": res.pooled, "rho_c_err": res.pooled_err,
               "n_accepted": len(res.inner_densities),
               "n_edge_rejected": len(res.rejected_edge),
               "n_censored": len(res.censored)}

    # activity ratio a/rho_a in the quasi-stationary state just above rho_c_hat
    ratio_L = sc.geti("ratio_L", 64)
    if ratio_L > 0 and res.inner_densities:
        rho_qs = res.pooled + sc.getf("ratio_offset", 0.02)
        qs = quasi_stationary_snapshots(
            Geometry(d, ratio_L), rho_qs, sc.geti("ratio_snapshots", 100),
            seed=(seed, 0xA11), burn_factor=sc.getf("ratio_burn_factor", 10.0))
        a = np.array([obs.measure_activity(c) for c in qs.snapshots])
        ra = np.array([obs.measure_rho_a(c) for c in qs.snapshots])
        ratio = float(a.mean() / ra.mean())
        n = len(a)
        ratio_err = ratio * math.hypot(a.std(ddof=1) / a.mean(),
                                       ra.std(ddof=1) / ra.mean()) / math.sqrt(n)
        summary["ratio"] = {"rho": rho_qs, "L": ratio_L,
                            "activity": float(a.mean()),
                            "rhoA": float(ra.mean()),
                            "activity_over_rhoA": ratio,
                            "ratio_err": ratio_err,
                            "restarts": qs.restarts, "censored": qs.censored}
    soc_json = outdir / "soc.json"
    soc_json.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_manifest(outdir, "soc", cfg, seed, [soc_csv, soc_json], t0)
    return outdir


# --- boundary --------------------------------------------------------------

def cmd_boundary(cfg) -> Path:
    t0 = time.monotonic()
    _require_config(cfg, {"geometry": ["d", "L", "mode"],
                          "experiment": ["seed"], "output": ["dir"]})
    g = _geometry(cfg)
    if g.mode == PERIODIC:
        raise UsageError("boundary command needs an open or cylinder geometry")
    b = _boundary_spec(cfg, g)
    exp = _Section(cfg, "experiment")
    bc = _Section(cfg, "boundarydriven")
    seed = exp.geti("seed", _REQUIRED)
    outdir = _outdir(cfg)

    sol = bd.dirichlet_solve(g, b)
    prof = bd.measure_stationary_profile(
        g, b, burn_in=bc.getf("burn_in"), windows=bc.geti("windows", 20),
        window_time=bc.getf("window_time"), seed=(seed, 0xB1))
    T = bc.getf("current_time", 20.0 * g.L ** 2)
    traj = bd.track_current(g, b, T, seed=(seed, 0xB2),
                            burn_in=bc.getf("burn_in"))
    prof_path = outdir / "profile.csv"
    bd.write_profile_csv(prof_path, prof, sol)
    cur_path = outdir / "current.csv"
    bd.write_current_csv(cur_path, traj)
    alphas = sorted(set(b.alpha.values()))
    summary = {
        "K": traj.K,
        "slope_left": traj.slope_left, "slope_left_err": traj.slope_left_err,
        "slope_right": traj.slope_right, "slope_right_err": traj.slope_right_err,
        "dirichlet_residual": sol.residual,
        "events": traj.final_state.event_count,
        "measurement_time": T,
    }
    if len(alphas) == 2:  # flat two-reservoir cylinder: exact expected slopes
        a_l = b.alpha[min(b.alpha, key=lambda s: s[0])]
        a_r = b.alpha[max(b.alpha, key=lambda s: s[0])]
        summary["expected_slope_left"] = traj.K * (a_r - a_l)
        summary["expected_slope_right"] = traj.K * (a_l - a_r)
    sum_path = outdir / "boundary.json"
    sum_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_manifest(outdir, "boundary", cfg, seed,
                    [prof_path, cur_path, sum_path], t0)
    return outdir


# --- exact -----------------------------------------------------------------

def write_exact_csv(path, table):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["rho", "rhoA", "activity", "D", "chi", "sigma",
                    "xiCross", "xiPerp"])
        for e in table:
            w.writerow([f"{v:.12g}" for v in
                        (e.rho, e.rho_a, e.activity, e.D, e.chi, e.sigma,
                         e.xi_cross, e.xi_perp)])


def cmd_exact(cfg) -> Path:
    t0 = time.monotonic()
    _require_config(cfg, {"output": ["dir"]})
    ex = _Section(cfg, "exact")
    lo = ex.getf("rho_min", 0.51)
    hi = ex.getf("rho_max", 1.0)
    n = ex.geti("points", 50)
    outdir = _outdir(cfg)
    table = [exact_observables(r) for r in np.linspace(lo, hi, n)]
    path = outdir / "exact.csv"
    write_exact_csv(path, table)
    _write_manifest(outdir, "exact", cfg, None, [path], t0)
    return outdir


# --- plot-data -------------------------------------------------------------

_FIGURE_KINDS = {
    # kind -> (required csv file, extra inputs)
    "loglog-scaling": ("sweep.csv", ["exponents.json"]),
    "correlation-decay": ("corr.csv", []),
    "box-variance": ("boxvar.csv", []),
    "boundary-profile": ("profile.csv", []),
    "current-vs-time": ("current.csv", ["boundary.json"]),
}


def cmd_plot_data(cfg) -> Path:
    """Emit FigureSpec JSON files for every plot kind whose input CSVs exist
    in the data directory; the plotting companion consumes these specs."""
    t0 = time.monotonic()
    _require_config(cfg, {"plotdata": ["data_dir"], "output": ["dir"]})
    pd = _Section(cfg, "plotdata")
    data_dir = Path(pd.gets("data_dir", _REQUIRED))
    outdir = _outdir(cfg)
    written = []
    for kind, (main_csv, extras) in _FIGURE_KINDS.items():
        src = data_dir / main_csv
        if not src.exists():
            continue
        spec = {"kind": kind,
                "inputs": {"csv": str(src)},
                "output": str(outdir / f"{kind}.png")}
        for extra in extras:
            p = data_dir / extra
            if p.exists():
                key = "exponents" if extra.endswith("exponents.json") else "summary"
                spec["inputs"][key] = str(p)
        if kind == "correlation-decay":
            summary = data_dir / "summary.json"
            if summary.exists():
                rho = json.loads(summary.read_text()).get("rho")
                if rho is not None:
                    spec["overlay"] = {"kind": "exact-decay", "rho": rho}
        if kind == "boundary-profile":
            spec["overlay"] = {"kind": "dirichlet-column"}
        path = outdir / f"{kind}.json"
        path.write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n")
        written.append(path)
    if not written:
        raise UsageError(f"no known CSV inputs found in {data_dir}")
    _write_manifest(outdir, "plot-data", cfg, None, written, t0)
    return outdir


# --- entry point -----------------------------------------------------------

def _build_parser():
    p = argparse.ArgumentParser(
        prog="clg",
        description="Constrained lattice gas: reproducible experiment driver")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, needs_config in (("run", True), ("sweep", True), ("soc", True),
                               ("boundary", True), ("exact", False),
                               ("analyze", True), ("plot-data", True)):
        sp = sub.add_parser(name)
        sp.add_argument("config", nargs=None if needs_config else "?",
                        help="INI config file")
        sp.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="section.key=value",
                        help="override a config key")
        sp.add_argument("--out", help="shorthand for --set output.dir=...")
        if name == "run":
            sp.add_argument("--resume", action="store_true",
                            help="continue a partial run from its checkpoint")
    return p


_COMMANDS = {"sweep": cmd_sweep, "soc": cmd_soc, "boundary": cmd_boundary,
             "exact": cmd_exact, "analyze": cmd_analyze,
             "plot-data": cmd_plot_data}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.out:
            cfg.setdefault("output", {})["dir"] = args.out
        if args.command == "run":
            outdir = cmd_run(cfg, resume=args.resume)
        else:
            outdir = _COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(outdir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
