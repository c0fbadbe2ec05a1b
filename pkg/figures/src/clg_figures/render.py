"""Figure rendering from FigureSpec dictionaries.

A FigureSpec is a JSON object::

    {"kind": <one of FIGURE_KINDS>,
     "inputs": {"csv": <data file>, "exponents": ..., "summary": ...},
     "output": <image path>,
     "overlay": {"kind": "exact-decay", "rho": ...}        # optional
              | {"kind": "dirichlet-column"}}

Every input is validated against the documented column schema before any
drawing happens; a missing column is a SchemaError naming the column, and
no image file is produced.  Rendering is deterministic: fixed figure size,
fixed dpi, no timestamps in the output.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_RC = {
    "figure.figsize": (6.4, 4.4),
    "figure.dpi": 130,
    "savefig.dpi": 130,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


class SchemaError(Exception):
    """The spec or one of its inputs does not match the documented schema."""


_REQUIRED_COLUMNS = {
    "loglog-scaling": ["rho", "rhoA", "rhoA_err", "activity", "activity_err",
                       "chi", "chi_err", "xiCross", "xiCross_err"],
    "correlation-decay": ["lag", "phi", "stderr"],
    "box-variance": ["R", "var", "stderr"],
    "boundary-profile": ["i1", "rhoA_measured", "stderr"],
    "current-vs-time": ["t", "J_left", "J_right"],
}

FIGURE_KINDS = tuple(_REQUIRED_COLUMNS)


def _load_table(path, required, kind):
    try:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            fields = reader.fieldnames or []
            missing = [c for c in required if c not in fields]
            if missing:
                raise SchemaError(
                    f"{kind}: {path} is missing column(s): "
                    + ", ".join(missing))
            rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"{kind}: cannot read {path}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{kind}: {path} has no data rows")
    table = {}
    for c in fields:
        vals = [r[c] for r in rows]
        try:
            table[c] = np.array([float(v) for v in vals])
        except ValueError:
            table[c] = np.array(vals)
    return table


def _load_json(path, kind):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{kind}: cannot read {path}: {exc}") from exc


def exact_decay_rate(rho: float) -> float:
    """Decay rate 1/xi of the stationary 1D correlations at density rho."""
    if not 0.5 < rho < 1.0:
        raise SchemaError(f"exact-decay overlay needs rho in (1/2, 1), "
                          f"got {rho}")
    rho_a = (2.0 * rho - 1.0) / rho
    return -math.log(1.0 - rho_a)


def _exact_decay_curve(rho, lags):
    rate = exact_decay_rate(rho)
    return rho * (1.0 - rho) * np.exp(-rate * np.asarray(lags, dtype=float))


# --- per-kind renderers ------------------------------------------------------

def _render_loglog_scaling(spec, ax):
    t = _load_table(spec["inputs"]["csv"], _REQUIRED_COLUMNS["loglog-scaling"],
                    "loglog-scaling")
    rep = None
    if "exponents" in spec["inputs"]:
        rep = _load_json(spec["inputs"]["exponents"], "loglog-scaling")
    rho_c = rep.get("rho_c", 0.5) if rep else 0.5
    gap = t["rho"] - rho_c
    series = [("rhoA", "rhoA_err", "active density", "beta"),
              ("activity", "activity_err", "activity", "b"),
              ("chi", "chi_err", "compressibility", "gamma"),
              ("xiCross", "xiCross_err", "correlation length", "nu_cross")]
    for col, err_col, label, fit_name in series:
        fit = (rep or {}).get("fits", {}).get(fit_name)
        if fit:
            label += f" (slope {fit['value']:+.3f})"
        ax.errorbar(gap, t[col], yerr=t[err_col], fmt="o", ms=4,
                    capsize=2, label=label)
        if fit:
            lo, hi = fit["window"]
            x = np.geomspace(max(lo, gap.min()), min(hi, gap.max()), 50)
            sign = -1.0 if fit_name == "nu_cross" else 1.0
            ax.plot(x, fit["prefactor"] * x ** (sign * fit["value"]),
                    "-", lw=1, color="0.4")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("density above threshold")
    ax.set_ylabel("observable")
    ax.legend(fontsize=8)
    ax.set_title("scaling of stationary observables")


def _render_correlation_decay(spec, ax):
    t = _load_table(spec["inputs"]["csv"],
                    _REQUIRED_COLUMNS["correlation-decay"],
                    "correlation-decay")
    ax.errorbar(t["lag"], np.abs(t["phi"]), yerr=t["stderr"], fmt="o",
                ms=4, capsize=2, label="measured |correlation|")
    overlay = spec.get("overlay")
    if overlay and overlay.get("kind") == "exact-decay":
        rho = overlay.get("rho")
        if rho is None:
            raise SchemaError("exact-decay overlay needs a rho value")
        lags = np.linspace(0, float(t["lag"].max()), 200)
        ax.plot(lags, _exact_decay_curve(float(rho), lags), "-", lw=1,
                color="0.3",
                label=f"exact decay (rate {exact_decay_rate(float(rho)):.3f})")
    ax.set_yscale("log")
    ax.set_xlabel("lag")
    ax.set_ylabel("|two-point correlation|")
    ax.legend(fontsize=8)
    ax.set_title("stationary correlation decay")


def _render_box_variance(spec, ax):
    t = _load_table(spec["inputs"]["csv"], _REQUIRED_COLUMNS["box-variance"],
                    "box-variance")
    ax.errorbar(t["R"], t["var"], yerr=t["stderr"], fmt="o", ms=4, capsize=2,
                label="box variance")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("box side R")
    ax.set_ylabel("particle-number variance")
    ax.legend(fontsize=8)
    ax.set_title("number fluctuations vs box size")


def _render_boundary_profile(spec, ax):
    kind = "boundary-profile"
    required = list(_REQUIRED_COLUMNS[kind])
    overlay = spec.get("overlay")
    dirichlet = bool(overlay and overlay.get("kind") == "dirichlet-column")
    if dirichlet:
        required.append("rhoA_dirichlet")
    t = _load_table(spec["inputs"]["csv"], required, kind)
    cols = np.unique(t["i1"])
    mean = np.array([t["rhoA_measured"][t["i1"] == c].mean() for c in cols])
    err = np.array([np.sqrt((t["stderr"][t["i1"] == c] ** 2).sum())
                    / (t["i1"] == c).sum() for c in cols])
    ax.errorbar(cols, mean, yerr=err, fmt="o", ms=4, capsize=2,
                label="measured column average")
    if dirichlet:
        exact = np.array([t["rhoA_dirichlet"][t["i1"] == c].mean()
                          for c in cols])
        ax.plot(cols, exact, "-", lw=1, color="0.3", label="Dirichlet solution")
    ax.set_xlabel("column index")
    ax.set_ylabel("active density")
    ax.legend(fontsize=8)
    ax.set_title("boundary-driven stationary profile")


def _render_current_vs_time(spec, ax):
    t = _load_table(spec["inputs"]["csv"],
                    _REQUIRED_COLUMNS["current-vs-time"], "current-vs-time")
    ax.plot(t["t"], t["J_left"], "-", lw=1, label="left-reservoir ledger")
    ax.plot(t["t"], t["J_right"], "-", lw=1, label="right-reservoir ledger")
    if "summary" in spec["inputs"]:
        rep = _load_json(spec["inputs"]["summary"], "current-vs-time")
        for key, style in (("expected_slope_left", "--"),
                           ("expected_slope_right", ":")):
            if key in rep:
                ax.plot(t["t"], rep[key] * t["t"], style, lw=1, color="0.3",
                        label=f"{key.replace('_', ' ')} {rep[key]:+.4f}")
    ax.set_xlabel("time")
    ax.set_ylabel("net particles absorbed")
    ax.legend(fontsize=8)
    ax.set_title("reservoir currents")


_RENDERERS = {
    "loglog-scaling": _render_loglog_scaling,
    "correlation-decay": _render_correlation_decay,
    "box-variance": _render_box_variance,
    "boundary-profile": _render_boundary_profile,
    "current-vs-time": _render_current_vs_time,
}


def render_figure(spec: dict) -> Path:
    """Validate a FigureSpec dict and write its image; returns the path."""
    if not isinstance(spec, dict):
        raise SchemaError("figure spec must be a JSON object")
    kind = spec.get("kind")
    if kind not in _RENDERERS:
        raise SchemaError(f"unknown figure kind {kind!r}; expected one of "
                          + ", ".join(FIGURE_KINDS))
    inputs = spec.get("inputs")
    if not isinstance(inputs, dict) or "csv" not in inputs:
        raise SchemaError(f"{kind}: spec needs inputs.csv")
    out = spec.get("output")
    if not out:
        raise SchemaError(f"{kind}: spec needs an output path")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        try:
            _RENDERERS[kind](spec, ax)
            fig.tight_layout()
            out = Path(out)
            out.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(out)
        finally:
            plt.close(fig)
    return out
