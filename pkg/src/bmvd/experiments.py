"""Experiment runners behind the command line.

Each runner takes a validated configuration (see :mod:`bmvd.config`) and
returns ``(summary, artifacts)``: a JSON-ready dict with the measured
quantities and per-check booleans, and a dict ``filename -> writer``.
Nothing time- or host-dependent goes into either, so reruns are
byte-identical.
"""
from __future__ import annotations

import csv
import glob
import json
import math
import os

import numpy as np

from . import radial_pde as rp
from . import simulator as sm
from .config import build_drift
from .drift import zero
from .duhamel import (REGIME_LABELS, SpaceTimeGrid, calibrate_t1, drifted_pde_reference, extend_time,
                      l1_on_grid, resolvent_check, sum_series, verify_convolution_inequality)
from .geometry import STAR, DomainSpec, ModelParams, polar_point
from .green import LegInterval, green_mc, green_pde, green_report, leg_interval_green
from .kernels import fit_sandwich


def _params(cfg):
    return ModelParams(cfg["model"]["eps"], cfg["model"]["p"])


def _csv_writer(header, rows):
    def write(path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for r in rows:
                wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return write


def pde_bin_masses(table: rp.KernelTable, i_t, edges, n_fine=100_001):
    """Bin masses of a radial kernel (linear interpolation of the density)."""
    g = table.grid
    fine = np.linspace(edges[0], edges[-1], n_fine)
    dens = np.interp(fine, g.y, table.values[i_t]) * g.density(fine)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(fine))])
    return np.diff(np.interp(edges, fine, cum))


def _write_text(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _start_point(s, params):
    x0 = s["x0"]
    if s["full"] and x0 > 0:
        return polar_point(x0, s["theta0"], params)
    return x0 if x0 != 0 else (STAR if s["full"] else 0.0)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def run_simulate(cfg):
    s = cfg["simulate"]
    params = _params(cfg)
    seed = cfg["run"]["seed"]
    workers = cfg["run"]["workers"]
    edges = np.linspace(-s["span"], s["span"], s["n_bins"] + 1)
    drift = build_drift(cfg)
    task = s["task"]
    summary = {"task": task, "n_paths": s["n_paths"], "t": s["t"], "seed": seed}
    artifacts = {}

    def simulate(mode, drift_, seed_, curvature=True, full=None):
        full = s["full"] if full is None else full
        conf = sm.SimConfig(dt=s["dt"], T=s["t"], n_paths=s["n_paths"], seed=seed_, mode=mode,
                            drift=drift_, curvature=curvature, workers=workers)
        fn = sm.simulate_full if full else sm.simulate_radial
        return fn(_start_point(s, params) if full else s["x0"], conf, params)

    if task == "skew_check":
        conf = sm.SimConfig(dt=min(s["dt"], s["t"]), T=s["t"], n_paths=s["n_paths"], seed=seed, curvature=False, workers=workers)
        ens = sm.simulate_radial(s["x0"], conf, params)
        cdf = sm.skew_bm_cdf(s["t"], s["x0"], edges, params.eta)
        pr = np.diff(cdf)
        cnt = np.histogram(ens.y, edges)[0] / ens.n
        se = np.sqrt(pr * (1 - pr) / ens.n)
        z = np.where(se > 0, (cnt - pr) / np.where(se > 0, se, 1.0), 0.0)
        frac = float(np.mean(np.abs(z) > 3))
        summary.update({"frac_bins_beyond_3se": frac, "max_abs_z": float(np.max(np.abs(z))),
                        "eta": params.eta, "checks": {"skew_oracle": frac <= s["max_frac_outside"]}})
        rows = zip(edges[:-1], edges[1:], cnt, pr, se)
        artifacts["simulate_skew.csv"] = _csv_writer(["lo", "hi", "mc_mass", "exact_mass", "se"], list(rows))
        return summary, artifacts

    if task == "pde_check":
        ens = simulate("none", None, seed)
        grid = rp.build_grid(cfg["grid"]["L_leg"], cfg["grid"]["L_plane"], params, h=cfg["grid"]["h"])
        tab = rp.solve_kernel(s["x0"], s["t"], grid, times=[s["t"]])
        pb = pde_bin_masses(tab, 0, edges)
        mc = np.histogram(ens.y, edges)[0] / ens.n
        l1 = float(np.abs(pb - mc).sum())
        summary.update({"l1": l1, "pde_mass_in_span": float(pb.sum()), "mc_mass_in_span": float(mc.sum()),
                        "checks": {"pde_mc_l1": l1 <= s["max_l1"]}})
        artifacts["simulate_pde_check.csv"] = _csv_writer(["lo", "hi", "mc_mass", "pde_mass"],
                                                          list(zip(edges[:-1], edges[1:], mc, pb)))
        return summary, artifacts

    if task == "girsanov_check":
        if drift is None:
            raise ValueError("girsanov_check needs a non-zero drift")
        em = simulate("euler_maruyama", drift, seed, full=True)
        gi = simulate("girsanov", drift, seed + 1, full=True)
        t_em = sm.estimate_density(em, edges, params)
        t_gi = sm.estimate_density(gi, edges, params)
        l1 = float(np.abs(t_em.mass - t_gi.mass).sum())
        w = gi.weights
        mw, mw_se = float(w.mean()), float(w.std(ddof=1) / math.sqrt(w.size))
        z = abs(mw - 1) / mw_se
        summary.update({"l1": l1, "mean_weight": mw, "mean_weight_se": mw_se, "weight_z": z,
                        "ess": t_gi.ess, "n_clipped": int(gi.n_clipped), "drift": drift.name,
                        "checks": {"girsanov_l1": l1 <= s["max_l1"], "mean_weight": z <= s["weight_z"]}})
        artifacts["simulate_girsanov.csv"] = _csv_writer(
            ["lo", "hi", "em_mass", "em_se", "girsanov_mass", "girsanov_se"],
            list(zip(edges[:-1], edges[1:], t_em.mass, t_em.mass_se, t_gi.mass, t_gi.mass_se)))
        return summary, artifacts

    mode = s["mode"] if drift is not None else "none"
    if drift is not None and mode == "none":
        mode = "euler_maruyama"
    ens = simulate(mode, drift, seed, curvature=s["curvature"])
    tab = sm.estimate_density(ens, edges, params, curvature=s["curvature"])
    summary.update({"out_mass": tab.out_mass, "ess": tab.ess, "mode": mode})
    artifacts["simulate_density.csv"] = tab.to_csv
    if s["write_paths"]:
        artifacts["simulate_paths.csv"] = ens.to_csv
    return summary, artifacts


# ---------------------------------------------------------------------------
# pde
# ---------------------------------------------------------------------------

def symmetry_defect(grid, n_probe=8, seed=0):
    """Relative defect of ``<u, S v> = <S u, v>`` for the stepping operator.

    ``S`` is the m~-weighted generator (stiffness) applied exactly as the
    time stepper applies it.
    """
    st = rp._Stepper(grid)
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((st.idx.size, n_probe))
    V = rng.standard_normal((st.idx.size, n_probe))
    a = U.T @ st.apply_S(V)
    b = (V.T @ st.apply_S(U)).T
    scale = np.abs(U).T @ (np.abs(st.diag)[:, None] * np.abs(V)) * 3
    return float(np.max(np.abs(a - b) / scale))


def run_pde(cfg):
    p = cfg["pde"]
    params = _params(cfg)
    g = cfg["grid"]
    grid = rp.build_grid(g["L_leg"], g["L_plane"], params, h=g["h"], growth=g["growth"])
    drift = build_drift(cfg)
    times = rp.default_times(p["T"], p["n_out"])
    tab = rp.solve_kernel(p["x0"], p["T"], grid, drift=drift, times=times)
    mass = tab.mass()
    sym = symmetry_defect(grid)
    flux = [(float(t), rp.flux_at_star(tab, t)) for t in times if t >= p["flux_t_min"] - 1e-12]
    max_flux = max(abs(f) for _, f in flux)
    mass_err = float(np.max(np.abs(mass - 1)))
    summary = {"h": g["h"], "n_nodes": grid.n_nodes, "x0": p["x0"], "mass_error": mass_err,
               "min_value": float(tab.values.min()), "symmetry_defect": sym, "max_flux_at_star": max_flux,
               "drift": "zero" if drift is None else drift.name}
    checks = {}
    if drift is None:
        checks["mass"] = mass_err <= p["mass_tol"]
        checks["symmetry"] = sym <= 1e-13
        checks["flux_at_star"] = max_flux <= p["flux_tol"]
    if p["ck"]:
        res = []
        for h in (2 * g["h"], g["h"]):
            gr = rp.build_grid(g["L_leg"], g["L_plane"], params, h=h)
            tb = rp.solve_kernel(p["x0"], p["ck_t"], gr, times=[p["ck_t"] / 2, p["ck_t"]])
            res.append(rp.chapman_kolmogorov_residual(tb, p["ck_t"] / 2, p["ck_t"]))
        factor = res[0] / res[1] if res[1] > 0 else math.inf
        summary.update({"ck_residual_coarse": res[0], "ck_residual": res[1], "ck_factor": factor})
        checks["ck_residual"] = res[1] <= p["ck_tol"]
        checks["ck_halving"] = factor >= p["ck_factor"]
    summary["checks"] = checks
    artifacts = {"pde_kernel.csv": tab.to_csv,
                 "pde_mass.csv": _csv_writer(["t", "mass"], list(zip(times, mass)))}
    return summary, artifacts


# ---------------------------------------------------------------------------
# duhamel
# ---------------------------------------------------------------------------

def run_duhamel(cfg):
    d = cfg["duhamel"]
    params = _params(cfg)
    g = cfg["grid"]
    drift = build_drift(cfg)
    grid = rp.build_grid(g["L_leg"], g["L_plane"], params, h=g["h"], growth=g["growth"])
    prop = rp.SpectralPropagator(grid)
    summary = {"drift": "zero" if drift is None else drift.name, "n_nodes": grid.n_nodes}
    checks = {}
    artifacts = {}
    if d["resolvent"]:
        f = np.exp(-((prop.y - d["source"]) / 0.3) ** 2)
        rep = resolvent_check(prop, drift, d["alpha"], f, n_max=d["resolvent_n_max"],
                              n_steps=d["resolvent_steps"])
        summary["resolvent"] = json.loads(rep.to_json())
        checks["resolvent"] = rep.residual <= rep.budget
        summary["checks"] = checks
        return summary, artifacts
    if d["T1"] > 0:
        T1, ratios = d["T1"], []
    else:
        T1, ratios = calibrate_t1(prop, drift, d["source"], r_max=d["r_max"], n_steps=d["n_steps"])
    stg = SpaceTimeGrid(prop, T1, d["n_steps"])
    res = sum_series(stg, drift, [d["source"]], tol=d["tol"], n_max=d["n_max"])
    r = [x for x in res.state.ratios if np.isfinite(x)]
    r_obs = max(r) if r else 0.0
    ref_grid = rp.build_grid(g["L_leg"], g["L_plane"], params, h=d["reference_h"])
    T_ext = d["extend_factor"] * T1
    times_ext, vals_ext = extend_time(res, drift, T_ext)
    check_t = [T1, T_ext]
    ref = drifted_pde_reference(ref_grid, drift, res.sources[0], check_t)
    l1 = l1_on_grid(prop, res.values[-1, 0], ref, T1)
    j = int(np.argmin(np.abs(times_ext - T_ext)))
    l1_ext = l1_on_grid(prop, vals_ext[j], ref, T_ext)
    summary.update({"t1": T1, "calibration_ratios": ratios, "level_ratios": res.state.ratios,
                    "level_norms": res.state.norms, "r_max_observed": r_obs, "l1_at_t1": l1,
                    "t_extended": float(times_ext[j]), "l1_extended": l1_ext,
                    "n_levels": len(res.state.norms)})
    checks["contraction"] = r_obs <= d["r_max"]
    checks["l1"] = l1 <= d["l1_tol"]
    checks["l1_extended"] = l1_ext <= d["extend_tol"]
    summary["checks"] = checks
    y = prop.y
    rows = [(t, yy, v) for t, row in zip(res.times, res.values[:, 0]) for yy, v in zip(y, row)]
    artifacts["duhamel_kernel.csv"] = _csv_writer(["t", "y", "value"], rows)
    return summary, artifacts


# ---------------------------------------------------------------------------
# verify-bounds
# ---------------------------------------------------------------------------

def run_bounds(cfg):
    b = cfg["bounds"]
    params = _params(cfg)
    g = cfg["grid"]
    drift = build_drift(cfg)
    summary = {"drift": "zero" if drift is None else drift.name}
    checks = {}
    artifacts = {}
    if b["sandwich"]:
        grid = rp.build_grid(g["L_leg"], g["L_plane"], params, h=g["h"], growth=g["growth"])
        times = np.linspace(b["t_min"], b["t_max"], b["n_times"])
        fits = {}
        for label, dr in (("driftless", None), ("drifted", drift)):
            if label == "drifted" and dr is None:
                continue
            for src in b["sources"]:
                tab = rp.solve_kernel(src, b["t_max"], grid, drift=dr, times=times)
                rep = fit_sandwich(tab, b["variant"], t_window=(b["t_min"], b["t_max"]), rtol=b["rtol"])
                key = f"{label}@{src!r}"
                fits[key] = json.loads(rep.to_json())
                finite = all(math.isfinite(rep.__dict__[k]) and rep.__dict__[k] > 0 for k in ("c_low", "c_up"))
                checks[f"sandwich {key}"] = finite and rep.alpha_low > rep.alpha_up
        summary["sandwich"] = fits
    if b["convolution"]:
        conv = {}
        prop = None
        if b["mode"] == "kernel":
            prop = rp.SpectralPropagator(rp.build_grid(g["L_leg"], g["L_plane"], params, h=g["h"]))
        dr = drift if drift is not None else zero()
        for reg in b["regimes"]:
            rep = verify_convolution_inequality(reg, dr, params, alpha=b["alpha"], beta=b["beta"],
                                                times=b["times"], n_pairs=b["n_pairs"],
                                                seed=cfg["run"]["seed"] + reg, mode=b["mode"], prop=prop)
            entry = json.loads(rep.to_json())
            entry["label"] = REGIME_LABELS[reg]
            conv[str(reg)] = entry
            if drift is not None:
                checks[f"convolution regime {reg}"] = rep.monotone and rep.decrease_fraction >= b["min_decrease"]
        summary["convolution"] = conv
        rows = [(int(k), t, r) for k, e in conv.items() for t, r in zip(e["times"], e["max_ratio"])]
        artifacts["bounds_convolution.csv"] = _csv_writer(["regime", "t", "max_ratio"], rows)
    summary["checks"] = checks
    return summary, artifacts


# ---------------------------------------------------------------------------
# green
# ---------------------------------------------------------------------------

def run_green(cfg):
    gc = cfg["green"]
    params = _params(cfg)
    seed = cfg["run"]["seed"]
    drift = build_drift(cfg)
    D = DomainSpec(gc["leg_length"], gc["plane_radius"]).validate(params)
    rep = green_report(D, params, drift, n_pairs=gc["n_pairs"], seed=seed, h=gc["h"])
    spreads = {c: v["spread"] for c, v in rep.constants.items()}
    checks = {f"spread {c}": math.isfinite(s) and s <= gc["max_spread"] for c, s in spreads.items()}

    col = green_pde(D, STAR, drift=drift, params=params, h=gc["h"])
    conf = sm.SimConfig(dt=gc["mc_dt"], T=gc["mc_T"], n_paths=gc["mc_paths"], seed=seed + 1,
                        workers=cfg["run"]["workers"])
    mc = green_mc(D, STAR, params, conf, drift=drift)
    z = abs(mc.mean_exit - col.total()) / mc.mean_exit_se
    checks["occupation_identity"] = z <= gc["exit_z"]

    a, b = gc["leg_interval"]
    I = LegInterval(a, b)
    conf_leg = sm.SimConfig(dt=gc["leg_dt"], T=gc["leg_T"], n_paths=gc["leg_paths"], seed=seed + 2,
                            workers=cfg["run"]["workers"])
    x0 = 0.5 * (a + b)
    leg = green_mc(I, x0, params, conf_leg, n_bins=gc["leg_bins"])
    fine = np.linspace(a, b, 200 * gc["leg_bins"] + 1)
    exact_f = leg_interval_green(x0 - a, fine - a, b - a, params.p)
    idx = np.clip(np.searchsorted(leg.edges, fine, side="right") - 1, 0, gc["leg_bins"] - 1)
    exact = np.bincount(idx, weights=exact_f, minlength=gc["leg_bins"]) / np.bincount(idx, minlength=gc["leg_bins"])
    leg_err = float(np.sum(np.abs(leg.green - exact)) / np.sum(exact))
    checks["leg_closed_form"] = leg_err <= gc["leg_tol"]

    summary = {"constants": rep.constants, "drift": "zero" if drift is None else drift.name,
               "integral_G": col.total(), "pde_T": col.T, "pde_residual_mass": col.residual_mass,
               "mc_mean_exit": mc.mean_exit, "mc_mean_exit_se": mc.mean_exit_se, "exit_z": z,
               "mc_frac_alive": mc.frac_alive, "leg_relative_l1": leg_err, "checks": checks}
    rows = [(c, e, f, e / f) for c, e, f in zip(rep.cases, rep.estimate, rep.form)]
    artifacts = {"green_pairs.csv": _csv_writer(["case", "estimate", "form", "ratio"], rows),
                 "green_column.csv": col.to_csv,
                 "green_report.json": lambda path: _write_text(path, rep.to_json() + "\n")}
    return summary, artifacts


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def run_report(cfg, out_dir):
    paths = cfg["report"]["inputs"] or sorted(glob.glob(os.path.join(out_dir, "*.json")))
    merged, all_ok = {}, True
    for pth in paths:
        name = os.path.basename(pth)
        if name in ("report.json", "error.json", "green_report.json"):
            continue
        with open(pth) as fh:
            data = json.load(fh)
        checks = data.get("checks", {})
        merged[name] = {"checks": checks, "passed": all(checks.values()) if checks else None}
        all_ok &= all(checks.values()) if checks else True
    return {"inputs": merged, "all_passed": bool(all_ok)}, {}
