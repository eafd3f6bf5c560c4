"""Command line entry point: ``necrostrip {stationary,spectrum,simulate,jacobian,sweep}``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 parameters
outside the model regime.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .config import PARAM_KEYS, load_config
from .elliptic import build_grid, solve_nutrient_obstacle, solve_pressure
from .errors import (ConfigError, MinStepReached, NecrostripError, NoFlatStationary,
                     OutOfDomain, TailNotCertified)
from .evolution import GridConfig, jacobian_spectrum, simulate
from .model import (eval_dsigma_s, eval_p_s, eval_sigma_s, existence_threshold,
                    flat_stationary, validate_params, verify_stationary_residual)
from .spectral import (classify_stability, curvature_weight, gamma_k, gamma_star,
                       gamma_star_sensitivity, lambda_k)

log = logging.getLogger("necrostrip")

__all__ = ["main", "cmd_stationary", "cmd_spectrum", "cmd_simulate", "cmd_jacobian",
           "cmd_sweep", "build_rho0"]


def _provenance(cfg):
    d = cfg.as_dict()
    d["output"].pop("directory", None)  # where files go is not part of the run
    return d


def _setup(cfg):
    params = validate_params(**cfg.params)
    return params, flat_stationary(params)


def _outdir(cfg):
    out = Path(cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_rho0(spec, nx):
    x = 2.0 * np.pi * np.arange(nx) / nx
    rho = np.zeros(nx)
    for k, amp, phase in spec:
        rho += amp * np.cos(k * x + phase)
    return rho


def cmd_stationary(cfg) -> list:
    """Flat stationary state: stationary.json and profiles.csv."""
    params, fs = _setup(cfg)
    report = verify_stationary_residual(fs, params)
    sigma_star = existence_threshold(params.sigma_hat, params.sigma_tilde)
    n = cfg.output["profile_points"]
    y = np.linspace(0.0, fs.rho_s, n)
    prof = np.column_stack([y, eval_sigma_s(fs, params, y), eval_dsigma_s(fs, params, y),
                            eval_p_s(fs, params, y)])
    snap = None
    if cfg.output["snapshot"]:
        grid = build_grid(cfg.grid["nx"], cfg.grid["ny"], fs)
        ob = solve_nutrient_obstacle(grid, params, fs)
        snap = (grid, ob, solve_pressure(grid, params, fs, ob, params.gamma))

    conf = _provenance(cfg)
    out = _outdir(cfg)
    io.write_json(out / "stationary.json", {
        "eta_s": fs.eta_s, "rho_s": fs.rho_s, "p0": fs.p0, "sigma_star": sigma_star,
        "residual": {"ode_sigma": report.ode_residual_sigma, "ode_p": report.ode_residual_p,
                     "side_conditions": {k: v for k, v in report.interface_jump_residuals},
                     "max_abs": report.max_abs},
    }, config=conf)
    io.write_csv(out / "profiles.csv", ["y", "sigma_s", "dsigma_s", "p_s"], prof, config=conf)
    files = [out / "stationary.json", out / "profiles.csv"]
    if snap is not None:
        io.write_field_snapshot(out / "field_flat.csv", *snap, params, fs, config=conf)
        files.append(out / "field_flat.csv")
    return files


def cmd_spectrum(cfg) -> list:
    """Closed-form spectrum: spectrum.csv and threshold.json."""
    params, fs = _setup(cfg)
    k_max = cfg.spectral["k_max"]
    try:
        gs, argmax, ok = gamma_star(params, fs, k_max)
    except TailNotCertified as exc:
        raise TailNotCertified(f"{exc} (try k_max = {exc.suggested_k_max})",
                               exc.suggested_k_max) from exc
    rep = classify_stability(params, fs, params.gamma, k_max)
    rows = [[0, lambda_k(params, fs, 0, params.gamma), math.nan, 0.0]]
    for k in range(1, k_max + 1):
        rows.append([k, lambda_k(params, fs, k, params.gamma), gamma_k(params, fs, k),
                     curvature_weight(k, fs)])
    sweep = None
    if cfg.spectral["nu_sweep"]:
        nus = sorted(cfg.spectral["nu_sweep"])
        sweep = gamma_star_sensitivity(params, fs, nus, k_max)

    conf = _provenance(cfg)
    out = _outdir(cfg)
    io.write_csv(out / "spectrum.csv", ["k", "lambda_k", "gamma_k", "k3tanh"], rows, config=conf)
    io.write_json(out / "threshold.json", {
        "gamma_star": gs, "argmax_k": list(argmax), "tail_certified": ok, "k_max": k_max,
        "gamma": params.gamma, "classification": rep.classification,
        "unstable_modes": list(rep.unstable_modes), "varpi": rep.varpi,
    }, config=conf)
    files = [out / "spectrum.csv", out / "threshold.json"]
    if sweep is not None:
        io.write_csv(out / "gamma_star_vs_nu.csv", ["nu", "gamma_star"], sweep, config=conf)
        files.append(out / "gamma_star_vs_nu.csv")
    return files


def cmd_simulate(cfg) -> list:
    """Time integration: trajectory.csv and rates.json."""
    params, fs = _setup(cfg)
    ev = cfg.evolution
    gc = GridConfig(cfg.grid["nx"], cfg.grid["ny"])
    gamma = params.gamma
    if ev["gamma_over_gamma_star"] is not None:
        gamma = ev["gamma_over_gamma_star"] * gamma_star(params, fs, cfg.spectral["k_max"])[0]
    rho0 = build_rho0(ev["rho0"], gc.nx)
    if np.max(np.abs(rho0)) > fs.gap / 8.0:
        raise OutOfDomain(f"initial amplitude {np.max(np.abs(rho0)):.6g} exceeds "
                          f"(rho_s - eta_s)/8 = {fs.gap / 8.0:.6g}")
    fit = range(0, min(ev["fit_k_max"], gc.nx // 2) + 1)
    closed = {k: lambda_k(params, fs, k, gamma) for k in fit}
    conf = _provenance(cfg)
    failure = None
    try:
        traj = simulate(rho0, params, fs, gamma, ev["T"], ev["dt0"], gc, dt_max=ev["dt_max"],
                        max_rel_change=ev["max_rel_change"], scheme=ev["scheme"],
                        fit_modes=fit, window_fraction=ev["window_fraction"],
                        growth_factor=ev["growth_factor"])
    except MinStepReached as exc:
        traj, failure = exc.trajectory, exc
    out = _outdir(cfg)
    seeded = sorted({k for k, _, _ in ev["rho0"]})
    io.write_trajectory(out, traj, closed, config=conf,
                        extra={"gamma": gamma, "seeded_modes": seeded})
    files = [out / "trajectory.csv", out / "rates.json"]
    if failure is not None or cfg.output["snapshot"]:
        x = 2.0 * np.pi * np.arange(gc.nx) / gc.nx
        io.write_csv(out / "last_rho.csv", ["x", "rho"], zip(x, traj.rho_snapshots[-1]),
                     config=conf, meta={"t": traj.times[-1]})
        files.append(out / "last_rho.csv")
    if failure is not None:
        raise failure
    return files


def cmd_jacobian(cfg) -> list:
    """Finite-difference linearization against the closed form: jacobian.csv."""
    params, fs = _setup(cfg)
    jac = cfg.jacobian
    grids = jac["grids"] or [[cfg.grid["nx"], cfg.grid["ny"]]]
    ks = sorted(set(jac["k"]))
    rows, prev = [], {}
    for nx, ny in grids:
        res = jacobian_spectrum(ks, jac["epsilon"], params, fs, params.gamma, (nx, ny))
        for k in ks:
            lam = lambda_k(params, fs, k, params.gamma)
            err = abs(res[k].lambda_hat - lam) / max(1.0, abs(lam))
            order = math.nan
            if k in prev and err > 0.0 and prev[k][1] > 0.0:
                order = math.log(prev[k][1] / err) / math.log(nx / prev[k][0])
            rows.append([nx, ny, k, res[k].lambda_hat, lam, err, res[k].leakage, order])
            prev[k] = (nx, err)
    out = _outdir(cfg)
    io.write_csv(out / "jacobian.csv",
                 ["nx", "ny", "k", "lambda_hat", "lambda", "rel_err", "leakage", "order"],
                 rows, config=_provenance(cfg))
    return [out / "jacobian.csv"]


def _sweep_point(base, keys, combo, k_max):
    vals = dict(base, **dict(zip(keys, combo)))
    row = [vals[k] for k in PARAM_KEYS]
    try:
        params = validate_params(**vals)
        fs = flat_stationary(params)
        gs, argmax, ok = gamma_star(params, fs, k_max, raise_on_uncertified=False)
        cls = classify_stability(params, fs, params.gamma, k_max).classification
        return row + [fs.eta_s, fs.rho_s, gs, argmax[0], int(ok), cls, "ok"]
    except NecrostripError as exc:
        return row + [math.nan] * 3 + [-1, 0, "-", type(exc).__name__]


def cmd_sweep(cfg) -> list:
    """Threshold and stability over a parameter grid: sweep.csv."""
    values = cfg.sweep["values"]
    if not values:
        raise ConfigError("sweep.values is empty")
    keys = sorted(values)
    combos = sorted(itertools.product(*(sorted(values[k]) for k in keys)))
    threads = max(1, int(os.environ.get("NECROSTRIP_THREADS", "1") or 1))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(lambda c: _sweep_point(cfg.params, keys, c, cfg.sweep["k_max"]),
                             combos))
    out = _outdir(cfg)
    io.write_csv(out / "sweep.csv", list(PARAM_KEYS) + [
        "eta_s", "rho_s", "gamma_star", "argmax_k", "tail_certified", "classification",
        "status"], rows, config=_provenance(cfg))
    return [out / "sweep.csv"]


COMMANDS = {"stationary": cmd_stationary, "spectrum": cmd_spectrum,
            "simulate": cmd_simulate, "jacobian": cmd_jacobian, "sweep": cmd_sweep}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="necrostrip",
        description="Necrotic tumor strip: stationary state, spectrum, evolution, sweeps.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--out", help="output directory (overrides output.directory)")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="e.g. params.nu=0.5; may be repeated")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.override)
        if args.out:
            cfg.output["directory"] = args.out
        files = COMMANDS[args.command](cfg)
    except NoFlatStationary as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except NecrostripError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
