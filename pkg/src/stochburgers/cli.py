"""Command-line runner: parse a config, dispatch the experiment, emit artifacts.

``run`` executes the configured experiment, writes its CSV series plus a
``manifest.txt`` (code version, config hash, master seed, result summary and
one pass/fail line per configured check), and exits 0 only when every check
passed.  ``validate`` performs the full static validation, including the
noise regularity report and derived bound constants, without running.

Exit codes: 0 success, 1 invariant-check failure, 2 configuration error,
3 runtime numeric error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import __version__
from .characteristics import CharacteristicEnsemble, integrate_ensemble, steepest_negative_slope, write_trajectory_csv
from .config import (
    ConfigError,
    ExperimentConfig,
    build_basis,
    build_profile,
    build_time_grid,
    grid_cells,
    load_config,
    viscosity,
    viscous_method,
)
from .field import (
    GridField,
    blowup_time_estimate,
    classify_blowup,
    evolve,
    max_principle_monitor,
    write_diagnostics_csv,
    write_snapshot_csv,
)
from .mclab import (
    aggregate,
    crossing_time_experiment,
    evaluate_slope_estimate,
    slope_moment_partial,
    write_estimate_csv,
)
from .noise import Torus, assumption_report, correction_fields
from .paths import sample_increment_block, sample_path
from .shocks import constant_states, detect_shock, integrate_srh, srh_residual, write_shock_csv

_CHUNK = 128  # fixed worker chunk so aggregation order ignores the pool size


def _pmap(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with get_context("fork").Pool(min(workers, len(items))) as pool:
        return pool.map(fn, items)


def _chunks(n_paths: int):
    return [list(range(lo, min(lo + _CHUNK, n_paths))) for lo in range(0, n_paths, _CHUNK)]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_manifest(path: Path, cfg: ExperimentConfig, workers: int, results: dict, checks: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(f"code_version = {__version__}\n")
        fh.write(f"experiment = {cfg.kind}\n")
        fh.write(f"config_sha256 = {cfg.sha256}\n")
        fh.write(f"master_seed = {cfg.master_seed}\n")
        fh.write(f"n_paths = {cfg.n_paths}\n")
        fh.write(f"workers = {workers}\n")
        for key in results:
            fh.write(f"result.{key} = {_fmt(results[key])}\n")
        for name, ok in checks.items():
            fh.write(f"check.{name} = {'pass' if ok else 'fail'}\n")


# ---------------------------------------------------------------------------
# experiment drivers (worker helpers are top-level so they pickle)


def _field_ingredients(cfg: ExperimentConfig):
    basis = build_basis(cfg)
    profile = build_profile(cfg)
    grid = build_time_grid(cfg)
    domain = basis.domain
    if not isinstance(domain, Torus):
        raise ConfigError("field experiments need a torus domain")
    fld = GridField.from_callable(profile.u0, domain.length, grid_cells(cfg), t0=grid.t0)
    return basis, profile, grid, fld


def _spde_one_path(args):
    cfg, p, out_dir = args
    basis, _, grid, fld = _field_ingredients(cfg)
    run = cfg.run_options
    path = sample_path(cfg.master_seed, p, grid, basis.n_modes)
    snapshot_every = int(run.get("snapshot_every", 0)) or None
    fld, diag, traj = evolve(
        fld,
        basis,
        path,
        grid.dt,
        nu=viscosity(cfg),
        snapshot_every=snapshot_every,
        interp=run.get("interp", "monotone_cubic"),
        viscous_method=viscous_method(cfg),
    )
    with open(Path(out_dir) / f"diagnostics_p{p:04d}.csv", "w", newline="\n") as fh:
        write_diagnostics_csv(fh, diag)
    if snapshot_every:
        with open(Path(out_dir) / f"snapshot_p{p:04d}_final.csv", "w", newline="\n") as fh:
            write_snapshot_csv(fh, fld)
    mass = np.asarray(diag.mass)
    return {
        "shock_time_estimate": blowup_time_estimate(diag),
        "mass_drift": float(np.max(np.abs(mass - mass[0]))),
        "sup_final": diag.sup[-1],
    }


def run_spde(cfg: ExperimentConfig, out_dir: Path, workers: int):
    rows = _pmap(_spde_one_path, [(cfg, p, str(out_dir)) for p in range(cfg.n_paths)], workers)
    results = {}
    for p, row in enumerate(rows):
        results[f"shock_time_estimate_p{p:04d}"] = row["shock_time_estimate"]
        results[f"mass_drift_p{p:04d}"] = row["mass_drift"]
    checks = {}
    if "mass_tol" in cfg.checks:
        tol = float(cfg.checks["mass_tol"])
        checks["mass_conservation"] = all(row["mass_drift"] <= tol for row in rows)
    return results, checks


def run_characteristics(cfg: ExperimentConfig, out_dir: Path, workers: int):
    basis = build_basis(cfg)
    profile = build_profile(cfg)
    grid = build_time_grid(cfg)
    run = cfg.run_options
    fan = [float(v) for v in run.get("fan", [0.0, 0.1])]
    block = sample_increment_block(cfg.master_seed, range(cfg.n_paths), grid, basis.n_modes)
    ens = CharacteristicEnsemble.from_profile(profile, fan, n_paths=cfg.n_paths)
    traj = integrate_ensemble(
        ens,
        basis,
        block,
        grid.dt,
        stepper=run.get("stepper", "heun"),
        record_every=int(run.get("record_every", max(1, grid.n_steps // 200))),
    )
    with open(out_dir / "trajectory.csv", "w", newline="\n") as fh:
        write_trajectory_csv(fh, traj)
    n_dead = int(np.count_nonzero(~ens.alive))
    results = {
        "n_states": ens.alive.size,
        "n_dead_final": n_dead,
        "mean_blowup_time": float(np.nanmean(ens.blowup_time)) if n_dead else math.inf,
    }
    return results, {}


def _crossing_chunk(args):
    cfg, indices = args
    basis = build_basis(cfg)
    profile = build_profile(cfg)
    grid = build_time_grid(cfg)
    run = cfg.run_options
    fan = [float(v) for v in run.get("fan", [-0.05, 0.05])]
    res = crossing_time_experiment(
        basis, profile, fan, indices, grid, cfg.master_seed,
        stepper=run.get("stepper", "wong_zakai"),
    )
    return res.tau_cross, res.tau_hit


def run_crossing(cfg: ExperimentConfig, out_dir: Path, workers: int):
    grid = build_time_grid(cfg)
    run = cfg.run_options
    parts = _pmap(_crossing_chunk, [(cfg, idx) for idx in _chunks(cfg.n_paths)], workers)
    tau_cross = np.concatenate([p[0] for p in parts])
    tau_hit = np.concatenate([p[1] for p in parts])
    with open(out_dir / "crossing.csv", "w", newline="\n") as fh:
        fh.write("path_index,tau_cross,tau_hit\n")
        for p, (tc, th) in enumerate(zip(tau_cross, tau_hit)):
            fh.write(f"{p},{tc:.17g},{th:.17g}\n")
    both = ~np.isnan(tau_cross) & ~np.isnan(tau_hit)
    consistent = np.isnan(tau_cross) == np.isnan(tau_hit)
    disc = np.abs(tau_cross[both] - tau_hit[both])
    tol = 2.0 * grid.dt
    agree = (np.count_nonzero(disc <= tol) + np.count_nonzero(consistent & ~both)) / cfg.n_paths
    fan = [float(v) for v in run.get("fan", [-0.05, 0.05])]
    results = {
        "theta": steepest_negative_slope(build_profile(cfg), np.linspace(min(fan), max(fan), 512)),
        "max_discrepancy": float(np.max(disc)) if disc.size else 0.0,
        "agreement_fraction": float(agree),
        "crossed_fraction": float(np.mean(~np.isnan(tau_cross))),
    }
    for T in run.get("horizons", []):
        frac = float(np.mean(np.nan_to_num(tau_cross, nan=math.inf) <= float(T)))
        results[f"crossed_by_{T}"] = frac
    checks = {}
    min_agree = float(cfg.checks.get("min_agreement", 0.99))
    checks["estimator_agreement"] = agree >= min_agree
    return results, checks


def _slope_chunk(args):
    cfg, indices = args
    basis = build_basis(cfg)
    profile = build_profile(cfg)
    grid = build_time_grid(cfg)
    run = cfg.run_options
    corrections = correction_fields(basis, basis.domain.probe_grid())
    return slope_moment_partial(
        basis,
        profile,
        float(run.get("x0", 0.0)),
        indices,
        grid,
        cfg.master_seed,
        corrections,
        stepper=run.get("stepper", "ito"),
        record_every=int(run.get("record_every", max(1, grid.n_steps // 200))),
        cap=float(run.get("cap", 1e6)),
    )


def run_slope_moments(cfg: ExperimentConfig, out_dir: Path, workers: int):
    basis = build_basis(cfg)
    profile = build_profile(cfg)
    grid = build_time_grid(cfg)
    run = cfg.run_options
    corrections = correction_fields(basis, basis.domain.probe_grid())
    partials = _pmap(_slope_chunk, [(cfg, idx) for idx in _chunks(cfg.n_paths)], workers)
    est = aggregate(partials)
    y0 = float(profile.du0(np.asarray(float(run.get("x0", 0.0)))))
    res = evaluate_slope_estimate(
        est,
        y0,
        corrections,
        grid.dt,
        cap=float(run.get("cap", 1e6)),
        censor_fraction=float(run.get("censor_fraction", 0.01)),
    )
    with open(out_dir / "slope_estimate.csv", "w", newline="\n") as fh:
        write_estimate_csv(fh, est)
    results = {
        "initial_slope": y0,
        "c_bound": corrections.c_bound,
        "d_bound": corrections.d_bound,
        "t_star": res.bound.t_star if res.bound is not None else math.inf,
        "violations": res.violations,
        "checked": res.checked,
        "n_blowups": res.n_blowups,
        "censor_limit_time": res.censor_limit_time,
        "divergence_time": res.divergence_time,
    }
    checks = {"envelope": res.violations == 0}
    if y0 >= 0:
        checks["no_blowups"] = res.n_blowups == 0
    return results, checks


def _shock_one_path(args):
    cfg, p, out_dir = args
    basis, profile, grid, fld = _field_ingredients(cfg)
    run = cfg.run_options
    init = cfg.data["initial"]
    if init["kind"] != "riemann":
        raise ConfigError("shock-track experiments need a riemann initial profile")
    path = sample_path(cfg.master_seed, p, grid, basis.n_modes)
    snapshot_every = int(run.get("snapshot_every", max(1, grid.n_steps // 40)))
    _, _, traj = evolve(
        fld, basis, path, grid.dt, nu=viscosity(cfg),
        snapshot_every=snapshot_every, interp=run.get("interp", "monotone_cubic"),
    )
    threshold = float(run.get("threshold", 0.25))
    detected = detect_shock(traj, threshold=threshold)
    states = constant_states(float(init.get("u_left", 1.0)), float(init.get("u_right", 0.0)))
    integrated = integrate_srh(float(init.get("jump_at", 0.5)), states, basis, path, fld.length)
    residual = srh_residual(detected, integrated)
    if p == 0:
        with open(Path(out_dir) / "shock_detected_p0000.csv", "w", newline="\n") as fh:
            write_shock_csv(fh, detected)
        with open(Path(out_dir) / "shock_integrated_p0000.csv", "w", newline="\n") as fh:
            write_shock_csv(fh, integrated)
    return residual / fld.dx


def run_shock_track(cfg: ExperimentConfig, out_dir: Path, workers: int):
    residuals = _pmap(_shock_one_path, [(cfg, p, str(out_dir)) for p in range(cfg.n_paths)], workers)
    residuals = np.asarray(residuals)
    with open(out_dir / "shock_residuals.csv", "w", newline="\n") as fh:
        fh.write("path_index,residual_cells\n")
        for p, r in enumerate(residuals):
            fh.write(f"{p},{r:.17g}\n")
    results = {
        "max_residual_cells": float(residuals.max()),
        "mean_residual_cells": float(residuals.mean()),
    }
    max_cells = float(cfg.checks.get("max_residual_cells", 3.0))
    return results, {"srh_residual": bool(residuals.max() <= max_cells)}


def _max_principle_one_path(args):
    cfg, p = args
    basis, profile, grid, fld = _field_ingredients(cfg)
    run = cfg.run_options
    b0 = float(run.get("b_constant", 0.0))
    b_mode = int(run.get("b_mode", 0))
    n_modes = max(basis.n_modes, b_mode + 1 if b0 != 0.0 else 0)
    path = sample_path(cfg.master_seed, p, grid, n_modes)
    sup0 = float(np.max(np.abs(fld.u)))
    b_values = np.full(fld.n, b0) if b0 != 0.0 else None
    _, diag, _ = evolve(
        fld,
        basis,
        path.increments[:, : basis.n_modes] if b0 == 0.0 else path,
        grid.dt,
        nu=viscosity(cfg),
        viscous_method=viscous_method(cfg),
        interp=run.get("interp", "monotone_cubic"),
        b_values=b_values,
        b_mode=b_mode,
    )
    envelope_c = float(run.get("envelope_c", b0))
    w = path.cumulative()[:, b_mode] if envelope_c != 0.0 else None
    rep = max_principle_monitor(
        diag.times,
        diag.sup,
        sup0,
        w_series=w,
        envelope_c=envelope_c,
        tol_per_time=float(run.get("tol_per_time", 1e-6)),
    )
    return rep.worst_ratio, rep.violated


def run_max_principle(cfg: ExperimentConfig, out_dir: Path, workers: int):
    rows = _pmap(_max_principle_one_path, [(cfg, p) for p in range(cfg.n_paths)], workers)
    worst = np.asarray([r[0] for r in rows])
    violated = [r[1] for r in rows]
    with open(out_dir / "max_principle.csv", "w", newline="\n") as fh:
        fh.write("path_index,worst_ratio,violated\n")
        for p, (w, v) in enumerate(rows):
            fh.write(f"{p},{w:.17g},{int(v)}\n")
    results = {
        "worst_ratio": float(worst.max()),
        "n_violations": int(sum(violated)),
    }
    return results, {"max_principle": not any(violated)}


def _blowup_one_run(args):
    cfg, p = args
    basis, profile, grid, fld = _field_ingredients(cfg)
    if p < 0:  # deterministic companion run
        inc = np.zeros((grid.n_steps, basis.n_modes))
    else:
        inc = sample_path(cfg.master_seed, p, grid, basis.n_modes).increments
    _, diag, _ = evolve(fld, basis, inc, grid.dt, nu=viscosity(cfg))
    verdict = classify_blowup(
        diag,
        h2_factor=float(cfg.checks.get("h2_factor", 20.0)),
        a_threshold=float(cfg.checks.get("a_threshold", 10.0)),
    )
    return verdict


def run_blowup_criterion(cfg: ExperimentConfig, out_dir: Path, workers: int):
    run_ids = [-1] + list(range(cfg.n_paths))
    verdicts = _pmap(_blowup_one_run, [(cfg, p) for p in run_ids], workers)
    with open(out_dir / "blowup_runs.csv", "w", newline="\n") as fh:
        fh.write("run,h2_exceeded,a_exceeded,agree\n")
        for rid, v in zip(run_ids, verdicts):
            name = "deterministic" if rid < 0 else f"path{rid:04d}"
            fh.write(f"{name},{int(v['h2_exceeded'])},{int(v['a_exceeded'])},{int(v['agree'])}\n")
    n_agree = sum(v["agree"] for v in verdicts)
    results = {"n_runs": len(verdicts), "n_agree": int(n_agree)}
    return results, {"blowup_agreement": n_agree == len(verdicts)}


_RUNNERS = {
    "spde": run_spde,
    "characteristics": run_characteristics,
    "crossing": run_crossing,
    "slope-moments": run_slope_moments,
    "shock-track": run_shock_track,
    "max-principle": run_max_principle,
    "blowup-criterion": run_blowup_criterion,
}


# ---------------------------------------------------------------------------
# validate


def validate_report(cfg: ExperimentConfig, fh) -> None:
    basis = build_basis(cfg)
    profile = build_profile(cfg)
    grid = build_time_grid(cfg)
    probe = basis.domain.probe_grid()
    report = assumption_report(basis, probe)
    fields = correction_fields(basis, probe)
    psi_vals = basis.psi(probe)
    fh.write(f"experiment = {cfg.kind}\n")
    fh.write(f"n_modes = {basis.n_modes}\n")
    fh.write(f"assumption.pass = {report.passed}\n")
    fh.write(f"assumption.sum_lipschitz_sq = {report.sum_lipschitz_sq:.6g}\n")
    fh.write(f"assumption.sum_growth_sq = {report.sum_growth_sq:.6g}\n")
    fh.write(f"correction.c_bound = {fields.c_bound:.6g}\n")
    fh.write(f"correction.d_bound = {fields.d_bound:.6g}\n")
    fh.write(f"correction.psi_min = {float(np.min(psi_vals)):.6g}\n")
    fh.write(f"correction.psi_max = {float(np.max(psi_vals)):.6g}\n")
    fh.write(f"time.dt = {grid.dt:.6g}\n")
    fh.write(f"time.n_steps = {grid.n_steps}\n")
    u_probe = profile.u0(probe)
    fh.write(f"initial.min = {float(np.min(u_probe)):.6g}\n")
    fh.write(f"initial.positive = {bool(np.all(u_probe > 0))}\n")
    if profile.descriptor.startswith(("sine_wave", "negative_line", "tabulated")):
        fh.write(f"initial.derivative_residual = {profile.derivative_residual(np.linspace(probe[1], probe[-2], 64)):.3g}\n")
    if cfg.kind in ("spde", "shock-track", "max-principle", "blowup-criterion"):
        n = grid_cells(cfg)
        dx = basis.domain.length / n
        cfl = grid.dt * float(np.max(np.abs(u_probe))) / dx
        fh.write(f"grid.n_cells = {n}\n")
        fh.write(f"grid.cfl_estimate = {cfl:.6g}\n")


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="stochburgers", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the TOML experiment config")
        if name == "run":
            p.add_argument("--out", default=None, help="output directory (overrides config)")
            p.add_argument("--seed", type=int, default=None, help="master seed override")
            p.add_argument("--workers", type=int, default=None, help="worker processes")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        try:
            validate_report(cfg, sys.stdout)
        except ConfigError as exc:
            print(f"error: config: {exc}", file=sys.stderr)
            return 2
        return 0

    if args.seed is not None:
        cfg.master_seed = args.seed
    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("WORKERS", os.cpu_count() or 1))
    out_dir = Path(args.out or cfg.output or ".")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: config: cannot create output directory: {exc}", file=sys.stderr)
        return 2

    runner = _RUNNERS[cfg.kind]
    try:
        results, checks = runner(cfg, out_dir, workers)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 3

    write_manifest(out_dir / "manifest.txt", cfg, workers, results, checks)
    if not all(checks.values()):
        failed = ",".join(name for name, ok in checks.items() if not ok)
        print(f"error: invariant: checks failed: {failed}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
