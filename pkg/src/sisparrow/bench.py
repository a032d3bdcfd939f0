"""Monte-Carlo experiment runner.

For every sweep point the runner simulates ``trials`` independent
measurement sets (Philox substreams keyed by ``(seed, point, trial)``),
runs the requested estimation methods, and aggregates permutation-matched
RMSE, iteration counts and wall-clock times.  Cramér-Rao reference columns
(partly and fully calibrated) are attached to every row.

Solver exceptions exclude the trial from that method's RMSE and are
counted; recoveries returning the wrong source count are scored at the
worst-case wrap-around distance unless ``drop_incomplete`` is set.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import ExperimentPlan
from .crb import stochastic_crb
from .geometry import build_shift_structure
from .recovery import match_and_rmse, mi_md_esprit, music_2d
from .simulate import default_loading, diagonal_load, simulate
from .solvers import Objective, lambda_auto, solve_admm, solve_sca

__all__ = ["run_experiment", "emit_plotdata", "BenchResult"]

RESULT_FIELDS = ["sweep_axis", "sweep_value", "method", "rmse", "n_trials",
                 "n_failures", "n_flagged", "mean_iterations",
                 "mean_inner_iterations", "mean_time_s", "crb_partly", "crb_fully"]


@dataclass
class BenchResult:
    rows: list
    manifest: dict
    out_dir: Path


@dataclass
class _TrialOutcome:
    estimates: dict
    times: dict
    iterations: dict
    inner_iterations: dict
    errors: dict


def _solver_objective(algorithm, meas, lam, structure, geom):
    """Effective covariance for one solver run; the splitting solver needs a
    strictly PD matrix, so undersampled covariances get diagonal loading."""
    R = meas.R_hat
    selection = None
    if len(meas.observable_indices) < geom.M:
        selection = meas.observable_indices
    if algorithm == "admm" and meas.snapshots < R.shape[0]:
        R = diagonal_load(R, default_loading(R))
    return Objective(R=R, lam=lam, structure=structure, selection=selection)


def run_single_trial(geom, structure, scenario, methods, algorithm, lam,
                     solver_cfg, recovery_opts, crb_fully, rng) -> _TrialOutcome:
    """All requested methods on one simulated measurement set."""
    meas = simulate(geom, scenario, rng)
    ns = scenario.n_sources
    music_grid = recovery_opts.get("music_grid")  # None: aperture-sized
    if music_grid is not None:
        music_grid = (int(music_grid),) * 2
    dml_grid = int(recovery_opts.get("dml_grid", 4096))
    refine_floor = float(recovery_opts.get("refine_floor", 1e-7))
    crb_ref = crb_fully ** 2 if crb_fully and np.isfinite(crb_fully) else None

    needed = set()
    if "sisparrow_admm" in methods:
        needed.add("admm")
    if "sisparrow_sca" in methods:
        needed.add("sca")
    if "music_sisparrow" in methods:
        needed.add(algorithm)

    reports, solve_times, solve_errors = {}, {}, {}
    for alg in needed:
        t0 = time.perf_counter()
        try:
            obj = _solver_objective(alg, meas, lam, structure, geom)
            reports[alg] = solve_admm(obj, solver_cfg) if alg == "admm" \
                else solve_sca(obj, solver_cfg)
        except Exception as exc:
            solve_errors[alg] = f"{type(exc).__name__}: {exc}"
        solve_times[alg] = time.perf_counter() - t0

    out = _TrialOutcome({}, {}, {}, {}, {})

    def record(method, alg, recover):
        if alg is not None and alg not in reports:
            out.estimates[method] = None
            out.errors[method] = solve_errors.get(alg, "solver unavailable")
            out.times[method] = solve_times.get(alg, 0.0)
            return
        t0 = time.perf_counter()
        try:
            est = recover()
        except Exception as exc:
            out.estimates[method] = None
            out.errors[method] = f"{type(exc).__name__}: {exc}"
            out.times[method] = (time.perf_counter() - t0
                                 + (solve_times.get(alg, 0.0) if alg else 0.0))
            return
        out.estimates[method] = est
        out.times[method] = (time.perf_counter() - t0
                             + (solve_times.get(alg, 0.0) if alg else 0.0))
        if alg is not None:
            out.iterations[method] = reports[alg].iterations
            out.inner_iterations[method] = reports[alg].inner_iterations

    full_R = None
    if len(meas.observable_indices) == geom.M:
        full_R = meas.R_hat

    for method in methods:
        if method == "sisparrow_admm":
            record(method, "admm",
                   lambda: mi_md_esprit(reports["admm"].Q, geom, ns, dml_grid))
        elif method == "sisparrow_sca":
            record(method, "sca",
                   lambda: mi_md_esprit(reports["sca"].Q, geom, ns, dml_grid))
        elif method == "music_sisparrow":
            record(method, algorithm,
                   lambda: music_2d(reports[algorithm].Q, geom, ns,
                                    music_grid, crb_ref, refine_floor))
        elif method == "esprit_cov":
            if full_R is None:
                out.estimates[method] = None
                out.errors[method] = "baseline requires full observability"
                out.times[method] = 0.0
            else:
                record(method, None, lambda: mi_md_esprit(full_R, geom, ns, dml_grid))
        elif method == "music_cov":
            if full_R is None:
                out.estimates[method] = None
                out.errors[method] = "baseline requires full observability"
                out.times[method] = 0.0
            else:
                record(method, None,
                       lambda: music_2d(full_R, geom, ns, music_grid,
                                        crb_ref, refine_floor))
    return out


def _trial_job(args):
    (geom, structure, scenario, methods, algorithm, lam, solver_cfg,
     recovery_opts, crb_fully, seed, point_index, trial) = args
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(point_index, trial))))
    return run_single_trial(geom, structure, scenario, methods, algorithm, lam,
                            solver_cfg, recovery_opts, crb_fully, rng)


def run_experiment(plan: ExperimentPlan, out_dir, workers: int = 1) -> BenchResult:
    """Run the sweep and write ``results.csv``, plot-ready CSV files and a
    reproduction manifest into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    drop_incomplete = bool(plan.recovery.get("drop_incomplete", False))
    rows = []
    manifest_points = []

    for point_index, value in enumerate(plan.sweep_values):
        geom, scenario, algorithm, lam_spec, solver_cfg = plan.resolve(value)
        structure = build_shift_structure(geom)
        lam = lambda_auto(np.sqrt(scenario.noise_var), geom.M, scenario.snapshots) \
            if lam_spec == "auto" else float(lam_spec)

        crb_partly = crb_fully = float("nan")
        try:
            crb_partly = stochastic_crb(geom, scenario.mu_x, scenario.mu_y,
                                        scenario.P, scenario.noise_var,
                                        scenario.snapshots, "partly").rmse_bound
            crb_fully = stochastic_crb(geom, scenario.mu_x, scenario.mu_y,
                                       scenario.P, scenario.noise_var,
                                       scenario.snapshots, "fully").rmse_bound
        except np.linalg.LinAlgError:
            pass

        jobs = [(geom, structure, scenario, plan.methods, algorithm, lam,
                 solver_cfg, plan.recovery, crb_fully, plan.seed, point_index, t)
                for t in range(plan.trials)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_trial_job, jobs))
        else:
            outcomes = [_trial_job(job) for job in jobs]

        timing = {}
        for method in plan.methods:
            estimates = [o.estimates.get(method) for o in outcomes]
            failures = sum(1 for o in outcomes if method in o.errors)
            scored = [e for e in estimates if e is not None]
            res = match_and_rmse(scored, scenario.mu_x, scenario.mu_y,
                                 drop_incomplete=drop_incomplete)
            times = [o.times.get(method, 0.0) for o in outcomes]
            iters = [o.iterations[method] for o in outcomes if method in o.iterations]
            inner = [o.inner_iterations[method] for o in outcomes
                     if method in o.inner_iterations]
            rows.append({
                "sweep_axis": plan.sweep_axis,
                "sweep_value": value,
                "method": method,
                "rmse": res.rmse,
                "n_trials": len(outcomes),
                "n_failures": failures,
                "n_flagged": res.n_flagged,
                "mean_iterations": float(np.mean(iters)) if iters else 0.0,
                "mean_inner_iterations": float(np.mean(inner)) if inner else 0.0,
                "mean_time_s": float(np.mean(times)),
                "crb_partly": crb_partly,
                "crb_fully": crb_fully,
            })
            timing[method] = {"mean_s": float(np.mean(times)),
                              "total_s": float(np.sum(times))}
        manifest_points.append({
            "value": value,
            "lambda": lam,
            "sensors": geom.M,
            "trial_seeds": [[plan.seed, point_index, t] for t in range(plan.trials)],
            "timing": timing,
            "errors": {m: [o.errors[m] for o in outcomes if m in o.errors]
                       for m in plan.methods},
        })

    manifest = {
        "plan": plan.to_dict(),
        "version": __version__,
        "kernel_backend": kernels.backend(),
        "seed_scheme": "Philox(SeedSequence(seed, spawn_key=(point_index, trial)))",
        "workers": workers,
        "points": manifest_points,
    }
    _write_results_csv(rows, out_dir / "results.csv")
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=_json_default)
    emit_plotdata(rows, plan, out_dir)
    return BenchResult(rows=rows, manifest=manifest, out_dir=out_dir)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_results_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in RESULT_FIELDS})


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def emit_plotdata(rows, plan: ExperimentPlan, out_dir) -> list[Path]:
    """Per-figure CSV files: one x column, one column per method, and the
    two CRB reference columns."""
    out_dir = Path(out_dir)
    written = []
    if plan.sweep_axis == "snr_db":
        written.append(_pivot_csv(rows, plan, out_dir / "rmse_vs_snr.csv",
                                  "snr_db", "rmse"))
    elif plan.sweep_axis == "snapshots":
        written.append(_pivot_csv(rows, plan, out_dir / "rmse_vs_n.csv",
                                  "snapshots", "rmse"))
        written.append(_pivot_csv(rows, plan, out_dir / "runtime_vs_n.csv",
                                  "snapshots", "mean_time_s"))
    elif plan.sweep_axis == "Lx":
        written.append(_pivot_csv(rows, plan, out_dir / "runtime_vs_m.csv",
                                  "sensors", "mean_time_s"))
    return written


def _pivot_csv(rows, plan, path, x_name, value_field) -> Path:
    header = [x_name] + list(plan.methods) + ["crb_partly", "crb_fully"]
    by_value = {}
    for row in rows:
        by_value.setdefault(row["sweep_value"], {})[row["method"]] = row
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for value in plan.sweep_values:
            point = by_value.get(value, {})
            if not point:
                continue
            if x_name == "sensors":
                geom, *_ = plan.resolve(value)
                x = geom.M
            else:
                x = value
            any_row = next(iter(point.values()))
            line = [x] + [_fmt(point[m][value_field]) if m in point else ""
                          for m in plan.methods]
            line += [_fmt(any_row["crb_partly"]), _fmt(any_row["crb_fully"])]
            writer.writerow(line)
    return path
