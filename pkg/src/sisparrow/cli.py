"""Command-line interface.

Subcommands::

    sisparrow bench    --config plan.toml --out dir/      full Monte-Carlo sweep
    sisparrow simulate --config plan.toml --out meas.json one measurement set
    sisparrow solve    --config plan.toml --input meas.json --out report.json
    sisparrow recover  --config plan.toml --input qhat.json --method esprit --ns 2
    sisparrow crb      --config plan.toml [--out crb.csv]

The config file is shared: single-shot commands use scalar scenario values,
``bench`` and ``crb`` iterate over the sweep axis.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .bench import run_experiment
from .config import (ConfigError, geometry_from_config, load_plan, plan_from_dict,
                     scenario_from_config, solver_from_config)
from .crb import stochastic_crb
from .geometry import build_shift_structure
from .recovery import mi_md_esprit, music_2d
from .simulate import (default_loading, diagonal_load, sample_covariance,
                       simulate, snr_db_to_noise_var)
from .solvers import Objective, lambda_auto, solve_admm, solve_sca


def _load_sections(path):
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _matrix_to_json(Z):
    return {"real": np.asarray(Z).real.tolist(), "imag": np.asarray(Z).imag.tolist()}


def _matrix_from_json(d):
    return np.asarray(d["real"], dtype=float) + 1j * np.asarray(d["imag"], dtype=float)


def cmd_bench(args):
    plan = load_plan(args.config)
    if args.trials is not None:
        from dataclasses import replace
        plan = replace(plan, trials=args.trials)
    result = run_experiment(plan, args.out, workers=args.workers)
    print(f"wrote {len(result.rows)} result rows to {result.out_dir}")
    return 0


def cmd_simulate(args):
    raw = _load_sections(args.config)
    geom = geometry_from_config(raw.get("geometry", {}))
    scenario = scenario_from_config(raw.get("scenario", {}))
    meas = simulate(geom, scenario)
    payload = {
        "Y": _matrix_to_json(meas.Y),
        "observable": meas.observable_indices.tolist(),
        "noise_var": meas.noise_var,
        "snapshots": meas.snapshots,
        "seed": scenario.seed,
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh)
    print(f"wrote {meas.Y.shape[0]}x{meas.Y.shape[1]} snapshots to {args.out}")
    return 0


def cmd_solve(args):
    raw = _load_sections(args.config)
    geom = geometry_from_config(raw.get("geometry", {}))
    algorithm, lam_spec, solver_cfg = solver_from_config(raw.get("solver", {}))
    with open(args.input) as fh:
        meas = json.load(fh)
    Y = _matrix_from_json(meas["Y"])
    observable = np.asarray(meas.get("observable", np.arange(geom.M)), dtype=np.intp)
    R = sample_covariance(Y[observable])
    n = Y.shape[1]
    if lam_spec == "auto":
        noise_var = meas.get("noise_var")
        if noise_var is None:
            raise ConfigError("lambda = \"auto\" needs noise_var in the input")
        lam = lambda_auto(np.sqrt(noise_var), geom.M, n)
    else:
        lam = float(lam_spec)
    if algorithm == "admm" and n < R.shape[0]:
        R = diagonal_load(R, default_loading(R))
    structure = build_shift_structure(geom)
    selection = observable if len(observable) < geom.M else None
    obj = Objective(R=R, lam=lam, structure=structure, selection=selection)
    report = solve_admm(obj, solver_cfg) if algorithm == "admm" else solve_sca(obj, solver_cfg)
    with open(args.out, "w") as fh:
        fh.write(report.to_json())
    print(f"{report.method}: converged={report.converged} "
          f"iterations={report.iterations} objective={report.objective:.6g}")
    return 0


def cmd_recover(args):
    raw = _load_sections(args.config)
    geom = geometry_from_config(raw.get("geometry", {}))
    with open(args.input) as fh:
        payload = json.load(fh)
    Q = _matrix_from_json(payload["Q"] if "Q" in payload else payload)
    if args.method == "esprit":
        est = mi_md_esprit(Q, geom, args.ns)
    else:
        est = music_2d(Q, geom, args.ns)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["trial", "source", "mu_x", "mu_y", "method"])
        for i, (mx, my) in enumerate(est.pairs):
            writer.writerow([0, i, repr(mx), repr(my), est.method])
    finally:
        if args.out:
            out.close()
    return 0


def cmd_crb(args):
    raw = _load_sections(args.config)
    try:
        plan = plan_from_dict(raw)
        points = [(plan.resolve(v), v) for v in plan.sweep_values]
        sweep_axis = plan.sweep_axis
    except ConfigError:
        geom = geometry_from_config(raw.get("geometry", {}))
        scenario = scenario_from_config(raw.get("scenario", {}))
        points = [((geom, scenario, None, None, None), None)]
        sweep_axis = None
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["snr_db", "snapshots", "crb_partly", "crb_fully"])
        for (geom, scenario, *_), value in points:
            snr_db = -10.0 * np.log10(scenario.noise_var)
            partly = stochastic_crb(geom, scenario.mu_x, scenario.mu_y, scenario.P,
                                    scenario.noise_var, scenario.snapshots, "partly")
            fully = stochastic_crb(geom, scenario.mu_x, scenario.mu_y, scenario.P,
                                   scenario.noise_var, scenario.snapshots, "fully")
            writer.writerow([repr(float(snr_db)), scenario.snapshots,
                             repr(partly.rmse_bound), repr(fully.rmse_bound)])
    finally:
        if args.out:
            out.close()
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="sisparrow",
                                     description="Gridless 2D DOA estimation benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="run a Monte-Carlo sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--trials", type=int, default=None,
                   help="override the configured trial count")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate", help="write one measurement set as JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="reconstruct the structured matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("recover", help="frequencies from a reconstruction")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=["esprit", "music"], required=True)
    p.add_argument("--ns", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("crb", help="Cramér-Rao reference curves as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_crb)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
