"""Experiment configuration: TOML plan files.

A plan has four sections.  ``[geometry]`` and ``[scenario]`` describe the
array and the sources, ``[solver]`` the optimizer, ``[experiment]`` the
method list and optional recovery knobs.  Exactly one of
``scenario.snr_db``, ``scenario.snapshots`` or ``geometry.Lx`` may be a
list; it becomes the sweep axis.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import ArrayGeometry
from .simulate import SourceScenario, snr_db_to_noise_var
from .solvers import SolverConfig

__all__ = ["ConfigError", "ExperimentPlan", "load_plan", "geometry_from_config",
           "scenario_from_config", "solver_from_config", "KNOWN_METHODS"]

KNOWN_METHODS = ("sisparrow_admm", "sisparrow_sca", "esprit_cov", "music_cov",
                 "music_sisparrow")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def geometry_from_config(cfg: dict, Lx: int | None = None) -> ArrayGeometry:
    """Build the array from a ``[geometry]`` section.

    ``delta_*`` default to half-wavelength spacing; ``Delta_*`` may be the
    string ``"unknown"``.  ``Lx`` overrides the section value (sweep use).
    """
    try:
        px, py = int(cfg["Px"]), int(cfg["Py"])
        lx = int(Lx if Lx is not None else cfg["Lx"])
        ly = int(cfg["Ly"])
    except KeyError as exc:
        raise ConfigError(f"geometry section missing key {exc}") from exc

    def positions(key, n):
        val = cfg.get(key)
        if val is None:
            return np.arange(n, dtype=float)
        return np.asarray(val, dtype=float)

    def displacements(key, n):
        val = cfg.get(key)
        if val is None or (isinstance(val, str) and val.lower() == "unknown"):
            return None
        return np.asarray(val, dtype=float)

    try:
        return ArrayGeometry(
            Px=px, Py=py, Lx=lx, Ly=ly,
            delta_x=positions("delta_x", lx), delta_y=positions("delta_y", ly),
            Delta_x=displacements("Delta_x", px), Delta_y=displacements("Delta_y", py),
            failed_sensors=tuple(cfg.get("failed_sensors", ())),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def scenario_from_config(cfg: dict, snr_db: float | None = None,
                         snapshots: int | None = None) -> SourceScenario:
    """Build the source scenario; scalar overrides pin a sweep point."""
    try:
        mu_x = cfg["mu_x"]
        mu_y = cfg["mu_y"]
    except KeyError as exc:
        raise ConfigError(f"scenario section missing key {exc}") from exc
    snr = snr_db if snr_db is not None else cfg.get("snr_db", 0.0)
    n = int(snapshots if snapshots is not None else cfg.get("snapshots", 1))
    if isinstance(snr, list) or isinstance(n, list):
        raise ConfigError("sweep lists must be resolved before building a scenario")
    corr = cfg.get("corr", 0.0)
    if isinstance(corr, (list, tuple)):
        corr = complex(corr[0], corr[1])
    try:
        return SourceScenario.pairwise(
            mu_x=np.asarray(mu_x, dtype=float), mu_y=np.asarray(mu_y, dtype=float),
            corr=corr, snapshots=n, noise_var=snr_db_to_noise_var(float(snr)),
            seed=int(cfg.get("seed", 0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def solver_from_config(cfg: dict) -> tuple[str, object, SolverConfig]:
    """Returns ``(algorithm, lam_spec, SolverConfig)`` where ``lam_spec`` is
    the float regularization or the string "auto"."""
    algorithm = cfg.get("algorithm", "admm")
    if algorithm not in ("admm", "sca"):
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    lam_spec = cfg.get("lambda", "auto")
    if isinstance(lam_spec, str):
        if lam_spec != "auto":
            raise ConfigError("lambda must be a positive number or \"auto\"")
    elif lam_spec <= 0:
        raise ConfigError("lambda must be positive")
    kwargs = {}
    for key in ("eps_abs", "eps_rel", "eta", "rho0", "kappa", "t_max",
                "max_outer", "max_inner"):
        if key in cfg:
            kwargs[key] = cfg[key]
    if "tau" in cfg:
        kwargs["tau_incr"] = kwargs["tau_decr"] = cfg["tau"]
    try:
        return algorithm, lam_spec, SolverConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class ExperimentPlan:
    """A resolved sweep plan plus raw sections for per-point materialization."""

    geometry: dict
    scenario: dict
    solver: dict
    methods: tuple
    trials: int
    seed: int
    sweep_axis: str
    sweep_values: tuple
    recovery: dict = field(default_factory=dict)

    def resolve(self, value):
        """Geometry, scenario, solver settings at one sweep point."""
        lx = value if self.sweep_axis == "Lx" else None
        snr = value if self.sweep_axis == "snr_db" else None
        snap = value if self.sweep_axis == "snapshots" else None
        geom = geometry_from_config(self.geometry, Lx=lx)
        scenario = scenario_from_config(self.scenario, snr_db=snr, snapshots=snap)
        algorithm, lam_spec, solver_cfg = solver_from_config(self.solver)
        return geom, scenario, algorithm, lam_spec, solver_cfg

    def to_dict(self) -> dict:
        return {
            "geometry": dict(self.geometry),
            "scenario": dict(self.scenario),
            "solver": dict(self.solver),
            "experiment": {"methods": list(self.methods), "trials": self.trials,
                           "seed": self.seed, "sweep_axis": self.sweep_axis,
                           "sweep_values": list(self.sweep_values),
                           **dict(self.recovery)},
        }


def load_plan(path) -> ExperimentPlan:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return plan_from_dict(raw)


def plan_from_dict(raw: dict) -> ExperimentPlan:
    geometry = dict(raw.get("geometry", {}))
    scenario = dict(raw.get("scenario", {}))
    solver = dict(raw.get("solver", {}))
    experiment = dict(raw.get("experiment", {}))

    sweeps = []
    if isinstance(scenario.get("snr_db"), list):
        sweeps.append(("snr_db", scenario["snr_db"]))
    if isinstance(scenario.get("snapshots"), list):
        sweeps.append(("snapshots", scenario["snapshots"]))
    if isinstance(geometry.get("Lx"), list):
        sweeps.append(("Lx", geometry["Lx"]))
    if len(sweeps) != 1:
        raise ConfigError("exactly one of scenario.snr_db, scenario.snapshots "
                          "or geometry.Lx must be a list (the sweep axis)")
    sweep_axis, sweep_values = sweeps[0]

    methods = tuple(experiment.get("methods", ()))
    if not methods:
        raise ConfigError("experiment.methods must be non-empty")
    for m in methods:
        if m not in KNOWN_METHODS:
            raise ConfigError(f"unknown method {m!r}; known: {KNOWN_METHODS}")
    trials = int(experiment.get("trials", scenario.get("trials", 1)))
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    seed = int(experiment.get("seed", scenario.get("seed", 0)))
    recovery = {k: experiment[k] for k in
                ("music_grid", "dml_grid", "refine_floor", "drop_incomplete")
                if k in experiment}

    plan = ExperimentPlan(geometry=geometry, scenario=scenario, solver=solver,
                          methods=methods, trials=trials, seed=seed,
                          sweep_axis=sweep_axis, sweep_values=tuple(sweep_values),
                          recovery=recovery)
    for value in plan.sweep_values:  # fail fast on malformed sections
        plan.resolve(value)
    return plan
