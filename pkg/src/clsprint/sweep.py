"""Run orchestration: single runs, parameter sweeps and mesh-convergence studies."""

from __future__ import annotations

import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import OUTPUT_DIR_ENV, WORKERS_ENV, ConfigError, RunConfig
from .diagnostics import DiagnosticsRecord, SteadyStateDetector, conservation_error
from .flow import SolverDivergence, plane_poiseuille_reference
from .io import write_diagnostics_csv, write_json, write_table_csv, write_vtk
from .levelset import LevelSetInstability, area_of_indicator, epsilon_ref
from .scenario import build_benchmark, build_deposition, nozzle_layout
from .simulation import Simulation

log = logging.getLogger(__name__)


class RunFailure(RuntimeError):
    """A run stopped on a solver or level-set failure; the state was dumped."""

    def __init__(self, cause: Exception, dump: Path | None):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.cause = cause
        self.dump = dump


def output_root(config: RunConfig) -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV) or config.output_dir)


def build_case(config: RunConfig):
    """Initialized case with the run's level-set parameters applied."""
    if config.case == "deposition":
        kw = {"flow_config": config.flow, "duration": config.duration}
        case = build_deposition(config.scenario, config.grid_target, **kw)
        params = config.levelset_params(case.grid)
        if params is not None:
            # the initial profile depends on epsilon
            case = build_deposition(config.scenario, config.grid_target, params=params, **kw)
        return case
    case = build_benchmark(config.benchmark, config.grid_target)
    if config.flow is not None and case.flow_config is not None:
        # the benchmark keeps its own body force
        case.flow_config = replace(config.flow, gravity=case.flow_config.gravity)
    if config.duration is not None:
        case.duration = config.duration
    params = config.levelset_params(case.grid)
    if params is not None:
        case.params = params
    return case


@dataclass
class RunOutcome:
    record: DiagnosticsRecord
    summary: dict
    directory: Path


def _oracle_checks(case, sim: Simulation) -> dict:
    f, g, o = case.fields, case.grid, case.oracle
    out = {}
    if case.kind == "equilibrium":
        out["max_profile_deviation"] = float(np.abs(f.phi - o["profile"](o["distance"])).max())
    elif case.kind == "plane_poiseuille":
        pin, pout = f.p[0].mean(), f.p[-1].mean()
        L = g.extent[0]
        dp = (pin - pout) * L / (L - g.dx)
        out["delta_p"] = float(dp)
        out["delta_p_ref"] = o["delta_p"]
        out["delta_p_rel_error"] = float(abs(dp - o["delta_p"]) / o["delta_p"])
    elif case.kind == "hydrostatic":
        out["p_max"] = float(f.p.max())
        out["p_max_ref"] = o["p_max"]
    if "area" in o:
        a = area_of_indicator(f.phi, g)
        out["area"] = a
        out["area_ref"] = o["area"]
        out["area_rel_error"] = (a - o["area"]) / o["area"]
    if "phi_sum" in o:
        out["phi_sum_rel_drift"] = float((f.phi.sum() - o["phi_sum"]) / o["phi_sum"])
    return out


def run_single(config: RunConfig, directory: str | Path | None = None, write: bool = True) -> RunOutcome:
    """Run one case to its end (or steady state) and write its artifacts.

    Deterministic: identical configurations give identical CSV and summary
    files; wall-clock timings go to a separate ``timing.json``.
    """
    t_start = time.perf_counter()
    case = build_case(config)
    sim = Simulation(case, flow_dt=config.flow_dt, cfl_adv=config.cfl_adv, cfl_diff=config.cfl_diff)
    out_dir = Path(directory) if directory is not None else output_root(config) / config.name
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)

    snapshots = [0]

    def on_sample(s: Simulation, rec: DiagnosticsRecord):
        if write and config.snapshot_every and len(records) % config.snapshot_every == 0:
            write_vtk(out_dir / f"fields_{snapshots[0]:04d}.vtk", s.grid, s.fields, f"t={s.t!r}")
            snapshots[0] += 1

    records: list[DiagnosticsRecord] = []

    def collect(s, rec):
        records.append(rec)
        on_sample(s, rec)

    steady = SteadyStateDetector(config.steady_window, config.steady_tol) if case.kind == "deposition" else None
    try:
        result = sim.run(sample_interval=config.sample_interval, steady=steady, on_sample=collect,
                         stop_when_steady=config.stop_when_steady)
    except (SolverDivergence, LevelSetInstability) as exc:
        dump = None
        if write:
            dump = out_dir / "fields_failed.vtk"
            write_vtk(dump, sim.grid, sim.fields, f"failed at t={sim.t!r}")
            write_json(out_dir / "failure.json", {"time": sim.t, "error": str(exc),
                                                  "residuals": getattr(exc, "residuals", None)})
        raise RunFailure(exc, dump) from exc

    final = records[-1] if records else sim.measure()
    if case.kind == "deposition":
        sc = config.scenario
        lay = nozzle_layout(sc, case.grid)
        meshed_length = case.grid.extent[1] - lay["y_tip"]
        final.delta_P_ref = plane_poiseuille_reference(sc.props.mu1, meshed_length, sc.q, sc.D)
    p = sim.params
    summary = {
        "config": config.describe(),
        "grid": case.grid.describe(),
        "levelset": {"epsilon_m": p.epsilon, "gamma_m_per_s": p.gamma,
                     "epsilon_f": p.epsilon / epsilon_ref(case.grid),
                     "epsilon_ref_m": epsilon_ref(case.grid)},
        "final": final.to_dict(),
        "steady": result.steady_time is not None,
        "steady_time": result.steady_time,
        "final_time": result.final_time,
        "steps": len(result.steps),
        "levelset_substeps": int(sum(s.substeps for s in result.steps)),
        "max_divergence": max((s.max_div for s in result.steps), default=0.0),
        "phi_min": min((s.phi_min for s in result.steps), default=float("nan")),
        "phi_max": max((s.phi_max for s in result.steps), default=float("nan")),
        "oracle": _oracle_checks(case, sim),
    }
    if write:
        write_diagnostics_csv(out_dir / "diagnostics.csv", records)
        write_table_csv(out_dir / "steps.csv", [
            {"time": s.time, "dt": s.dt, "P_max": s.P_max, "max_div": s.max_div,
             "iterations": sum(s.iterations.values()), "phi_sum": s.phi_sum,
             "phi_min": s.phi_min, "phi_max": s.phi_max, "substeps": s.substeps}
            for s in result.steps])
        write_json(out_dir / "summary.json", summary)
        write_vtk(out_dir / f"fields_{snapshots[0]:04d}.vtk", sim.grid, sim.fields, f"t={sim.t!r}")
        write_json(out_dir / "timing.json", {"wall_clock_s": time.perf_counter() - t_start})
    return RunOutcome(final, summary, out_dir)


# -- sweeps -----------------------------------------------------------------

AXES = ("gamma_list", "epsilon_f_list", "grid_target_list", "delta_z_over_D_list", "speed_ratio_list")


@dataclass
class SweepPlan:
    """Cartesian product of the given axes around a base configuration.

    Axes left as None are not swept; an axis given as an empty list is an
    error.  ``speed_ratio`` is ``v_bar_x / v_p`` (``v_p`` held fixed).
    """

    base: RunConfig
    gamma_list: list[float] | None = None
    epsilon_f_list: list[float] | None = None
    grid_target_list: list[float] | None = None
    delta_z_over_D_list: list[float] | None = None
    speed_ratio_list: list[float] | None = None
    workers: int = 1

    def __post_init__(self):
        given = {a: getattr(self, a) for a in AXES if getattr(self, a) is not None}
        if not given:
            raise ConfigError("a sweep needs at least one axis")
        for name, values in given.items():
            if len(values) == 0:
                raise ConfigError(f"sweep axis {name} is empty")
        if (self.delta_z_over_D_list or self.speed_ratio_list) and self.base.scenario is None:
            raise ConfigError("printing-condition axes need a deposition base configuration")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def axes(self) -> dict[str, list]:
        return {a[:-5]: list(getattr(self, a)) for a in AXES if getattr(self, a) is not None}

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.axes.values())

    def points(self) -> list[dict]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*self.axes.values())]

    def config_for(self, point: dict) -> RunConfig:
        cfg = self.base
        changes = {}
        if "gamma" in point:
            changes["gamma"] = point["gamma"]
        if "epsilon_f" in point:
            changes["epsilon_f"] = point["epsilon_f"]
            changes["epsilon"] = None
        if "grid_target" in point:
            changes["grid_target"] = point["grid_target"]
        sc = cfg.scenario
        if sc is not None and ("delta_z_over_D" in point or "speed_ratio" in point):
            sc_changes = {}
            if "delta_z_over_D" in point:
                sc_changes["delta_z"] = point["delta_z_over_D"] * sc.D
            if "speed_ratio" in point:
                sc_changes["v_bar_x"] = point["speed_ratio"] * sc.v_p
            changes["scenario"] = replace(sc, **sc_changes)
        label = "_".join(f"{k}={v:g}" for k, v in point.items())
        changes["name"] = f"{cfg.name}/{label}"
        return replace(cfg, **changes)


def _run_point(args) -> dict:
    cfg, point, directory = args
    row = dict(point)
    t0 = time.perf_counter()
    try:
        out = run_single(cfg, directory)
        rec = out.record
        row.update({"status": "ok", "error": "", **{k: v for k, v in rec.to_dict().items()}})
        row["steady"] = out.summary["steady"]
        row["epsilon_m"] = out.summary["levelset"]["epsilon_m"]
        row["cells"] = int(np.prod(out.summary["grid"]["shape"]))
    except (RunFailure, ConfigError, ValueError) as exc:
        row.update({"status": "failed", "error": str(exc)})
    row["wall_clock_s"] = time.perf_counter() - t0
    return row


SWEEP_COLUMNS = ["status", "time", "A_s", "A_f", "delta_A_pct", "P_max", "ink_volume", "W", "H",
                 "WH_ratio", "steady", "epsilon_m", "cells", "error"]


def resolve_workers(requested: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            requested = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    if requested < 1:
        raise ConfigError("workers must be >= 1")
    return requested


def run_sweep(plan: SweepPlan, directory: str | Path | None = None) -> list[dict]:
    """Run every point (in parallel processes) and write ``sweep.csv`` ordered by axes.

    Failed points are recorded with their error; the sweep raises only when
    every point fails.
    """
    root = Path(directory) if directory is not None else output_root(plan.base) / plan.base.name
    root.mkdir(parents=True, exist_ok=True)
    points = plan.points()
    log.info("sweep over %s: %d points", list(plan.axes), plan.size)
    jobs = [(plan.config_for(p), p, root / "_".join(f"{k}={v:g}" for k, v in p.items())) for p in points]
    workers = min(resolve_workers(plan.workers), len(jobs))
    if workers == 1:
        rows = [_run_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_point, jobs))
    columns = list(plan.axes) + SWEEP_COLUMNS
    write_table_csv(root / "sweep.csv", rows, columns)
    if all(r["status"] != "ok" for r in rows):
        raise RunFailure(RuntimeError("every sweep point failed"), None)
    return rows


# -- mesh convergence -------------------------------------------------------


def run_mesh_convergence(base: RunConfig, grid_target_list: list[float], gammas: list[float] | None = None,
                         epsilon_mode: str = "fixed", directory: str | Path | None = None,
                         workers: int = 1) -> list[dict]:
    """Refine the grid over at least three levels, per gamma value.

    ``epsilon_mode="fixed"`` holds epsilon in metres (taken from the base
    configuration, or ``epsilon_f * epsilon_ref`` of the coarsest grid);
    ``"scaled"`` recomputes ``epsilon_f * epsilon_ref`` on every grid.
    """
    if len(grid_target_list) < 3:
        raise ConfigError("mesh convergence needs at least three grid levels")
    if epsilon_mode not in ("fixed", "scaled"):
        raise ConfigError("epsilon_mode must be 'fixed' or 'scaled'")
    levels = sorted(grid_target_list, reverse=True)
    gammas = list(gammas) if gammas else [base.gamma]
    root = Path(directory) if directory is not None else output_root(base) / base.name
    root.mkdir(parents=True, exist_ok=True)

    eps_fixed = base.epsilon
    if epsilon_mode == "fixed" and eps_fixed is None:
        coarse = build_case(replace(base, grid_target=levels[0], epsilon=None))
        f = base.epsilon_f if base.epsilon_f is not None else 1.0
        eps_fixed = f * epsilon_ref(coarse.grid)

    jobs = []
    for gamma in gammas:
        for k, h in enumerate(levels):
            changes = {"grid_target": h, "name": f"{base.name}/level{k}"}
            if gamma is not None:
                changes["gamma"] = gamma
            if epsilon_mode == "fixed" and (base.case == "deposition" or base.epsilon is not None
                                            or base.epsilon_f is not None):
                changes["epsilon"] = eps_fixed
                changes["epsilon_f"] = None
            cfg = replace(base, **changes)
            label = f"level{k}" + (f"_gamma={gamma:g}" if gamma is not None else "")
            jobs.append((cfg, {"level": k, "grid_target": h, "gamma": gamma}, root / label))
    workers = min(resolve_workers(workers), len(jobs))
    if workers == 1:
        rows = [_run_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_point, jobs))
    for row in rows:
        row["epsilon_mode"] = epsilon_mode
        if row.get("status") == "ok" and base.case == "benchmark" and base.benchmark.kind == "plane_poiseuille":
            summary = _read_summary(root, row)
            if summary:
                row["delta_p_ref"] = summary["oracle"]["delta_p_ref"]
                row["P_max_rel_error"] = abs(row["P_max"] - row["delta_p_ref"]) / row["delta_p_ref"]
    columns = ["level", "grid_target", "gamma", "cells", "epsilon_m", "epsilon_mode", "status", "A_s",
               "A_f", "delta_A_pct", "P_max", "delta_p_ref", "P_max_rel_error", "wall_clock_s", "error"]
    write_table_csv(root / "convergence.csv", rows, columns)
    return rows


def _read_summary(root: Path, row: dict) -> dict | None:
    label = f"level{row['level']}" + (f"_gamma={row['gamma']:g}" if row.get("gamma") is not None else "")
    path = root / label / "summary.json"
    if not path.exists():
        return None
    with open(path) as fh:
        return json.load(fh)
