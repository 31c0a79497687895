"""Command-line front end: ``run``, ``sweep``, ``converge`` and ``tables``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .config import ConfigError, load_config, load_toml, parse_config, quantity
from .flow import SolverDivergence
from .levelset import LevelSetInstability
from .sweep import RunFailure, SweepPlan, run_mesh_convergence, run_single, run_sweep
from .tables import EPSILON_EXAMPLES, graded_mesh_epsilon, pressure_reference_check, reproduce_tables

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_LEVELSET = 4
EXIT_FAILED = 5

log = logging.getLogger("clsprint")


def _plan_from_file(path: str, workers: int | None) -> SweepPlan:
    data = load_toml(path)
    sweep = data.get("sweep")
    if sweep is None:
        raise ConfigError(f"{path} has no [sweep] table")
    base = parse_config(data, name=path.rsplit("/", 1)[-1].rsplit(".", 1)[0])
    axes = {}
    kinds = {"gamma_list": "speed", "grid_target_list": "length"}
    for key, value in sweep.items():
        if key == "workers":
            continue
        if key not in ("gamma_list", "epsilon_f_list", "grid_target_list", "delta_z_over_D_list",
                       "speed_ratio_list"):
            raise ConfigError(f"unknown sweep key {key!r}")
        if not isinstance(value, list):
            raise ConfigError(f"sweep.{key} must be a list")
        if key in kinds:
            axes[key] = [quantity(v, kinds[key], f"sweep.{key}") for v in value]
        else:
            for v in value:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"sweep.{key} entries must be plain numbers")
            axes[key] = [float(v) for v in value]
    n_workers = workers if workers is not None else int(sweep.get("workers", 1))
    return SweepPlan(base, workers=n_workers, **axes)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.output:
        cfg = replace(cfg, output_dir=args.output)
    out = run_single(cfg)
    rec = out.record
    print(f"{cfg.name}: A_s={rec.A_s:.6g} A_f={rec.A_f:.6g} delta_A={rec.delta_A_pct:.4g}% "
          f"P_max={rec.P_max:.6g} Pa -> {out.directory}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    plan = _plan_from_file(args.plan, args.workers)
    if args.output:
        plan.base = replace(plan.base, output_dir=args.output)
    print(f"sweep: {plan.size} points over {', '.join(plan.axes)}")
    rows = run_sweep(plan)
    for row in rows:
        keys = ", ".join(f"{k}={row[k]:g}" for k in plan.axes)
        if row["status"] == "ok":
            print(f"  {keys}: delta_A={row['delta_A_pct']:.4g}%")
        else:
            print(f"  {keys}: FAILED ({row['error']})")
    return EXIT_OK


def _cmd_converge(args) -> int:
    cfg = load_config(args.config)
    if args.output:
        cfg = replace(cfg, output_dir=args.output)
    grids = [quantity(g, "length", "--grids") for g in args.grids]
    gammas = [quantity(g, "speed", "--gamma") for g in args.gamma] if args.gamma else None
    rows = run_mesh_convergence(cfg, grids, gammas, args.epsilon_mode, workers=args.workers or 1)
    for row in rows:
        if row["status"] != "ok":
            status = f"FAILED ({row['error']})"
        elif "P_max_rel_error" in row:
            status = f"P_max={row['P_max']:.6g} Pa, error vs analytic {100 * row['P_max_rel_error']:.3f}%"
        else:
            status = f"A_s={row['A_s']:.6g} delta_A={row['delta_A_pct']:.4g}% P_max={row['P_max']:.6g} Pa"
        gamma = f" gamma={row['gamma']:g} m/s" if row["gamma"] is not None else ""
        print(f"  level {row['level']} h={row['grid_target']:.4g} m{gamma}: {status}")
    return EXIT_OK


def _cmd_tables(args) -> int:
    rows = reproduce_tables()
    if args.format == "csv":
        cols = list(rows[0])
        print(",".join(cols))
        for r in rows:
            print(",".join(str(r[c]) for c in cols))
        return EXIT_OK
    print(f"{'table':>5} {'param':>9} {'value':>6} {'A_s':>7} {'pub dA%':>8} {'calc dA%':>9} {'check':>6}")
    for r in rows:
        note = "ok" if r["abs_diff"] <= 0.02 else "DIFF"
        if not r["consistent"]:
            note += "*"
        print(f"{r['table']:>5} {r['parameter']:>9} {r['value']:>6g} {r['A_s_1e-3mm2']:>7.2f} "
              f"{r['delta_A_published']:>8.2f} {r['delta_A_recomputed']:>9.3f} {note:>6}")
    print("* published error entries of these two rows are exchanged; checked against the recomputed pair")
    for m_max, f, eps in EPSILON_EXAMPLES:
        print(f"epsilon_ref = {m_max} mm, epsilon_f = {f}: epsilon = {graded_mesh_epsilon(m_max, f):.4g} mm "
              f"(published {eps})")
    pr = pressure_reference_check()
    print(f"pipe reference dP = {pr['reference_MPa']:.4f} MPa; published P_max "
          f"{min(pr['published_pmax_MPa']):.3f}-{max(pr['published_pmax_MPa']):.3f} MPa "
          f"(+{pr['max_excess_pct']:.2f}% max, within 5%: {pr['within_5pct']})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clsprint", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one configuration")
    r.add_argument("config")
    r.add_argument("--output", help="output directory (overrides the config file)")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run a parameter sweep described by a [sweep] table")
    s.add_argument("plan")
    s.add_argument("--workers", type=int)
    s.add_argument("--output")
    s.set_defaults(func=_cmd_sweep)

    c = sub.add_parser("converge", help="mesh-convergence study over at least three grids")
    c.add_argument("config")
    c.add_argument("--grids", nargs="+", required=True, help='cell sizes with units, e.g. "0.04 mm"')
    c.add_argument("--gamma", nargs="+", help='gamma values with units, e.g. "0.02 m/s"')
    c.add_argument("--epsilon-mode", choices=("fixed", "scaled"), default="fixed")
    c.add_argument("--workers", type=int)
    c.add_argument("--output")
    c.set_defaults(func=_cmd_converge)

    t = sub.add_parser("tables", help="recompute the published error columns")
    t.add_argument("--format", choices=("text", "csv"), default="text")
    t.set_defaults(func=_cmd_tables)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunFailure as exc:
        print(f"run failed: {exc}" + (f" (state dumped to {exc.dump})" if exc.dump else ""), file=sys.stderr)
        if isinstance(exc.cause, SolverDivergence):
            return EXIT_SOLVER
        if isinstance(exc.cause, LevelSetInstability):
            return EXIT_LEVELSET
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
