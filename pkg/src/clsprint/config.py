"""Run configuration files: TOML with unit-suffixed physical quantities.

Every physical value is a string such as ``"0.4 mm"`` or ``"20 mm/s"`` and is
converted to SI on load; bare numbers for physical quantities are rejected.
Dimensionless settings (``epsilon_f``, CFL numbers, tolerances) are plain
numbers.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import pint

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .flow import FlowConfig
from .levelset import LevelSetParams, PhaseProperties, epsilon_ref
from .scenario import BENCHMARK_KINDS, BenchmarkCase, DepositionScenario

OUTPUT_DIR_ENV = "CLSPRINT_OUTPUT_DIR"
WORKERS_ENV = "CLSPRINT_WORKERS"


class ConfigError(ValueError):
    pass


@lru_cache(maxsize=1)
def _registry() -> pint.UnitRegistry:
    return pint.UnitRegistry()


DIMENSIONS = {
    "length": "[length]",
    "speed": "[length]/[time]",
    "time": "[time]",
    "density": "[mass]/[length]**3",
    "viscosity": "[mass]/[length]/[time]",
    "acceleration": "[length]/[time]**2",
    "rate2d": "[length]**2/[time]",
}

SI_UNITS = {
    "length": "m", "speed": "m/s", "time": "s", "density": "kg/m**3",
    "viscosity": "Pa*s", "acceleration": "m/s**2", "rate2d": "m**2/s",
}


def quantity(value, kind: str, key: str = "value") -> float:
    """Convert a unit-suffixed string to an SI float of the given physical kind."""
    if isinstance(value, bool) or not isinstance(value, str):
        raise ConfigError(f"{key} = {value!r} needs explicit units, e.g. \"{value} {SI_UNITS[kind]}\"")
    ureg = _registry()
    try:
        q = ureg.Quantity(value)
    except Exception as exc:  # pint raises several unrelated exception types
        raise ConfigError(f"{key}: cannot parse {value!r} ({exc})") from None
    if q.dimensionless:
        raise ConfigError(f"{key} = {value!r} needs explicit units")
    if not q.check(DIMENSIONS[kind]):
        raise ConfigError(f"{key} = {value!r} is not a {kind} ({q.dimensionality})")
    return float(q.to(SI_UNITS[kind]).magnitude)


def _number(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a plain number, got {value!r}")
    return float(value)


SCENARIO_KEYS = {
    "D": "length", "L": "length", "delta_z": "length", "B_w": "length", "B_h": "length",
    "B_l": "length", "v_p": "speed", "v_bar_x": "speed", "g": "acceleration",
    "measure_offset": "length", "measure_time": "time", "nozzle_x": "length", "tip_wall": "length",
}
PROPERTY_KEYS = {"rho_ink": "density", "rho_air": "density", "mu_ink": "viscosity", "mu_air": "viscosity"}


@dataclass(frozen=True)
class RunConfig:
    """One run: a deposition scenario or a benchmark, plus numerics and output."""

    case: str
    grid_target: float
    gamma: float | None = None
    epsilon: float | None = None
    epsilon_f: float | None = None
    scenario: DepositionScenario | None = None
    benchmark: BenchmarkCase | None = None
    flow: FlowConfig | None = None
    duration: float | None = None
    sample_interval: float | None = None
    flow_dt: float | None = None
    cfl_adv: float = 0.5
    cfl_diff: float = 0.5
    stop_when_steady: bool = False
    steady_window: float = 0.05
    steady_tol: float = 1e-3
    snapshot_every: int = 0
    output_dir: str = "output"
    name: str = "run"

    def __post_init__(self):
        if self.case not in ("deposition", "benchmark"):
            raise ConfigError(f"case must be 'deposition' or 'benchmark', got {self.case!r}")
        if not (self.grid_target > 0.0):
            raise ConfigError("grid target cell size must be positive")
        if self.case == "deposition" and self.scenario is None:
            raise ConfigError("deposition runs need a [scenario] table")
        if self.case == "benchmark" and self.benchmark is None:
            raise ConfigError("benchmark runs need a [benchmark] table")
        if self.epsilon is not None and self.epsilon_f is not None:
            raise ConfigError("give epsilon or epsilon_f, not both")
        if self.epsilon is not None and not (self.epsilon > 0.0):
            raise ConfigError("epsilon must be positive")
        if self.epsilon_f is not None and not (self.epsilon_f > 0.0):
            raise ConfigError("epsilon_f must be positive")
        if self.gamma is not None and not (self.gamma >= 0.0):
            raise ConfigError("gamma must be non-negative")
        for name in ("cfl_adv", "cfl_diff"):
            if not (0.0 < getattr(self, name) <= 1.0):
                raise ConfigError(f"{name} must lie in (0, 1]")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")

    def levelset_params(self, grid) -> LevelSetParams | None:
        """Parameters on ``grid``; None means the case default."""
        if self.epsilon is None and self.epsilon_f is None and self.gamma is None:
            return None
        gamma = self.gamma
        if gamma is None:
            gamma = self.scenario.v_bar_x if self.scenario is not None else 1.0
        if self.epsilon is not None:
            eps = self.epsilon
            return LevelSetParams(eps, gamma, eps / epsilon_ref(grid))
        f = 1.0 if self.epsilon_f is None else self.epsilon_f
        return LevelSetParams(f * epsilon_ref(grid), gamma, f)

    def with_updates(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def describe(self) -> dict:
        d = {
            "name": self.name, "case": self.case, "grid_target_m": self.grid_target,
            "gamma_m_per_s": self.gamma, "epsilon_m": self.epsilon, "epsilon_f": self.epsilon_f,
            "flow_mode": self.flow.mode if self.flow else None, "duration_s": self.duration,
            "sample_interval_s": self.sample_interval, "flow_dt_s": self.flow_dt,
            "cfl_adv": self.cfl_adv, "cfl_diff": self.cfl_diff,
            "stop_when_steady": self.stop_when_steady,
        }
        if self.scenario is not None:
            sc = self.scenario
            d["scenario"] = {k: getattr(sc, k) for k in SCENARIO_KEYS}
            d["scenario"]["props"] = vars(sc.props) if hasattr(sc.props, "__dict__") else str(sc.props)
        if self.benchmark is not None:
            b = self.benchmark
            d["benchmark"] = {"kind": b.kind, "epsilon_f": b.epsilon_f, "gamma": b.gamma,
                              "gamma_factor": b.gamma_factor, "duration": b.duration,
                              "options": dict(b.options)}
        return d


def _scenario(table: dict) -> DepositionScenario:
    kwargs, props = {}, {}
    for key, value in table.items():
        if key in SCENARIO_KEYS:
            kwargs[key] = quantity(value, SCENARIO_KEYS[key], f"scenario.{key}")
        elif key in PROPERTY_KEYS:
            props[key] = quantity(value, PROPERTY_KEYS[key], f"scenario.{key}")
        elif key == "symmetry":
            kwargs[key] = bool(value)
        else:
            raise ConfigError(f"unknown scenario key {key!r}")
    p = PhaseProperties(
        rho1=props.get("rho_ink", 1000.0), rho2=props.get("rho_air", 1.0),
        mu1=props.get("mu_ink", 1000.0), mu2=props.get("mu_air", 1.0),
    )
    try:
        return DepositionScenario(props=p, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _benchmark(table: dict) -> BenchmarkCase:
    table = dict(table)
    kind = table.pop("kind", None)
    if kind not in BENCHMARK_KINDS:
        raise ConfigError(f"benchmark.kind must be one of {BENCHMARK_KINDS}, got {kind!r}")
    kw = {"kind": kind}
    if "epsilon_f" in table:
        kw["epsilon_f"] = _number(table.pop("epsilon_f"), "benchmark.epsilon_f")
    if "gamma_factor" in table:
        kw["gamma_factor"] = _number(table.pop("gamma_factor"), "benchmark.gamma_factor")
    if "gamma" in table:
        kw["gamma"] = quantity(table.pop("gamma"), "speed", "benchmark.gamma")
    if "duration" in table:
        kw["duration"] = quantity(table.pop("duration"), "time", "benchmark.duration")
    # remaining keys are benchmark-specific options in SI after conversion
    opts = {}
    option_kinds = {"width": "length", "length": "length", "height": "length", "radius": "length",
                    "rate": "rate2d", "mu": "viscosity", "rho": "density", "g": "acceleration",
                    "period": "time"}
    for key, value in table.items():
        if key in option_kinds:
            opts[key] = quantity(value, option_kinds[key], f"benchmark.{key}")
        elif key == "mode":
            opts[key] = str(value)
        elif key == "velocity":
            opts[key] = tuple(quantity(v, "speed", "benchmark.velocity") for v in value)
        else:
            raise ConfigError(f"unknown benchmark key {key!r}")
    kw["options"] = opts
    try:
        return BenchmarkCase(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(data: dict, name: str = "run") -> RunConfig:
    """Build a :class:`RunConfig` from an already-parsed TOML mapping."""
    data = copy.deepcopy(data)
    run = data.pop("run", {})
    grid = data.pop("grid", {})
    ls = data.pop("levelset", {})
    flow = data.pop("flow", {})
    scen = data.pop("scenario", None)
    bench = data.pop("benchmark", None)
    data.pop("sweep", None)
    if data:
        raise ConfigError(f"unknown top-level tables: {sorted(data)}")

    case = run.get("case", "deposition" if scen is not None else "benchmark")
    kw: dict = {"case": case, "name": str(run.get("name", name))}
    if "target_cell_size" not in grid:
        raise ConfigError("grid.target_cell_size is required")
    kw["grid_target"] = quantity(grid["target_cell_size"], "length", "grid.target_cell_size")

    if "gamma" in ls:
        kw["gamma"] = quantity(ls["gamma"], "speed", "levelset.gamma")
    if "epsilon" in ls:
        kw["epsilon"] = quantity(ls["epsilon"], "length", "levelset.epsilon")
    if "epsilon_f" in ls:
        kw["epsilon_f"] = _number(ls["epsilon_f"], "levelset.epsilon_f")
    for key in ("cfl_adv", "cfl_diff"):
        if key in ls:
            kw[key] = _number(ls[key], f"levelset.{key}")

    fkw = {}
    if "mode" in flow:
        fkw["mode"] = str(flow["mode"])
    for key in ("pressure_tol", "viscous_tol"):
        if key in flow:
            fkw[key] = _number(flow[key], f"flow.{key}")
    if "max_iters" in flow:
        fkw["max_iters"] = int(flow["max_iters"])
    if "dt" in flow:
        kw["flow_dt"] = quantity(flow["dt"], "time", "flow.dt")
    unknown = set(flow) - {"mode", "pressure_tol", "viscous_tol", "max_iters", "dt"}
    if unknown:
        raise ConfigError(f"unknown flow keys {sorted(unknown)}")
    if scen is not None:
        kw["scenario"] = _scenario(scen)
        fkw["gravity"] = (0.0, -kw["scenario"].g)
    if fkw:
        try:
            kw["flow"] = FlowConfig(**fkw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if bench is not None:
        kw["benchmark"] = _benchmark(bench)

    for key in ("duration", "sample_interval", "steady_window"):
        if key in run:
            kw[key] = quantity(run[key], "time", f"run.{key}")
    if "stop_when_steady" in run:
        kw["stop_when_steady"] = bool(run["stop_when_steady"])
    if "steady_tol" in run:
        kw["steady_tol"] = _number(run["steady_tol"], "run.steady_tol")
    if "snapshot_every" in run:
        kw["snapshot_every"] = int(run["snapshot_every"])
    if "output_dir" in run:
        kw["output_dir"] = str(run["output_dir"])
    unknown = set(run) - {"case", "name", "duration", "sample_interval", "steady_window",
                          "stop_when_steady", "steady_tol", "snapshot_every", "output_dir"}
    if unknown:
        raise ConfigError(f"unknown run keys {sorted(unknown)}")
    try:
        return RunConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_toml(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path: str | Path) -> RunConfig:
    return parse_config(load_toml(path), Path(path).stem)
