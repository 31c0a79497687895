"""Ready-to-run cases: the 2D extrusion-deposition model and verification benchmarks.

A :class:`Case` bundles everything a time loop needs: grid, initial fields,
boundary data for the flow and the level set, material properties and an
oracle describing the expected answer.  Pure level-set benchmarks carry a
prescribed kinematic velocity instead of a flow boundary specification.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .flow import BoundarySpec, FlowConfig, Segment, plane_poiseuille_reference
from .grid import BoundaryKind, FieldSet, Grid, build_grid
from .levelset import LevelSetParams, PhaseProperties, PhiBoundary, epsilon_ref, init_levelset

#: nozzle gap to diameter ratios of the standard printing study
STANDARD_GAP_RATIOS = (0.6, 0.8, 1.0)

MIN_GAP_CELLS = 4
RECOMMENDED_GAP_CELLS = 8


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DepositionScenario:
    """Nozzle, block and printing settings (SI units).

    The deposition block spans ``B_l`` along the print direction and the
    meshed height is ``delta_z + B_h``; the nozzle enters from the top and
    ends ``delta_z`` above the bed.  Only the part of the nozzle inside the
    block is meshed.  ``nozzle_x`` is the nozzle axis position and
    ``tip_wall`` the nozzle wall thickness (one cell when None).
    """

    D: float = 0.4e-3
    L: float = 2.0e-3
    delta_z: float = 0.32e-3
    B_w: float = 1.2e-3
    B_h: float = 0.6e-3
    B_l: float = 6.0e-3
    v_p: float = 0.02
    v_bar_x: float = 0.02
    props: PhaseProperties = field(default_factory=PhaseProperties)
    g: float = 9.81
    measure_offset: float = 2.0e-3
    measure_time: float = 0.5
    nozzle_x: float = 1.0e-3
    symmetry: bool = True
    tip_wall: float | None = None

    def __post_init__(self):
        for name in ("D", "L", "delta_z", "B_w", "B_h", "B_l", "v_p", "v_bar_x", "measure_time"):
            if not (getattr(self, name) > 0.0):
                raise ScenarioError(f"{name} must be positive")
        if self.g < 0.0:
            raise ScenarioError("g is a magnitude and must be non-negative")
        if not (0.5 * self.D < self.nozzle_x < self.B_l - 0.5 * self.D):
            raise ScenarioError("nozzle must lie inside the block")
        if not (0.0 < self.station_x < self.B_l):
            raise ScenarioError("measurement station falls outside the block")
        if self.tip_wall is not None and not (self.tip_wall > 0.0):
            raise ScenarioError("tip_wall must be positive")

    @property
    def gap_ratio(self) -> float:
        return self.delta_z / self.D

    @property
    def standard(self) -> bool:
        return any(math.isclose(self.gap_ratio, r, rel_tol=1e-9) for r in STANDARD_GAP_RATIOS)

    @property
    def V_pl(self) -> float:
        """3D inlet rate (m^3/s), halved when the symmetry plane is used."""
        full = self.v_p * math.pi * self.D ** 2 / 4.0
        return 0.5 * full if self.symmetry else full

    @property
    def q(self) -> float:
        """2D inlet rate per unit depth (m^2/s)."""
        return self.v_p * self.D

    @property
    def h_f(self) -> float:
        """Ideal strand thickness of the 2D model."""
        return self.q / self.v_bar_x

    @property
    def A_f(self) -> float:
        """Ideal 3D strand cross-section for the (possibly halved) rate."""
        return self.V_pl / self.v_bar_x

    @property
    def station_x(self) -> float:
        return self.nozzle_x + self.measure_offset

    @property
    def height(self) -> float:
        return self.delta_z + self.B_h


@dataclass
class Case:
    """A fully initialized simulation case."""

    kind: str
    grid: Grid
    fields: FieldSet
    duration: float
    oracle: dict
    phi_bc: PhiBoundary
    boundary: BoundarySpec | None = None
    props: PhaseProperties | None = None
    params: LevelSetParams | None = None
    flow_config: FlowConfig | None = None
    velocity: Callable[[float], tuple[np.ndarray, np.ndarray]] | None = None
    ramp_time: float = 0.0
    scenario: DepositionScenario | None = None
    station_x: float | None = None

    @property
    def prescribed(self) -> bool:
        return self.velocity is not None


# -- deposition -------------------------------------------------------------


def nozzle_layout(scenario: DepositionScenario, grid: Grid) -> dict:
    """Cell indices of the slot and its walls, snapped to grid faces."""
    dx, dy = grid.spacing
    i_lo = int(round((scenario.nozzle_x - 0.5 * scenario.D) / dx))
    i_hi = int(round((scenario.nozzle_x + 0.5 * scenario.D) / dx))
    j_tip = int(round(scenario.delta_z / dy))
    n_wall = 1 if scenario.tip_wall is None else max(1, int(round(scenario.tip_wall / dx)))
    if i_hi - i_lo < 2:
        raise ScenarioError("nozzle slot must span at least two cells")
    if i_lo < n_wall or i_hi + n_wall > grid.nx:
        raise ScenarioError("nozzle walls fall outside the grid")
    return {"i_lo": i_lo, "i_hi": i_hi, "j_tip": j_tip, "n_wall": n_wall,
            "x_lo": i_lo * dx, "x_hi": i_hi * dx, "y_tip": j_tip * dy}


def build_deposition(scenario: DepositionScenario, grid_target: float,
                     params: LevelSetParams | None = None, duration: float | None = None,
                     ramp_fraction: float = 0.05, flow_config: FlowConfig | None = None) -> Case:
    """Bed moving at ``v_bar_x`` under a static nozzle fed through its top.

    The vertical spacing divides ``delta_z`` exactly, so the meshed height is
    ``delta_z + B_h`` rounded up to whole cells.  Boundaries: moving bed at the
    bottom, open left, right and top, and a parabolic inlet across the slot at
    the top.  Nozzle walls are one cell
    thick solid columns from the tip to the top of the domain.  Ink fills the
    slot down to the tip at t = 0.
    """
    n_gap = scenario.delta_z / grid_target
    if n_gap < MIN_GAP_CELLS * (1.0 - 1e-9):
        raise ScenarioError(f"nozzle gap spans {n_gap:.2f} cells; at least {MIN_GAP_CELLS} needed")
    if n_gap < RECOMMENDED_GAP_CELLS * (1.0 - 1e-9):
        warnings.warn(f"nozzle gap spans only {n_gap:.2f} cells", stacklevel=2)
    if not scenario.standard:
        warnings.warn(f"non-standard gap ratio delta_z/D = {scenario.gap_ratio:.3g}", stacklevel=2)

    tags = {"left": BoundaryKind.OPEN, "right": BoundaryKind.OPEN,
            "bottom": BoundaryKind.MOVING_WALL, "top": BoundaryKind.OPEN}
    # the gap is an exact number of cells; the air above the tip is rounded up
    n_gap_cells = math.ceil(scenario.delta_z / grid_target * (1.0 - 1e-9))
    dy = scenario.delta_z / n_gap_cells
    n_top = math.ceil(scenario.B_h / dy * (1.0 - 1e-9))
    grid = build_grid((scenario.B_l, (n_gap_cells + n_top) * dy), dy, boundary_tags=tags)
    lay = nozzle_layout(scenario, grid)
    solid = np.zeros(grid.shape, dtype=bool)
    nw = lay["n_wall"]
    solid[lay["i_lo"] - nw:lay["i_lo"], lay["j_tip"]:] = True
    solid[lay["i_hi"]:lay["i_hi"] + nw, lay["j_tip"]:] = True
    grid = grid.with_solid(solid)

    x_lo, x_hi, y_tip = lay["x_lo"], lay["x_hi"], lay["y_tip"]
    spec = BoundarySpec(
        velocities={"bottom": scenario.v_bar_x},
        segments=[Segment("top", x_lo, x_hi, BoundaryKind.INLET, rate=scenario.q)],
    )
    if params is None:
        params = LevelSetParams.from_factor(grid, 1.0, scenario.v_bar_x)

    X, Y = grid.mesh()
    in_slot_x = (X > x_lo) & (X < x_hi)
    # distance to the ink column above the tip; negative inside it
    dx_out = np.maximum(np.maximum(x_lo - X, X - x_hi), 0.0)
    dy_out = np.maximum(y_tip - Y, 0.0)
    d = np.where(in_slot_x & (Y >= y_tip), y_tip - Y, np.hypot(dx_out, dy_out))
    fields = FieldSet.zeros(grid)
    fields.phi[...] = init_levelset(grid, d, params)
    fields.phi[solid] = 1.0

    phi_bc = PhiBoundary.from_grid(grid)
    xc = grid.cell_centers(0)
    phi_bc.inflow["top"][(xc > x_lo) & (xc < x_hi)] = 0.0

    if duration is None:
        duration = scenario.measure_time
    cfg = flow_config or FlowConfig(mode="stokes", gravity=(0.0, -scenario.g))
    oracle = {
        "h_f": scenario.h_f,
        "inflow_rate": scenario.q,
        "station_x": scenario.station_x,
        "slot": (x_lo, x_hi),
        "tip_height": y_tip,
    }
    return Case("deposition", grid, fields, duration, oracle, phi_bc, spec, scenario.props,
                params, cfg, None, ramp_fraction * duration, scenario, scenario.station_x)


# -- benchmarks -------------------------------------------------------------

BENCHMARK_KINDS = ("equilibrium", "translating_blob", "zalesak", "single_vortex",
                   "plane_poiseuille", "hydrostatic")


@dataclass(frozen=True)
class BenchmarkCase:
    """Selector and parameters of a verification benchmark.

    ``epsilon_f`` scales ``epsilon_ref``; ``gamma_factor`` scales the peak
    prescribed speed (or sets gamma directly for static cases via ``gamma``).
    """

    kind: str
    epsilon_f: float = 0.5
    gamma: float | None = None
    gamma_factor: float = 1.0
    duration: float | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BENCHMARK_KINDS:
            raise ScenarioError(f"unknown benchmark {self.kind!r}; choose from {BENCHMARK_KINDS}")
        if not (self.epsilon_f > 0.0):
            raise ScenarioError("epsilon_f must be positive")


def _faces_from_streamfunction(grid: Grid, psi: Callable) -> tuple[np.ndarray, np.ndarray]:
    """Face velocities from a stream function; discretely divergence free."""
    xf, yf = grid.face_coords(0), grid.face_coords(1)
    xc, yc = grid.cell_centers(0), grid.cell_centers(1)
    XF, YC = np.meshgrid(xf, yc, indexing="ij")
    u = (psi(XF, YC + 0.5 * grid.dy) - psi(XF, YC - 0.5 * grid.dy)) / grid.dy
    XC, YF = np.meshgrid(xc, yf, indexing="ij")
    v = -(psi(XC + 0.5 * grid.dx, YF) - psi(XC - 0.5 * grid.dx, YF)) / grid.dx
    return u, v


def zalesak_signed_distance(X, Y, centre=(0.5, 0.75), radius=0.15, slot_width=0.05, slot_top=0.85):
    """Approximate signed distance to a slotted disc (negative inside)."""
    r = np.hypot(X - centre[0], Y - centre[1]) - radius
    slot = np.maximum(np.abs(X - centre[0]) - 0.5 * slot_width, Y - slot_top)
    return np.maximum(r, -slot)


def quadrature_area(indicator: Callable, box=((0.0, 1.0), (0.0, 1.0)), n: int = 4000) -> float:
    """Midpoint-rule area of ``{indicator(x, y)}`` on an ``n x n`` sampling."""
    (x0, x1), (y0, y1) = box
    xs = x0 + (np.arange(n) + 0.5) * (x1 - x0) / n
    total = 0
    for chunk in np.array_split(np.arange(n), 8):
        X, Y = np.meshgrid(xs, y0 + (chunk + 0.5) * (y1 - y0) / n, indexing="ij")
        total += int(np.count_nonzero(indicator(X, Y)))
    return total * (x1 - x0) * (y1 - y0) / n ** 2


def build_benchmark(case: BenchmarkCase, grid_target: float) -> Case:
    """Initialize one verification benchmark on a uniform grid of the given cell size."""
    builder = {
        "equilibrium": _equilibrium,
        "translating_blob": _translating_blob,
        "zalesak": _zalesak,
        "single_vortex": _single_vortex,
        "plane_poiseuille": _plane_poiseuille,
        "hydrostatic": _hydrostatic,
    }[case.kind]
    return builder(case, grid_target)


def _params(case: BenchmarkCase, grid: Grid, vmax: float) -> LevelSetParams:
    gamma = case.gamma if case.gamma is not None else case.gamma_factor * vmax
    return LevelSetParams(case.epsilon_f * epsilon_ref(grid), gamma, case.epsilon_f)


def _static_velocity(u, v):
    return lambda t: (u, v)


def _equilibrium(case: BenchmarkCase, h: float) -> Case:
    # planar interface at x = 0.5 across a channel periodic in y
    tags = {"left": "wall", "right": "wall", "bottom": "periodic", "top": "periodic"}
    grid = build_grid((1.0, case.options.get("height", 0.25)), h, boundary_tags=tags)
    gamma = case.gamma if case.gamma is not None else 1.0
    params = LevelSetParams(case.epsilon_f * epsilon_ref(grid), gamma, case.epsilon_f)
    X, _ = grid.mesh()
    fields = FieldSet.zeros(grid)
    fields.phi[...] = np.where(X > 0.5, 1.0, 0.0)
    duration = case.duration or 50.0 * params.epsilon / params.gamma
    oracle = {"profile": lambda d: 1.0 / (1.0 + np.exp(-d / params.epsilon)),
              "distance": X - 0.5}
    zero_u, zero_v = fields.u.copy(), fields.v.copy()
    return Case("equilibrium", grid, fields, duration, oracle, PhiBoundary.from_grid(grid),
                params=params, velocity=_static_velocity(zero_u, zero_v))


def _translating_blob(case: BenchmarkCase, h: float) -> Case:
    tags = {s: "periodic" for s in ("left", "right", "bottom", "top")}
    grid = build_grid((1.0, 1.0), h, boundary_tags=tags)
    vel = case.options.get("velocity", (1.0, 0.0))
    radius = case.options.get("radius", 0.2)
    params = _params(case, grid, max(abs(vel[0]), abs(vel[1])))
    X, Y = grid.mesh()
    fields = FieldSet.zeros(grid)
    fields.phi[...] = init_levelset(grid, np.hypot(X - 0.5, Y - 0.5) - radius, params)
    fields.u[...] = vel[0]
    fields.v[...] = vel[1]
    duration = case.duration or 1.0
    oracle = {"phi_sum": float(fields.phi.sum()), "area": math.pi * radius ** 2}
    return Case("translating_blob", grid, fields, duration, oracle, PhiBoundary.from_grid(grid),
                params=params, velocity=_static_velocity(fields.u.copy(), fields.v.copy()))


def _zalesak(case: BenchmarkCase, h: float) -> Case:
    tags = {s: "open" for s in ("left", "right", "bottom", "top")}
    grid = build_grid((1.0, 1.0), h, boundary_tags=tags)
    omega = 2.0 * math.pi
    u, v = _faces_from_streamfunction(grid, lambda x, y: -0.5 * omega * ((x - 0.5) ** 2 + (y - 0.5) ** 2))
    vmax = max(np.abs(u).max(), np.abs(v).max())
    params = _params(case, grid, vmax)
    X, Y = grid.mesh()
    fields = FieldSet.zeros(grid)
    fields.phi[...] = init_levelset(grid, zalesak_signed_distance(X, Y), params)
    fields.u[...] = u
    fields.v[...] = v
    area = quadrature_area(lambda x, y: zalesak_signed_distance(x, y) <= 0.0)
    oracle = {"area": area}
    return Case("zalesak", grid, fields, case.duration or 1.0, oracle, PhiBoundary.from_grid(grid),
                params=params, velocity=_static_velocity(u, v))


def _single_vortex(case: BenchmarkCase, h: float) -> Case:
    tags = {s: "wall" for s in ("left", "right", "bottom", "top")}
    grid = build_grid((1.0, 1.0), h, boundary_tags=tags)
    period = case.options.get("period", 2.0)
    base_u, base_v = _faces_from_streamfunction(
        grid, lambda x, y: np.sin(np.pi * x) ** 2 * np.sin(np.pi * y) ** 2 / np.pi)
    vmax = max(np.abs(base_u).max(), np.abs(base_v).max())
    params = _params(case, grid, vmax)
    X, Y = grid.mesh()
    radius = 0.15
    fields = FieldSet.zeros(grid)
    fields.phi[...] = init_levelset(grid, np.hypot(X - 0.5, Y - 0.75) - radius, params)

    def velocity(t):
        s = math.cos(math.pi * t / period)
        return base_u * s, base_v * s

    oracle = {"area": math.pi * radius ** 2}
    return Case("single_vortex", grid, fields, case.duration or period, oracle,
                PhiBoundary.from_grid(grid), params=params, velocity=velocity)


def _plane_poiseuille(case: BenchmarkCase, h: float) -> Case:
    opts = {"width": 1e-3, "length": 2e-3, "rate": 8e-6, "mu": 1000.0, "rho": 1000.0}
    opts.update(case.options)
    tags = {"left": "inlet", "right": "open", "bottom": "wall", "top": "wall"}
    grid = build_grid((opts["length"], opts["width"]), h, boundary_tags=tags)
    fields = FieldSet.zeros(grid, phi=0.0)
    props = PhaseProperties(rho1=opts["rho"], mu1=opts["mu"])
    spec = BoundarySpec(rates={"left": opts["rate"]})
    w = opts["width"]
    oracle = {
        "delta_p": plane_poiseuille_reference(opts["mu"], opts["length"], opts["rate"], w),
        "profile": lambda y: 6.0 * opts["rate"] / w ** 3 * y * (w - y),
    }
    params = LevelSetParams(epsilon_ref(grid), 0.0, 1.0)
    return Case("plane_poiseuille", grid, fields, case.duration or 1e-3, oracle,
                PhiBoundary.from_grid(grid, air=0.0), spec, props, params,
                FlowConfig(mode=opts.get("mode", "stokes"), gravity=(0.0, 0.0)))


def _hydrostatic(case: BenchmarkCase, h: float) -> Case:
    opts = {"width": 1e-3, "height": 2e-3, "rho": 1000.0, "mu": 1.0, "g": 9.81}
    opts.update(case.options)
    tags = {"left": "wall", "right": "wall", "bottom": "wall", "top": "open"}
    grid = build_grid((opts["width"], opts["height"]), h, boundary_tags=tags)
    fields = FieldSet.zeros(grid, phi=0.0)
    props = PhaseProperties(rho1=opts["rho"], mu1=opts["mu"])
    # the top face is the zero-pressure reference; the top cell centre sits dy/2 below
    oracle = {"p_max": opts["rho"] * opts["g"] * (opts["height"] - 0.5 * grid.dy),
              "gradient": -opts["rho"] * opts["g"]}
    params = LevelSetParams(epsilon_ref(grid), 0.0, 1.0)
    return Case("hydrostatic", grid, fields, case.duration or 1e-3, oracle,
                PhiBoundary.from_grid(grid, air=0.0), BoundarySpec(), props, params,
                FlowConfig(mode=opts.get("mode", "stokes"), gravity=(0.0, -opts["g"])))
