"""Single-step conservative level set: transport with built-in reinitialization.

The marker ``phi`` is 0 in the ink and 1 in the air.  It obeys

    d(phi)/dt + div(v phi) = gamma * div(eps * grad(phi) - phi (1 - phi) n),
    n = grad(phi) / |grad(phi)|

and every term is discretized as a face flux so the cell sum of ``phi``
changes only through the domain boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .grid import BoundaryKind, FieldSet, Grid, SIDES

log = logging.getLogger(__name__)

#: phi outside this window means the step or parameter criteria were violated
INSTABILITY_WINDOW = (-0.1, 1.1)


class LevelSetInstability(RuntimeError):
    """phi left the admissible window or became non-finite."""


@dataclass(frozen=True)
class LevelSetParams:
    """Interface half-thickness ``epsilon`` (m) and reinitialization speed ``gamma`` (m/s)."""

    epsilon: float
    gamma: float
    epsilon_f: float | None = None

    def __post_init__(self):
        if not (self.epsilon > 0.0) or not math.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not (self.gamma >= 0.0) or not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")

    @classmethod
    def from_factor(cls, grid: Grid, epsilon_f: float, gamma: float) -> "LevelSetParams":
        """``epsilon = epsilon_f * epsilon_ref(grid)``."""
        return cls(epsilon_f * epsilon_ref(grid), gamma, epsilon_f)

    def boundedness_criteria(self, grid: Grid, vmax: float) -> dict[str, bool]:
        """The sufficient conditions gamma >= |v|max and epsilon >= dx/2."""
        return {
            "gamma_ge_vmax": self.gamma >= vmax,
            "epsilon_ge_half_dx": self.epsilon >= 0.5 * grid.m_max,
        }


@dataclass(frozen=True)
class PhaseProperties:
    """Ink (phase 1, phi = 0) and air (phase 2, phi = 1) material constants."""

    rho1: float = 1000.0
    rho2: float = 1.0
    mu1: float = 1000.0
    mu2: float = 1.0

    def __post_init__(self):
        for name in ("rho1", "rho2", "mu1", "mu2"):
            if not (getattr(self, name) > 0.0):
                raise ValueError(f"{name} must be positive")


def epsilon_ref_sizes(m_max: float, m_min: float) -> float:
    """Mesh-based default interface thickness from the max/min element sizes."""
    return m_max if m_max > 1.3 * m_min else 2.0 * m_max


def epsilon_ref(grid: Grid) -> float:
    return epsilon_ref_sizes(grid.m_max, grid.m_min)


def init_levelset(grid: Grid, signed_distance: np.ndarray, params: LevelSetParams) -> np.ndarray:
    """Equilibrium profile ``1 / (1 + exp(-d / epsilon))``; ``d < 0`` inside the ink."""
    d = np.asarray(signed_distance, dtype=float)
    if d.shape != grid.shape:
        raise ValueError(f"signed distance shape {d.shape} != grid shape {grid.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("signed distance must be finite")
    return expit(d / params.epsilon)


def smooth_heaviside(phi):
    """Identity blending clamped to [0, 1]; phi is already a smeared Heaviside."""
    return np.clip(phi, 0.0, 1.0)


def blend_properties(phi, props: PhaseProperties) -> tuple[np.ndarray, np.ndarray]:
    h = smooth_heaviside(np.asarray(phi, dtype=float))
    rho = props.rho1 + (props.rho2 - props.rho1) * h
    mu = props.mu1 + (props.mu2 - props.mu1) * h
    return rho, mu


# -- boundary description ---------------------------------------------------


@dataclass
class PhiBoundary:
    """Value of phi carried in by inflow through each boundary face.

    ``inflow[side]`` has one entry per boundary face on that side.  Diffusive
    and compressive fluxes are zero on every non-periodic boundary.
    """

    inflow: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_grid(cls, grid: Grid, ink: float = 0.0, air: float = 1.0) -> "PhiBoundary":
        nx, ny = grid.shape
        inflow = {}
        for side in SIDES:
            n = ny if side in ("left", "right") else nx
            kind = grid.boundary_tags[side]
            value = ink if kind is BoundaryKind.INLET else air
            inflow[side] = np.full(n, value)
        return cls(inflow)


# -- geometry ---------------------------------------------------------------


def _pad(a: np.ndarray, grid: Grid, width: int) -> np.ndarray:
    modes = ["wrap" if grid.periodic(ax) else "edge" for ax in range(2)]
    out = np.pad(a, ((width, width), (0, 0)), mode=modes[0])
    return np.pad(out, ((0, 0), (width, width)), mode=modes[1])


def _fill_solid(phi: np.ndarray, grid: Grid) -> np.ndarray:
    """Give solid cells the mean of their fluid neighbours so gradients stay tame."""
    solid = grid.solid
    if not solid.any():
        return phi
    out = phi.copy()
    fluid = (~solid).astype(float)
    val = np.where(solid, 0.0, phi)
    s = np.zeros_like(phi)
    c = np.zeros_like(phi)
    s[1:] += val[:-1]; c[1:] += fluid[:-1]
    s[:-1] += val[1:]; c[:-1] += fluid[1:]
    s[:, 1:] += val[:, :-1]; c[:, 1:] += fluid[:, :-1]
    s[:, :-1] += val[:, 1:]; c[:, :-1] += fluid[:, 1:]
    fill = solid & (c > 0)
    out[fill] = s[fill] / c[fill]
    return out


def _cell_gradient(phi: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    p = _pad(phi, grid, 1)
    gx = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2.0 * grid.dx)
    gy = (p[1:-1, 2:] - p[1:-1, :-2]) / (2.0 * grid.dy)
    return gx, gy


def interface_normal(phi: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Regularized unit normal ``grad(phi) / (|grad(phi)| + delta)``, delta = 1e-6 / dx."""
    gx, gy = _cell_gradient(_fill_solid(np.asarray(phi, dtype=float), grid), grid)
    delta = 1e-6 / grid.m_min
    mag = np.hypot(gx, gy) + delta
    return gx / mag, gy / mag


# -- flux assembly ----------------------------------------------------------


def _van_leer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = a * b
    denom = np.abs(a) + np.abs(b)
    return np.where(ab > 0.0, 2.0 * ab / np.where(denom > 0.0, denom, 1.0), 0.0)


def _face_states(pp: np.ndarray, axis: int):
    """Cells LL, L, R, RR around every face along ``axis`` from a 2-padded array."""
    if axis == 0:
        core = pp[:, 2:-2]
        return core[:-3], core[1:-2], core[2:-1], core[3:]
    core = pp[2:-2, :]
    return core[:, :-3], core[:, 1:-2], core[:, 2:-1], core[:, 3:]


def _advected_value(vel, ll, l, r, rr):
    up = l + 0.5 * _van_leer(l - ll, r - l)
    dn = r - 0.5 * _van_leer(r - l, rr - r)
    return np.where(vel >= 0.0, up, dn)


def _face_blocked(grid: Grid, axis: int) -> np.ndarray:
    """Faces adjacent to at least one solid cell (domain-boundary faces included)."""
    s = grid.solid
    if axis == 0:
        blocked = np.zeros((grid.nx + 1, grid.ny), dtype=bool)
        blocked[1:-1] = s[1:] | s[:-1]
        blocked[0] |= s[0]
        blocked[-1] |= s[-1]
        if grid.periodic(0):
            blocked[0] |= s[-1]
            blocked[-1] = blocked[0]
    else:
        blocked = np.zeros((grid.nx, grid.ny + 1), dtype=bool)
        blocked[:, 1:-1] = s[:, 1:] | s[:, :-1]
        blocked[:, 0] |= s[:, 0]
        blocked[:, -1] |= s[:, -1]
        if grid.periodic(1):
            blocked[:, 0] |= s[:, -1]
            blocked[:, -1] = blocked[:, 0]
    return blocked


def levelset_fluxes(phi: np.ndarray, u: np.ndarray, v: np.ndarray, grid: Grid,
                    params: LevelSetParams, bc: PhiBoundary | None = None):
    """Total face fluxes (advective minus reinitialization) on x- and y-faces."""
    if bc is None:
        bc = PhiBoundary.from_grid(grid)
    phi_f = _fill_solid(phi, grid)
    pp = _pad(phi_f, grid, 2)
    gx, gy = _cell_gradient(phi_f, grid)
    delta = 1e-6 / grid.m_min
    mag = np.hypot(gx, gy) + delta
    nxc, nyc = gx / mag, gy / mag
    eps, gam = params.epsilon, params.gamma

    fluxes = []
    for axis, (vel, ncell, h) in enumerate(((u, nxc, grid.dx), (v, nyc, grid.dy))):
        ll, l, r, rr = _face_states(pp, axis)
        adv = vel * _advected_value(vel, ll, l, r, rr)
        npad = _pad(ncell, grid, 1)
        if axis == 0:
            nf = 0.5 * (npad[:-1, 1:-1] + npad[1:, 1:-1])
        else:
            nf = 0.5 * (npad[1:-1, :-1] + npad[1:-1, 1:])
        pf = 0.5 * (l + r)
        reinit = gam * (eps * (r - l) / h - pf * (1.0 - pf) * nf)
        flux = adv - reinit
        if not grid.periodic(axis):
            lo, hi = ("left", "right") if axis == 0 else ("bottom", "top")
            idx_lo = (0, slice(None)) if axis == 0 else (slice(None), 0)
            idx_hi = (-1, slice(None)) if axis == 0 else (slice(None), -1)
            first = phi[0, :] if axis == 0 else phi[:, 0]
            last = phi[-1, :] if axis == 0 else phi[:, -1]
            vlo, vhi = vel[idx_lo], vel[idx_hi]
            flux[idx_lo] = vlo * np.where(vlo > 0.0, bc.inflow[lo], first)
            flux[idx_hi] = vhi * np.where(vhi < 0.0, bc.inflow[hi], last)
        flux[_face_blocked(grid, axis)] = 0.0
        fluxes.append(flux)
    return fluxes[0], fluxes[1]


def levelset_rhs(phi, u, v, grid: Grid, params: LevelSetParams, bc: PhiBoundary | None = None):
    fx, fy = levelset_fluxes(phi, u, v, grid, params, bc)
    rhs = -((fx[1:, :] - fx[:-1, :]) / grid.dx + (fy[:, 1:] - fy[:, :-1]) / grid.dy)
    rhs[grid.solid] = 0.0
    return rhs


def boundary_inflow(phi, u, v, grid: Grid, params: LevelSetParams, bc: PhiBoundary | None = None) -> float:
    """Net rate at which the integral of phi enters through the domain boundary."""
    fx, fy = levelset_fluxes(phi, u, v, grid, params, bc)
    return float((fx[0].sum() - fx[-1].sum()) * grid.dy + (fy[:, 0].sum() - fy[:, -1].sum()) * grid.dx)


def _check(phi: np.ndarray, grid: Grid) -> None:
    lo, hi = INSTABILITY_WINDOW
    fluid = phi[~grid.solid]
    if not np.all(np.isfinite(fluid)):
        raise LevelSetInstability("phi became non-finite")
    pmin, pmax = float(fluid.min()), float(fluid.max())
    if pmin < lo or pmax > hi:
        raise LevelSetInstability(f"phi left [{lo}, {hi}]: min={pmin:.4g}, max={pmax:.4g}")


def advance_levelset(fields: FieldSet, params: LevelSetParams, dt: float, grid: Grid,
                     bc: PhiBoundary | None = None) -> np.ndarray:
    """One two-stage SSP Runge-Kutta step of the conservative level set.

    Mutates and returns ``fields.phi``; the velocity is frozen over the step.
    """
    if not (dt > 0.0):
        raise ValueError(f"dt must be positive, got {dt}")
    u, v, phi0 = fields.u, fields.v, fields.phi
    if bc is None:
        bc = PhiBoundary.from_grid(grid)
    phi1 = phi0 + dt * levelset_rhs(phi0, u, v, grid, params, bc)
    phi2 = 0.5 * phi0 + 0.5 * (phi1 + dt * levelset_rhs(phi1, u, v, grid, params, bc))
    _check(phi2, grid)
    fields.phi[...] = phi2
    return fields.phi


def stable_dt(fields: FieldSet, params: LevelSetParams, grid: Grid, cfl_adv: float = 0.5,
              cfl_diff: float = 0.5, dt_max: float = math.inf) -> float:
    """Largest explicit step allowed by advection (plus compression) and diffusion."""
    for name, c in (("cfl_adv", cfl_adv), ("cfl_diff", cfl_diff)):
        if not (0.0 < c <= 1.0):
            raise ValueError(f"{name} must lie in (0, 1], got {c}")
    if grid.cell_volume <= 0.0:
        raise ValueError("zero-size grid")
    h = grid.m_min
    vmax = max(float(np.abs(fields.u).max(initial=0.0)), float(np.abs(fields.v).max(initial=0.0)))
    speed = vmax + params.gamma
    dt_adv = cfl_adv * h / speed if speed > 0.0 else math.inf
    diff = params.gamma * params.epsilon
    dt_diff = cfl_diff * h * h / (2.0 * grid.ndim * diff) if diff > 0.0 else math.inf
    dt = min(dt_adv, dt_diff)
    if math.isinf(dt):
        log.debug("static level set: time step unbounded, clamped to dt_max=%g", dt_max)
    return min(dt, dt_max)


# -- area measurement -------------------------------------------------------


def _triangle_fraction_below(a, b, c, level):
    """Fraction of a triangle where the linear interpolant of (a, b, c) is <= level."""
    vals = np.sort(np.stack([a, b, c]), axis=0)
    v0, v1, v2 = vals
    t = level
    with np.errstate(divide="ignore", invalid="ignore"):
        low = (t - v0) ** 2 / ((v1 - v0) * (v2 - v0))
        high = 1.0 - (v2 - t) ** 2 / ((v2 - v0) * (v2 - v1))
    frac = np.where(t < v0, 0.0, np.where(t >= v2, 1.0, np.where(t <= v1, low, high)))
    # degenerate triangles with v1 == v0 or v2 == v1 fall through to a valid branch
    frac = np.where(np.isfinite(frac), frac, np.where(t >= v1, 1.0, 0.0))
    return np.clip(frac, 0.0, 1.0)


def _nodal_values(phi: np.ndarray, grid: Grid):
    """phi on the dual grid of cell centres, extended to the domain edges."""
    xs = np.concatenate(([grid.origin[0]], grid.cell_centers(0), [grid.origin[0] + grid.extent[0]]))
    ys = np.concatenate(([grid.origin[1]], grid.cell_centers(1), [grid.origin[1] + grid.extent[1]]))
    vals = np.pad(phi, 1, mode="edge")
    if grid.periodic(0):
        edge = 0.5 * (phi[0] + phi[-1])
        vals[0, 1:-1] = edge
        vals[-1, 1:-1] = edge
    if grid.periodic(1):
        edge = 0.5 * (phi[:, 0] + phi[:, -1])
        vals[1:-1, 0] = edge
        vals[1:-1, -1] = edge
    return xs, ys, vals


def area_of_indicator(phi: np.ndarray, grid: Grid, estimator: str = "sub-cell", level: float = 0.5) -> float:
    """Area of the ink region ``{phi <= level}``.

    ``cell-count`` sums whole cells; ``sub-cell`` integrates the piecewise
    linear interpolant of phi over the dual grid (cell centres as nodes, each
    dual cell split into two triangles).  Solid cells count as air.
    """
    phi = np.where(grid.solid, 1.0, np.asarray(phi, dtype=float))
    if estimator == "cell-count":
        return float(np.count_nonzero(phi <= level) * grid.cell_volume)
    if estimator != "sub-cell":
        raise ValueError(f"unknown estimator {estimator!r}")
    xs, ys, f = _nodal_values(phi, grid)
    wx = np.diff(xs)[:, None]
    wy = np.diff(ys)[None, :]
    half = 0.5 * wx * wy
    f00, f10, f01, f11 = f[:-1, :-1], f[1:, :-1], f[:-1, 1:], f[1:, 1:]
    area = half * (_triangle_fraction_below(f00, f10, f11, level)
                   + _triangle_fraction_below(f00, f11, f01, level))
    return float(area.sum())


def phi_stats(phi: np.ndarray, grid: Grid) -> dict[str, float]:
    fluid = phi[~grid.solid]
    return {
        "phi_sum": float(fluid.sum() * grid.cell_volume),
        "phi_min": float(fluid.min()),
        "phi_max": float(fluid.max()),
    }
