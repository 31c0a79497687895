"""Conservation diagnostics: reference and measured strand sections, ink audits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .grid import Grid
from .levelset import area_of_indicator, smooth_heaviside

#: fixed column order of diagnostics.csv
CSV_COLUMNS = ("time", "A_s", "A_f", "delta_A_pct", "P_max", "ink_volume", "W", "H", "WH_ratio")


class DiagnosticsError(ValueError):
    pass


def reference_area(rate: float, v_bar_x: float) -> float:
    """Steady strand section ``rate / v_bar_x`` (a thickness for per-depth 2D rates)."""
    if not (v_bar_x > 0.0):
        raise DiagnosticsError("nozzle speed must be positive")
    return rate / v_bar_x


def conservation_error(A_s: float, A_f: float) -> float:
    """Percent deviation ``|A_s - A_f| / A_f * 100``."""
    if not (A_f > 0.0):
        raise DiagnosticsError("reference area must be positive")
    return abs(A_s - A_f) / A_f * 100.0


def aspect_ratio(W: float, H: float, half_width: bool = False) -> float:
    """``W / H``; ``half_width`` doubles a width measured on a symmetry half."""
    if not (H > 0.0):
        raise DiagnosticsError("strand height must be positive")
    if W < 0.0:
        raise DiagnosticsError("strand width must be non-negative")
    return (2.0 * W if half_width else W) / H


def global_ink_volume(phi: np.ndarray, grid: Grid) -> float:
    """Integral of ``1 - H(phi)`` over fluid cells (m^2 per unit depth in 2D)."""
    ink = 1.0 - smooth_heaviside(np.asarray(phi, dtype=float))
    return float(ink[grid.fluid].sum() * grid.cell_volume)


def _column_at(phi: np.ndarray, grid: Grid, x: float) -> np.ndarray:
    """phi along the vertical line ``x``, linearly interpolated between cell columns."""
    x0, x1 = grid.origin[0], grid.origin[0] + grid.extent[0]
    if not (x0 <= x <= x1):
        raise DiagnosticsError(f"station x = {x} lies outside [{x0}, {x1}]")
    s = (x - x0) / grid.dx - 0.5
    i = int(np.clip(math.floor(s), 0, grid.nx - 2)) if grid.nx > 1 else 0
    if grid.nx == 1:
        return phi[0].astype(float)
    w = float(np.clip(s - i, 0.0, 1.0))
    return (1.0 - w) * phi[i] + w * phi[i + 1]


def line_thickness(values: np.ndarray, h: float, level: float = 0.5) -> tuple[float, float]:
    """Length of ``{values <= level}`` along a column of cell values and its top.

    Values are taken as piecewise linear between cell centres and constant
    over the half cells next to the two ends.  Returns ``(length, top)``
    measured from the start of the column.
    """
    f = np.asarray(values, dtype=float) - level
    n = f.size
    pos = (np.arange(n) + 0.5) * h
    # nodes: column ends plus cell centres
    z = np.concatenate(([0.0], pos, [n * h]))
    g = np.concatenate(([f[0]], f, [f[-1]]))
    a, b = g[:-1], g[1:]
    seg = np.diff(z)
    both = (a <= 0.0) & (b <= 0.0)
    cross = (a <= 0.0) != (b <= 0.0)
    t = np.where(cross, a / np.where(cross, a - b, 1.0), 0.0)
    frac = np.where(both, 1.0, 0.0)
    frac = np.where(cross & (a <= 0.0), t, frac)
    frac = np.where(cross & (b <= 0.0), 1.0 - t, frac)
    length = float((frac * seg).sum())
    inside = np.flatnonzero(frac > 0.0)
    if inside.size == 0:
        return 0.0, 0.0
    k = inside[-1]
    top = z[k] + (t[k] * seg[k] if cross[k] and a[k] <= 0.0 else seg[k])
    return length, float(top)


def strand_cross_section(phi: np.ndarray, grid: Grid, station_x: float, level: float = 0.5) -> dict:
    """Ink thickness on the vertical line ``x = station_x`` of a 2D field.

    Solid cells count as air.  Returns ``thickness`` (the 2D section per unit
    depth) and ``top``, the height of the highest ink crossing above the
    grid origin.
    """
    phi = np.where(grid.solid, 1.0, phi)
    col = _column_at(phi, grid, station_x)
    thickness, top = line_thickness(col, grid.dy, level)
    return {"thickness": thickness, "top": top}


def slice_cross_section(phi_slice: np.ndarray, spacing: tuple[float, float],
                        estimator: str = "sub-cell", level: float = 0.5) -> dict:
    """Area, width and height of ``{phi <= level}`` in a transverse slice.

    ``phi_slice`` is indexed ``[k, j]`` with ``k`` across the strand and
    ``j`` up from the bed.  W and H are the extents of the level contour's
    bounding box; W is not doubled for symmetry halves (see aspect_ratio).
    """
    phi_slice = np.asarray(phi_slice, dtype=float)
    g = Grid(phi_slice.shape, tuple(spacing))
    area = area_of_indicator(phi_slice, g, estimator=estimator, level=level)
    W = max((line_thickness_extent(phi_slice[:, j], spacing[0], level) for j in range(g.ny)),
            default=0.0)
    H = max((line_thickness(phi_slice[k, :], spacing[1], level)[1] for k in range(g.nx)),
            default=0.0)
    return {"area": area, "W": W, "H": H}


def line_thickness_extent(values: np.ndarray, h: float, level: float = 0.5) -> float:
    """Furthest ink crossing from the start of a row (symmetry plane at the start)."""
    return line_thickness(values, h, level)[1]


@dataclass
class DiagnosticsRecord:
    """One measurement row; thickness-valued in 2D."""

    time: float
    A_s: float
    A_f: float
    P_max: float
    ink_volume: float
    W: float = float("nan")
    H: float = float("nan")
    delta_P_ref: float = float("nan")

    @property
    def delta_A_pct(self) -> float:
        if not math.isfinite(self.A_f):
            return float("nan")
        return conservation_error(self.A_s, self.A_f)

    @property
    def WH_ratio(self) -> float:
        if not (self.H > 0.0) or math.isnan(self.W):
            return float("nan")
        return aspect_ratio(self.W, self.H)

    def row(self) -> list[float]:
        values = {**asdict(self), "delta_A_pct": self.delta_A_pct, "WH_ratio": self.WH_ratio}
        return [values[c] for c in CSV_COLUMNS]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta_A_pct"] = self.delta_A_pct
        d["WH_ratio"] = self.WH_ratio
        return d


class SteadyStateDetector:
    """Flags steady state once a signal changes by less than ``rel_tol`` over ``window``."""

    def __init__(self, window: float = 0.05, rel_tol: float = 1e-3):
        if not (window > 0.0 and rel_tol > 0.0):
            raise ValueError("window and rel_tol must be positive")
        self.window = window
        self.rel_tol = rel_tol
        self.times: list[float] = []
        self.values: list[float] = []

    def update(self, t: float, value: float) -> bool:
        if self.times and t <= self.times[-1]:
            raise ValueError("times must increase")
        self.times.append(float(t))
        self.values.append(float(value))
        return self.steady

    @property
    def steady(self) -> bool:
        if len(self.times) < 2 or self.times[-1] - self.times[0] < self.window:
            return False
        t_now, v_now = self.times[-1], self.values[-1]
        past = np.interp(t_now - self.window, self.times, self.values)
        lo = int(np.searchsorted(self.times, t_now - self.window))
        recent = np.array([past] + self.values[lo:])
        scale = abs(v_now)
        if scale == 0.0:
            return False
        return float(recent.max() - recent.min()) < self.rel_tol * scale
