"""Variable-density, variable-viscosity incompressible flow on the MAC grid.

The viscous operator is assembled from a discrete strain-rate operator ``E``
as ``A = E^T W E`` with ``W`` holding ``2 mu`` (normal strains, cell centres)
and ``mu`` (shear strain, cell corners) times the control volume.  This gives
the full symmetric ``div(2 mu D)`` for any viscosity field and a symmetric
positive semi-definite matrix.

Two modes:

* ``stokes`` (default): inertia dropped, the quasi-steady Stokes saddle-point
  system is solved in one coupled sparse solve per step.
* ``navier_stokes``: explicit flux-form momentum advection, implicit viscous
  solve, then a variable-density pressure projection (incremental form).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import BoundaryKind, FieldSet, Grid, SIDES, divergence

log = logging.getLogger(__name__)

# tangential velocity is prescribed on these boundary kinds, free on the others
_DIRICHLET_TANGENT = {BoundaryKind.WALL, BoundaryKind.MOVING_WALL, BoundaryKind.INLET}

# node treatments for the tangential velocity on a side
TANGENT_FIXED = 0   # prescribed (walls, inlets)
TANGENT_OPEN = 1    # zero normal gradient; shear stress carried through
TANGENT_SLIP = 2    # zero shear stress (symmetry)


class SolverDivergence(RuntimeError):
    """A linear solve missed its residual tolerance."""

    def __init__(self, message: str, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


@dataclass(frozen=True)
class FlowConfig:
    mode: str = "stokes"
    gravity: tuple[float, float] = (0.0, -9.81)
    pressure_tol: float = 1e-10
    viscous_tol: float = 1e-10
    max_iters: int = 20000

    def __post_init__(self):
        if self.mode not in ("stokes", "navier_stokes"):
            raise ValueError(f"unknown flow mode {self.mode!r}")
        for name in ("pressure_tol", "viscous_tol"):
            if not (0.0 < getattr(self, name) < 1.0):
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


# -- boundary conditions ----------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """Part of a side ``[lo, hi]`` (coordinates along the side) with its own condition."""

    side: str
    lo: float
    hi: float
    kind: BoundaryKind
    rate: float = 0.0
    velocity: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", BoundaryKind(self.kind))
        if self.side not in SIDES:
            raise ValueError(f"unknown side {self.side!r}")
        if self.rate < 0.0:
            raise ValueError("inlet rate must be non-negative")


@dataclass
class BoundarySpec:
    """Per-side data plus optional segment overrides.

    ``rates[side]`` is the volumetric inflow (per unit depth in 2D, m^2/s) of
    an inlet side; ``velocities[side]`` the tangential speed of a moving wall.
    Kinds come from the grid's side tags unless a segment overrides them.
    """

    rates: dict[str, float] = field(default_factory=dict)
    velocities: dict[str, float] = field(default_factory=dict)
    segments: list[Segment] = field(default_factory=list)

    def __post_init__(self):
        if any(r < 0.0 for r in self.rates.values()):
            raise ValueError("inlet rate must be non-negative")


@dataclass
class BoundaryState:
    """Face-level boundary kinds and values after ramping."""

    kinds: dict[str, np.ndarray]          # BoundaryKind values, one per face
    normal: dict[str, np.ndarray]         # prescribed normal velocity (grid-axis sign)
    tangent: dict[str, np.ndarray]        # tangential velocity at the side's nodes
    tangent_mode: dict[str, np.ndarray]   # per node: TANGENT_FIXED, TANGENT_OPEN or TANGENT_SLIP

    @property
    def tangent_free(self) -> dict[str, np.ndarray]:
        return {k: m != TANGENT_FIXED for k, m in self.tangent_mode.items()}


def _side_coords(grid: Grid, side: str) -> tuple[np.ndarray, float]:
    axis = 1 if side in ("left", "right") else 0
    return grid.cell_centers(axis), grid.spacing[axis]


def _face_kinds(grid: Grid, spec: BoundarySpec) -> dict[str, np.ndarray]:
    kinds = {}
    for side in SIDES:
        centres, _ = _side_coords(grid, side)
        k = np.full(centres.size, grid.boundary_tags[side].value, dtype="<U12")
        for seg in spec.segments:
            if seg.side == side:
                k[(centres >= seg.lo) & (centres <= seg.hi)] = seg.kind.value
        kinds[side] = k
    return kinds


def _parabolic(centres: np.ndarray, h: float, lo: float, hi: float, rate: float) -> np.ndarray:
    prof = np.clip((centres - lo) * (hi - centres), 0.0, None)
    total = prof.sum() * h
    if total <= 0.0:
        raise ValueError(f"inlet between {lo} and {hi} covers no face")
    return prof * (rate / total)


def _boundary_solid(grid: Grid, side: str) -> np.ndarray:
    s = grid.solid
    return {"left": s[0, :], "right": s[-1, :], "bottom": s[:, 0], "top": s[:, -1]}[side]


def apply_boundaries(fields: FieldSet, grid: Grid, spec: BoundarySpec, ramp: float = 1.0) -> BoundaryState:
    """Impose ramped boundary values on the boundary faces of ``fields``.

    Inlet faces get a parabolic profile whose discrete flux is exactly
    ``ramp * rate``; moving walls carry ``ramp * velocity`` tangentially.
    """
    if not (0.0 <= ramp <= 1.0):
        raise ValueError(f"ramp must lie in [0, 1], got {ramp}")
    kinds = _face_kinds(grid, spec)
    normal, tangent, free = {}, {}, {}
    inward = {"left": 1.0, "right": -1.0, "bottom": 1.0, "top": -1.0}
    for side in SIDES:
        centres, h = _side_coords(grid, side)
        k = kinds[side]
        blocked = _boundary_solid(grid, side)
        vn = np.zeros(centres.size)
        inlet = (k == BoundaryKind.INLET.value) & ~blocked
        if inlet.any():
            segs = [s for s in spec.segments if s.side == side and s.kind is BoundaryKind.INLET]
            if segs:
                for seg in segs:
                    sel = inlet & (centres >= seg.lo) & (centres <= seg.hi)
                    if seg.rate > 0.0:
                        vn[sel] = _parabolic(centres[sel], h, seg.lo, seg.hi, seg.rate * ramp)
            else:
                lo = centres[inlet].min() - 0.5 * h
                hi = centres[inlet].max() + 0.5 * h
                rate = spec.rates.get(side, 0.0)
                if rate > 0.0:
                    vn[inlet] = _parabolic(centres[inlet], h, lo, hi, rate * ramp)
        vn *= inward[side]

        # tangential values live on the side's nodes, between consecutive faces
        wall_speed = np.zeros(centres.size)
        moving = k == BoundaryKind.MOVING_WALL.value
        side_speed = spec.velocities.get(side, 0.0)
        wall_speed[moving] = side_speed
        for seg in spec.segments:
            if seg.side == side and seg.kind is BoundaryKind.MOVING_WALL:
                wall_speed[moving & (centres >= seg.lo) & (centres <= seg.hi)] = seg.velocity
        wall_speed *= ramp
        dirichlet = np.isin(k, [b.value for b in _DIRICHLET_TANGENT]) | blocked
        wall_speed[blocked] = 0.0
        left_d = np.concatenate(([dirichlet[0]], dirichlet))
        right_d = np.concatenate((dirichlet, [dirichlet[-1]]))
        node_free = ~(left_d & right_d)
        sym = k == BoundaryKind.SYMMETRY.value
        slip = np.concatenate(([sym[0]], sym)) | np.concatenate((sym, [sym[-1]]))
        left_s = np.concatenate(([wall_speed[0]], wall_speed))
        right_s = np.concatenate((wall_speed, [wall_speed[-1]]))
        tangent[side] = np.where(node_free, 0.0, 0.5 * (left_s + right_s))
        free[side] = np.where(node_free, np.where(slip, TANGENT_SLIP, TANGENT_OPEN), TANGENT_FIXED)
        normal[side] = vn

        fixed = ~np.isin(k, [BoundaryKind.OPEN.value, BoundaryKind.PERIODIC.value]) | blocked
        if side == "left" and not grid.periodic(0):
            fields.u[0, fixed] = vn[fixed]
        elif side == "right" and not grid.periodic(0):
            fields.u[-1, fixed] = vn[fixed]
        elif side == "bottom" and not grid.periodic(1):
            fields.v[fixed, 0] = vn[fixed]
        elif side == "top" and not grid.periodic(1):
            fields.v[fixed, -1] = vn[fixed]
    return BoundaryState(kinds, normal, tangent, free)


def cosine_ramp(t: float, t_ramp: float) -> float:
    """Smooth 0 -> 1 ramp over ``[0, t_ramp]``."""
    if t_ramp <= 0.0 or t >= t_ramp:
        return 1.0
    if t <= 0.0:
        return 0.0
    return 0.5 * (1.0 - math.cos(math.pi * t / t_ramp))


# -- discrete operators -----------------------------------------------------


class StaggeredOperators:
    """Index bookkeeping and geometry-only sparse operators for one grid/BC layout.

    Raw velocity vector: all u-faces, all v-faces, then the tangential
    boundary node values (bottom, top, left, right).  ``P`` maps free
    unknowns onto raw entries; periodic faces share one unknown.
    """

    def __init__(self, grid: Grid, state: BoundaryState):
        self.grid = grid
        nx, ny = grid.shape
        dx, dy = grid.spacing
        self.nu = (nx + 1) * ny
        self.nv = nx * (ny + 1)
        self.off_ghost = self.nu + self.nv
        self.ghost_sizes = {"bottom": nx + 1, "top": nx + 1, "left": ny + 1, "right": ny + 1}
        self.ghost_off = {}
        o = self.off_ghost
        for side in ("bottom", "top", "left", "right"):
            self.ghost_off[side] = o
            o += self.ghost_sizes[side]
        self.nraw = o
        self.uid = np.arange(self.nu).reshape(nx + 1, ny)
        self.vid = self.nu + np.arange(self.nv).reshape(nx, ny + 1)

        solid = grid.solid
        px, py = grid.periodic(0), grid.periodic(1)

        # faces touching a solid cell
        u_solid = np.zeros((nx + 1, ny), dtype=bool)
        u_solid[:-1] |= solid
        u_solid[1:] |= solid
        v_solid = np.zeros((nx, ny + 1), dtype=bool)
        v_solid[:, :-1] |= solid
        v_solid[:, 1:] |= solid
        # faces with every in-domain neighbour solid
        u_inner = np.ones((nx + 1, ny), dtype=bool)
        u_inner[:-1] &= solid
        u_inner[1:] &= solid
        v_inner = np.ones((nx, ny + 1), dtype=bool)
        v_inner[:, :-1] &= solid
        v_inner[:, 1:] &= solid
        if px:
            u_solid[0] |= solid[-1]; u_solid[-1] = u_solid[0]
            u_inner[0] &= solid[-1]; u_inner[-1] = u_inner[0]
        if py:
            v_solid[:, 0] |= solid[:, -1]; v_solid[:, -1] = v_solid[:, 0]
            v_inner[:, 0] &= solid[:, -1]; v_inner[:, -1] = v_inner[:, 0]
        self.u_solid, self.v_solid = u_solid, v_solid

        # free / fixed classification of raw entries
        u_free = ~u_solid
        v_free = ~v_solid
        if not px:
            u_free[0] &= state.kinds["left"] == BoundaryKind.OPEN.value
            u_free[-1] &= state.kinds["right"] == BoundaryKind.OPEN.value
        if not py:
            v_free[:, 0] &= state.kinds["bottom"] == BoundaryKind.OPEN.value
            v_free[:, -1] &= state.kinds["top"] == BoundaryKind.OPEN.value
        self.u_free, self.v_free = u_free, v_free
        has_open = (not px and (u_free[0].any() or u_free[-1].any())) or \
                   (not py and (v_free[:, 0].any() or v_free[:, -1].any()))

        raw_to_free = -np.ones(self.nraw, dtype=np.int64)
        nfree = 0
        flat = self.uid[u_free]
        if px:
            # u[nx] aliases u[0]
            alias = np.zeros((nx + 1, ny), dtype=bool)
            alias[-1] = True
            flat = self.uid[u_free & ~alias]
        raw_to_free[flat] = np.arange(flat.size)
        nfree += flat.size
        if px:
            raw_to_free[self.uid[-1]] = raw_to_free[self.uid[0]]
        flat = self.vid[v_free]
        if py:
            alias = np.zeros((nx, ny + 1), dtype=bool)
            alias[:, -1] = True
            flat = self.vid[v_free & ~alias]
        raw_to_free[flat] = nfree + np.arange(flat.size)
        nfree += flat.size
        if py:
            raw_to_free[self.vid[:, -1]] = raw_to_free[self.vid[:, 0]]
        # open-side tangential ghosts copy the adjacent face (zero normal gradient)
        ghost_src = -np.ones(self.nraw, dtype=np.int64)
        sources = {
            "bottom": lambda n: self.uid[n, 0], "top": lambda n: self.uid[n, ny - 1],
            "left": lambda n: self.vid[0, n], "right": lambda n: self.vid[nx - 1, n],
        }
        for side, src in sources.items():
            if (side in ("left", "right") and px) or (side in ("bottom", "top") and py):
                continue
            nodes = np.flatnonzero(state.tangent_mode[side] == TANGENT_OPEN)
            ghosts = self.ghost_off[side] + nodes
            ghost_src[ghosts] = src(nodes)
            raw_to_free[ghosts] = raw_to_free[src(nodes)]
        self.ghost_src = ghost_src
        self.raw_to_free = raw_to_free
        self.nfree = nfree
        rows = np.flatnonzero(raw_to_free >= 0)
        self.P = sp.csr_matrix((np.ones(rows.size), (rows, raw_to_free[rows])), shape=(self.nraw, nfree))
        self.fixed = raw_to_free < 0

        # control volumes of the momentum cells
        vol = np.zeros(self.nraw)
        uv = np.full((nx + 1, ny), dx * dy)
        vv = np.full((nx, ny + 1), dx * dy)
        uv[0] *= 0.5; uv[-1] *= 0.5
        vv[:, 0] *= 0.5; vv[:, -1] *= 0.5
        vol[self.uid.ravel()] = uv.ravel()
        vol[self.vid.ravel()] = vv.ravel()
        self.volume = vol

        # divergence (area weighted) on fluid cells
        fluid = ~solid
        cid = -np.ones((nx, ny), dtype=np.int64)
        cid[fluid] = np.arange(fluid.sum())
        self.cell_id = cid
        self.ncell = int(fluid.sum())
        I, J = np.nonzero(fluid)
        c = cid[I, J]
        rows = np.concatenate([c, c, c, c])
        cols = np.concatenate([self.uid[I + 1, J], self.uid[I, J], self.vid[I, J + 1], self.vid[I, J]])
        vals = np.concatenate([np.full(c.size, dy), np.full(c.size, -dy),
                               np.full(c.size, dx), np.full(c.size, -dx)])
        self.B = sp.csr_matrix((vals, (rows, cols)), shape=(self.ncell, self.nraw))
        self.Bf = (self.B @ self.P).tocsr()
        self.pin = None if has_open else 0

        # strain operator: rows = [exx cells, eyy cells, gxy nodes]
        ncells = nx * ny
        allI, allJ = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        allI, allJ = allI.ravel(), allJ.ravel()
        r = np.arange(ncells)
        e_rows = [r, r, ncells + r, ncells + r]
        e_cols = [self.uid[allI + 1, allJ], self.uid[allI, allJ], self.vid[allI, allJ + 1], self.vid[allI, allJ]]
        e_vals = [np.full(ncells, 1 / dx), np.full(ncells, -1 / dx), np.full(ncells, 1 / dy), np.full(ncells, -1 / dy)]

        nn = (nx + 1) * (ny + 1)
        node_rows = 2 * ncells + np.arange(nn).reshape(nx + 1, ny + 1)
        node_on = np.ones((nx + 1, ny + 1), dtype=bool)
        NI, NJ = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="ij")

        def add(rows_, cols_, vals_):
            e_rows.append(rows_); e_cols.append(cols_); e_vals.append(vals_)

        # ---- du/dy at nodes
        inner = (NJ > 0) & (NJ < ny)
        ni, nj = NI[inner], NJ[inner]
        a_in = u_inner[ni, nj - 1]
        b_in = u_inner[ni, nj]
        h = np.where(a_in ^ b_in, 0.5 * dy, dy)
        add(node_rows[ni, nj], self.uid[ni, nj], np.where(b_in, 0.0, 1.0 / h))
        add(node_rows[ni, nj], self.uid[ni, nj - 1], np.where(a_in, 0.0, -1.0 / h))
        i_all = np.arange(nx + 1)
        if py:
            add(node_rows[i_all, 0], self.uid[i_all, 0], np.full(nx + 1, 1 / dy))
            add(node_rows[i_all, 0], self.uid[i_all, ny - 1], np.full(nx + 1, -1 / dy))
            node_on[:, ny] = False
        else:
            add(node_rows[i_all, 0], self.uid[i_all, 0], np.full(nx + 1, 2 / dy))
            add(node_rows[i_all, 0], self.ghost_off["bottom"] + i_all, np.full(nx + 1, -2 / dy))
            add(node_rows[i_all, ny], self.ghost_off["top"] + i_all, np.full(nx + 1, 2 / dy))
            add(node_rows[i_all, ny], self.uid[i_all, ny - 1], np.full(nx + 1, -2 / dy))
        k_split = len(e_rows)
        # ---- dv/dx at nodes
        inner = (NI > 0) & (NI < nx)
        ni, nj = NI[inner], NJ[inner]
        a_in = v_inner[ni - 1, nj]
        b_in = v_inner[ni, nj]
        h = np.where(a_in ^ b_in, 0.5 * dx, dx)
        add(node_rows[ni, nj], self.vid[ni, nj], np.where(b_in, 0.0, 1.0 / h))
        add(node_rows[ni, nj], self.vid[ni - 1, nj], np.where(a_in, 0.0, -1.0 / h))
        j_all = np.arange(ny + 1)
        if px:
            add(node_rows[0, j_all], self.vid[0, j_all], np.full(ny + 1, 1 / dx))
            add(node_rows[0, j_all], self.vid[nx - 1, j_all], np.full(ny + 1, -1 / dx))
            node_on[nx, :] = False
        else:
            add(node_rows[0, j_all], self.vid[0, j_all], np.full(ny + 1, 2 / dx))
            add(node_rows[0, j_all], self.ghost_off["left"] + j_all, np.full(ny + 1, -2 / dx))
            add(node_rows[nx, j_all], self.ghost_off["right"] + j_all, np.full(ny + 1, 2 / dx))
            add(node_rows[nx, j_all], self.vid[nx - 1, j_all], np.full(ny + 1, -2 / dx))

        nrows = 2 * ncells + nn
        self.E = sp.csr_matrix((np.concatenate(e_vals), (np.concatenate(e_rows), np.concatenate(e_cols))),
                               shape=(nrows, self.nraw))
        self.EP = (self.E @ self.P).tocsr()

        def node_part(lo, hi):
            return sp.csr_matrix((np.concatenate(e_vals[lo:hi]),
                                  (np.concatenate(e_rows[lo:hi]) - 2 * ncells, np.concatenate(e_cols[lo:hi]))),
                                 shape=(nn, self.nraw))

        self.E_dudy = node_part(4, k_split)
        self.E_dvdx = node_part(k_split, len(e_rows))

        # On open sides the symmetric operator leaves the control volumes next
        # to the side without the shear mu * (tangential derivative of the
        # normal velocity) on their boundary face; T_* put it back.
        def coupling(entries):
            if not entries:
                return sp.csr_matrix((self.nraw, nn))
            rows, cols, vals = (np.concatenate(x) for x in zip(*entries))
            return sp.csr_matrix((vals, (rows, cols)), shape=(self.nraw, nn))

        lr, tb = [], []
        node_index = np.arange(nn).reshape(nx + 1, ny + 1)
        if not px:
            for side, i_node, i_face, sign in (("left", 0, 0, 1.0), ("right", nx, nx - 1, -1.0)):
                j = np.flatnonzero(state.tangent_mode[side] == TANGENT_OPEN)
                lr.append((self.vid[i_face, j], node_index[i_node, j], np.full(j.size, sign * dy)))
        if not py:
            for side, j_node, j_face, sign in (("bottom", 0, 0, 1.0), ("top", ny, ny - 1, -1.0)):
                i = np.flatnonzero(state.tangent_mode[side] == TANGENT_OPEN)
                tb.append((self.uid[i, j_face], node_index[i, j_node], np.full(i.size, sign * dx)))
        self.T_lr = coupling(lr)
        self.T_tb = coupling(tb)
        self.has_open_shear = self.T_lr.nnz + self.T_tb.nnz > 0

        # node bookkeeping: adjacent fluid cells (with periodic wrap)
        cnt = np.zeros((nx + 1, ny + 1))
        self._node_cells = []
        for di in (-1, 0):
            for dj in (-1, 0):
                ci, cj = NI + di, NJ + dj
                ok = np.ones_like(ci, dtype=bool)
                if px:
                    ci = ci % nx
                else:
                    ok &= (ci >= 0) & (ci < nx)
                if py:
                    cj = cj % ny
                else:
                    ok &= (cj >= 0) & (cj < ny)
                ci = np.clip(ci, 0, nx - 1); cj = np.clip(cj, 0, ny - 1)
                ok &= fluid[ci, cj]
                self._node_cells.append((ci, cj, ok))
                cnt += ok
        self.node_count = cnt
        for side, sel in (("bottom", (slice(None), 0)), ("top", (slice(None), ny)),
                          ("left", (0, slice(None))), ("right", (nx, slice(None)))):
            if (side in ("left", "right") and px) or (side in ("bottom", "top") and py):
                continue
            node_on[sel] &= state.tangent_mode[side] != TANGENT_SLIP
        self.node_on = node_on & (cnt > 0)
        self.cell_fluid = fluid.ravel()
        self.nrows = nrows
        self.ncells_all = ncells

    # -- per-step quantities

    def node_average(self, cell_values: np.ndarray) -> np.ndarray:
        total = np.zeros_like(self.node_count)
        for ci, cj, ok in self._node_cells:
            total += np.where(ok, cell_values[ci, cj], 0.0)
        return total / np.maximum(self.node_count, 1.0)

    def strain_weights(self, mu: np.ndarray) -> np.ndarray:
        g = self.grid
        vol = g.cell_volume
        mc = np.where(g.solid, 0.0, mu).ravel()
        mn = self.node_average(mu)
        node_w = mn * vol * self.node_count / 4.0 * self.node_on
        return np.concatenate([2.0 * mc * vol, 2.0 * mc * vol, node_w.ravel()])

    def open_shear(self, mu: np.ndarray):
        """Raw-space operator of the boundary shear restored on open sides."""
        mn = sp.diags(self.node_average(mu).ravel())
        return self.T_lr @ mn @ self.E_dudy + self.T_tb @ mn @ self.E_dvdx

    def face_density(self, rho: np.ndarray) -> np.ndarray:
        """Density on every raw entry (mean of the fluid cells sharing the face)."""
        g = self.grid
        nx, ny = g.shape
        r = np.where(g.solid, 0.0, rho)
        f = (~g.solid).astype(float)
        ru = np.zeros((nx + 1, ny)); cu = np.zeros((nx + 1, ny))
        ru[:-1] += r; ru[1:] += r; cu[:-1] += f; cu[1:] += f
        rv = np.zeros((nx, ny + 1)); cv = np.zeros((nx, ny + 1))
        rv[:, :-1] += r; rv[:, 1:] += r; cv[:, :-1] += f; cv[:, 1:] += f
        if g.periodic(0):
            ru[0] += r[-1]; ru[-1] += r[0]; cu[0] += f[-1]; cu[-1] += f[0]
        if g.periodic(1):
            rv[:, 0] += r[:, -1]; rv[:, -1] += r[:, 0]; cv[:, 0] += f[:, -1]; cv[:, -1] += f[:, 0]
        out = np.zeros(self.nraw)
        out[self.uid.ravel()] = (ru / np.maximum(cu, 1.0)).ravel()
        out[self.vid.ravel()] = (rv / np.maximum(cv, 1.0)).ravel()
        return out

    def raw_velocity(self, fields: FieldSet, state: BoundaryState) -> np.ndarray:
        raw = np.zeros(self.nraw)
        raw[self.uid.ravel()] = fields.u.ravel()
        raw[self.vid.ravel()] = fields.v.ravel()
        for side in ("bottom", "top", "left", "right"):
            o = self.ghost_off[side]
            raw[o:o + self.ghost_sizes[side]] = state.tangent[side]
        raw[self.uid[self.u_solid]] = 0.0
        raw[self.vid[self.v_solid]] = 0.0
        dep = self.ghost_src >= 0
        raw[dep] = raw[self.ghost_src[dep]]
        return raw

    def store_velocity(self, fields: FieldSet, raw: np.ndarray) -> None:
        fields.u[...] = raw[self.uid]
        fields.v[...] = raw[self.vid]

    def body_force(self, rho_raw: np.ndarray, gravity) -> np.ndarray:
        f = np.zeros(self.nraw)
        gx, gy = gravity
        f[self.uid.ravel()] = gx
        f[self.vid.ravel()] = gy
        return f * rho_raw * self.volume


@dataclass
class FlowStats:
    iterations: dict[str, int] = field(default_factory=dict)
    max_divergence: float = 0.0
    residual: float = 0.0


def _cg(A, b, tol: float, maxiter: int, label: str, x0=None):
    diag = A.diagonal()
    diag = np.where(diag > 0.0, diag, 1.0)
    M = sp.diags(1.0 / diag)
    history = []
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0

    def cb(xk):
        history.append(float(np.linalg.norm(b - A @ xk)) / bnorm)

    x, info = spla.cg(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    if info != 0:
        raise SolverDivergence(f"{label} solve did not reach rtol={tol:g} in {maxiter} iterations",
                               history)
    return x, len(history)


def _pinned(ops: StaggeredOperators):
    keep = np.ones(ops.ncell, dtype=bool)
    if ops.pin is not None:
        keep[ops.pin] = False
    return keep


class FlowSolver:
    """Owns the operators for one grid and boundary layout; advances (u, v, p)."""

    def __init__(self, grid: Grid, spec: BoundarySpec, config: FlowConfig | None = None):
        self.grid = grid
        self.spec = spec
        self.config = config or FlowConfig()
        probe = FieldSet.zeros(grid)
        self.ops = StaggeredOperators(grid, apply_boundaries(probe, grid, spec, 1.0))

    def advance(self, fields: FieldSet, rho: np.ndarray, mu: np.ndarray, dt: float,
                ramp: float = 1.0) -> FlowStats:
        return advance_flow(fields, rho, mu, self.config, dt, self.grid, self.spec, ramp, self.ops)


def _viscous_matrix(ops: StaggeredOperators, mu: np.ndarray):
    W = sp.diags(ops.strain_weights(mu))
    A_raw = ops.E.T @ W @ ops.E
    A = (ops.P.T @ A_raw @ ops.P).tocsr()
    return A_raw, A


def advance_flow(fields: FieldSet, rho: np.ndarray, mu: np.ndarray, config: FlowConfig, dt: float,
                 grid: Grid, spec: BoundarySpec, ramp: float = 1.0,
                 ops: StaggeredOperators | None = None) -> FlowStats:
    """One flow step; mutates ``fields.u``, ``fields.v`` and ``fields.p``."""
    if not (dt > 0.0):
        raise ValueError("dt must be positive")
    if np.any(rho[grid.fluid] <= 0.0) or np.any(mu[grid.fluid] <= 0.0):
        raise ValueError("density and viscosity must be positive")
    state = apply_boundaries(fields, grid, spec, ramp)
    if ops is None:
        ops = StaggeredOperators(grid, state)
    if config.mode == "stokes":
        return _stokes_step(fields, rho, mu, config, ops, state)
    return _projection_step(fields, rho, mu, config, dt, ops, state)


def _stokes_step(fields, rho, mu, config: FlowConfig, ops: StaggeredOperators, state) -> FlowStats:
    A_raw, A = _viscous_matrix(ops, mu)
    if ops.has_open_shear:
        C_raw = ops.open_shear(mu)
        A_raw = A_raw + C_raw
        A = (A + ops.P.T @ C_raw @ ops.P).tocsr()
    raw = ops.raw_velocity(fields, state)
    fixed_raw = np.where(ops.fixed, raw, 0.0)
    rho_raw = ops.face_density(rho)
    f = ops.body_force(rho_raw, config.gravity) - A_raw @ fixed_raw
    rhs_u = ops.P.T @ f
    rhs_p = ops.B @ fixed_raw
    keep = _pinned(ops)
    Bf = ops.Bf[keep]
    # continuity rows and pressure unknowns share one scale so both blocks
    # carry comparable magnitudes
    scale = float(np.abs(A.diagonal()).mean() / (np.abs(Bf.data).mean() if Bf.nnz else 1.0))
    K = sp.bmat([[A, -scale * Bf.T], [-scale * Bf, None]], format="csc")
    rhs = np.concatenate([rhs_u, scale * rhs_p[keep]])
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise SolverDivergence(f"coupled Stokes matrix is singular ({exc})") from exc
    sol = lu.solve(rhs)
    sol += lu.solve(rhs - K @ sol)
    res = float(np.linalg.norm(K @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if not np.all(np.isfinite(sol)) or res > config.pressure_tol * 1e3:
        raise SolverDivergence(f"coupled Stokes solve failed (relative residual {res:.3e})", [res])
    x = sol[:ops.nfree]
    p_cells = np.zeros(ops.ncell)
    p_cells[keep] = scale * sol[ops.nfree:]
    raw_new = fixed_raw + ops.P @ x
    ops.store_velocity(fields, raw_new)
    _store_pressure(fields, ops, p_cells)
    return FlowStats({"stokes": 1}, _max_div(fields, ops), res)


def _store_pressure(fields: FieldSet, ops: StaggeredOperators, p_cells: np.ndarray) -> None:
    fields.p[...] = 0.0
    fields.p[ops.grid.fluid] = p_cells


def _max_div(fields: FieldSet, ops: StaggeredOperators) -> float:
    div = divergence(ops.grid, fields.u, fields.v)
    return float(np.abs(div[ops.grid.fluid]).max(initial=0.0))


def momentum_advection(fields: FieldSet, ops: StaggeredOperators, state: BoundaryState):
    """Flux-form ``div(v v)`` on u- and v-faces (central fluxes, open-boundary backflow clamp)."""
    g = ops.grid
    nx, ny = g.shape
    dx, dy = g.spacing
    u, v = fields.u, fields.v
    px, py = g.periodic(0), g.periodic(1)

    # x-flux of u-momentum at cell centres, y-flux at nodes
    uc = 0.5 * (u[1:] + u[:-1])
    fxx = uc * uc
    vc = 0.5 * (v[:, 1:] + v[:, :-1])
    fyy = vc * vc
    # u and v at nodes
    u_n = np.empty((nx + 1, ny + 1))
    u_n[:, 1:-1] = 0.5 * (u[:, 1:] + u[:, :-1])
    v_n = np.empty((nx + 1, ny + 1))
    v_n[1:-1, :] = 0.5 * (v[1:, :] + v[:-1, :])
    if py:
        u_n[:, 0] = u_n[:, -1] = 0.5 * (u[:, 0] + u[:, -1])
    else:
        u_n[:, 0] = np.where(state.tangent_free["bottom"], u[:, 0], state.tangent["bottom"])
        u_n[:, -1] = np.where(state.tangent_free["top"], u[:, -1], state.tangent["top"])
    if px:
        v_n[0] = v_n[-1] = 0.5 * (v[0] + v[-1])
    else:
        v_n[0] = np.where(state.tangent_free["left"], v[0], state.tangent["left"])
        v_n[-1] = np.where(state.tangent_free["right"], v[-1], state.tangent["right"])
    # normal velocity at nodes for the cross fluxes
    v_at_un = np.empty((nx + 1, ny + 1))   # v interpolated to nodes along x
    v_at_un[1:-1] = 0.5 * (v[1:] + v[:-1])
    v_at_un[0] = v_n[0]
    v_at_un[-1] = v_n[-1]
    u_at_vn = np.empty((nx + 1, ny + 1))
    u_at_vn[:, 1:-1] = 0.5 * (u[:, 1:] + u[:, :-1])
    u_at_vn[:, 0] = u_n[:, 0]
    u_at_vn[:, -1] = u_n[:, -1]
    fxy = u_n * v_at_un        # flux of u through horizontal node lines
    fyx = v_n * u_at_vn        # flux of v through vertical node lines

    if not py:
        # open bottom/top: zero incoming momentum flux
        for j, sign in ((0, 1.0), (-1, -1.0)):
            incoming = sign * v_at_un[:, j] > 0.0
            fxy[:, j] = np.where(incoming, 0.0, fxy[:, j])
    if not px:
        for i, sign in ((0, 1.0), (-1, -1.0)):
            incoming = sign * u_at_vn[i, :] > 0.0
            fyx[i, :] = np.where(incoming, 0.0, fyx[i, :])

    adv_u = np.zeros((nx + 1, ny))
    adv_u[1:-1] = (fxx[1:] - fxx[:-1]) / dx
    if px:
        adv_u[0] = adv_u[-1] = (fxx[0] - fxx[-1]) / dx
    else:
        # open boundary faces: one-sided, clamp incoming
        adv_u[0] = np.where(u[0] > 0.0, 0.0, 2.0 * (fxx[0] - u[0] * u[0]) / dx)
        adv_u[-1] = np.where(u[-1] < 0.0, 0.0, 2.0 * (u[-1] * u[-1] - fxx[-1]) / dx)
    adv_u += (fxy[:, 1:] - fxy[:, :-1]) / dy

    adv_v = np.zeros((nx, ny + 1))
    adv_v[:, 1:-1] = (fyy[:, 1:] - fyy[:, :-1]) / dy
    if py:
        adv_v[:, 0] = adv_v[:, -1] = (fyy[:, 0] - fyy[:, -1]) / dy
    else:
        adv_v[:, 0] = np.where(v[:, 0] > 0.0, 0.0, 2.0 * (fyy[:, 0] - v[:, 0] * v[:, 0]) / dy)
        adv_v[:, -1] = np.where(v[:, -1] < 0.0, 0.0, 2.0 * (v[:, -1] * v[:, -1] - fyy[:, -1]) / dy)
    adv_v += (fyx[1:, :] - fyx[:-1, :]) / dx
    return adv_u, adv_v


def _projection_step(fields, rho, mu, config: FlowConfig, dt, ops: StaggeredOperators, state) -> FlowStats:
    stats = FlowStats()
    adv_u, adv_v = momentum_advection(fields, ops, state)
    raw = ops.raw_velocity(fields, state)
    adv = np.zeros(ops.nraw)
    adv[ops.uid.ravel()] = adv_u.ravel()
    adv[ops.vid.ravel()] = adv_v.ravel()
    rho_raw = ops.face_density(rho)
    mass = rho_raw * ops.volume

    fixed_raw = np.where(ops.fixed, raw, 0.0)
    A_raw, A = _viscous_matrix(ops, mu)
    keep = _pinned(ops)
    p_cells = fields.p[ops.grid.fluid]
    grad_p = ops.B.T @ p_cells                      # pressure force on raw entries
    rhs_raw = mass / dt * (raw - dt * adv) + ops.body_force(rho_raw, config.gravity) \
        + grad_p - A_raw @ fixed_raw
    if ops.has_open_shear:
        # lagged so the implicit matrix stays symmetric for CG
        rhs_raw -= ops.open_shear(mu) @ raw
    M_free = ops.P.T @ mass
    H = (A + sp.diags(M_free / dt)).tocsr()
    x0 = ops.P.T @ raw / np.maximum(ops.P.T @ np.ones(ops.nraw), 1.0)
    ustar, it = _cg(H, ops.P.T @ rhs_raw, config.viscous_tol, config.max_iters, "viscous", x0=x0)
    stats.iterations["viscous"] = it

    # projection: B U = 0 with U = U* + dt M^-1 B^T dp
    inv_m = np.zeros(ops.nfree)
    M_safe = np.where(M_free > 0.0, M_free, 1.0)
    inv_m[:] = 1.0 / M_safe
    Bf = ops.Bf[keep]
    L = (Bf @ sp.diags(inv_m) @ Bf.T).tocsr()
    div_star = ops.Bf @ ustar + ops.B @ fixed_raw
    dp_k, it = _cg(L, -div_star[keep] / dt, config.pressure_tol, config.max_iters, "pressure")
    stats.iterations["pressure"] = it
    dp = np.zeros(ops.ncell)
    dp[keep] = dp_k
    unew = ustar + dt * inv_m * (ops.Bf.T @ dp)
    ops.store_velocity(fields, fixed_raw + ops.P @ unew)
    # rotational correction: removes the splitting error that otherwise makes
    # the pressure converge slowly when viscosity dominates
    div_cell = div_star / ops.grid.cell_volume
    _store_pressure(fields, ops, p_cells + dp - mu[ops.grid.fluid] * div_cell)
    stats.max_divergence = _max_div(fields, ops)
    return stats


# -- references and reductions ----------------------------------------------


def hagen_poiseuille_reference(mu: float, L: float, flow_rate: float, R: float) -> float:
    """Pipe pressure drop ``8 mu L Q / (pi R^4)`` for full-pipe rate ``Q``."""
    for name, val in (("mu", mu), ("L", L), ("flow_rate", flow_rate), ("R", R)):
        if not (val > 0.0):
            raise ValueError(f"{name} must be positive")
    return 8.0 * mu * L * flow_rate / (math.pi * R ** 4)


def plane_poiseuille_reference(mu: float, L: float, rate_per_depth: float, width: float) -> float:
    """Channel pressure drop ``12 mu L q / w^3`` for per-depth rate ``q``."""
    for name, val in (("mu", mu), ("L", L), ("rate_per_depth", rate_per_depth), ("width", width)):
        if not (val > 0.0):
            raise ValueError(f"{name} must be positive")
    return 12.0 * mu * L * rate_per_depth / width ** 3


def max_pressure(fields: FieldSet, grid: Grid | None = None) -> float:
    """Largest cell pressure over fluid cells."""
    if grid is None:
        return float(fields.p.max())
    return float(fields.p[grid.fluid].max())
