"""Uniform staggered (MAC) Cartesian grid and discrete field storage.

Layout (2D, index ``[i, j]`` with ``i`` along x = print direction and ``j``
along y = height above the bed):

* ``u`` lives on x-faces, shape ``(nx + 1, ny)``
* ``v`` lives on y-faces, shape ``(nx, ny + 1)``
* ``p`` and ``phi`` live at cell centres, shape ``(nx, ny)``

The grid stores its shape and spacing as tuples so that a third axis can be
added without changing the public surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SIDES = ("left", "right", "bottom", "top")

#: default ceiling on the number of cells a grid may allocate
DEFAULT_MAX_CELLS = 4_000_000


class BoundaryKind(str, Enum):
    WALL = "wall"
    MOVING_WALL = "moving_wall"
    INLET = "inlet"
    OPEN = "open"
    SYMMETRY = "symmetry"
    PERIODIC = "periodic"


class GridError(ValueError):
    pass


def _default_tags() -> dict[str, BoundaryKind]:
    return {side: BoundaryKind.WALL for side in SIDES}


@dataclass(frozen=True)
class Grid:
    """Immutable uniform grid with one boundary tag per domain side.

    ``solid`` marks cells that are not part of the fluid domain (nozzle
    walls); faces touching a solid cell are no-slip, no-flux walls.
    """

    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...] = (0.0, 0.0)
    boundary_tags: dict[str, BoundaryKind] = field(default_factory=_default_tags)
    solid: np.ndarray | None = None

    def __post_init__(self):
        if len(self.shape) != len(self.spacing) or len(self.shape) != len(self.origin):
            raise GridError("shape, spacing and origin must have the same dimension")
        if len(self.shape) != 2:
            raise GridError("only 2D grids are implemented")
        if any(n < 1 for n in self.shape):
            raise GridError(f"cell counts must be positive, got {self.shape}")
        if any(not (h > 0.0) for h in self.spacing):
            raise GridError(f"cell sizes must be positive, got {self.spacing}")
        tags = {side: BoundaryKind(self.boundary_tags[side]) for side in SIDES
                if side in self.boundary_tags}
        missing = set(SIDES) - set(tags)
        extra = set(self.boundary_tags) - set(SIDES)
        if missing or extra:
            raise GridError(f"every side needs exactly one tag (missing={missing}, unknown={extra})")
        for a, b in (("left", "right"), ("bottom", "top")):
            if (tags[a] is BoundaryKind.PERIODIC) != (tags[b] is BoundaryKind.PERIODIC):
                raise GridError(f"periodic tag must be set on both {a} and {b}")
        object.__setattr__(self, "boundary_tags", tags)
        if self.solid is None:
            solid = np.zeros(self.shape, dtype=bool)
        else:
            solid = np.array(self.solid, dtype=bool)
            if solid.shape != self.shape:
                raise GridError(f"solid mask shape {solid.shape} != grid shape {self.shape}")
        solid.setflags(write=False)
        object.__setattr__(self, "solid", solid)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def nx(self) -> int:
        return self.shape[0]

    @property
    def ny(self) -> int:
        return self.shape[1]

    @property
    def dx(self) -> float:
        return self.spacing[0]

    @property
    def dy(self) -> float:
        return self.spacing[1]

    @property
    def m_max(self) -> float:
        return max(self.spacing)

    @property
    def m_min(self) -> float:
        return min(self.spacing)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    @property
    def extent(self) -> tuple[float, ...]:
        return tuple(n * h for n, h in zip(self.shape, self.spacing))

    @property
    def fluid(self) -> np.ndarray:
        return ~self.solid

    def periodic(self, axis: int) -> bool:
        side = ("left", "bottom")[axis]
        return self.boundary_tags[side] is BoundaryKind.PERIODIC

    def cell_centers(self, axis: int) -> np.ndarray:
        n, h, o = self.shape[axis], self.spacing[axis], self.origin[axis]
        return o + (np.arange(n) + 0.5) * h

    def face_coords(self, axis: int) -> np.ndarray:
        n, h, o = self.shape[axis], self.spacing[axis], self.origin[axis]
        return o + np.arange(n + 1) * h

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinates as two ``(nx, ny)`` arrays."""
        return np.meshgrid(self.cell_centers(0), self.cell_centers(1), indexing="ij")

    def with_tags(self, **tags: BoundaryKind | str) -> "Grid":
        new = dict(self.boundary_tags)
        new.update({k: BoundaryKind(v) for k, v in tags.items()})
        return Grid(self.shape, self.spacing, self.origin, new, self.solid)

    def with_solid(self, solid: np.ndarray) -> "Grid":
        return Grid(self.shape, self.spacing, self.origin, self.boundary_tags, solid)

    def describe(self) -> dict:
        return {
            "shape": list(self.shape),
            "spacing_m": list(self.spacing),
            "origin_m": list(self.origin),
            "boundary_tags": {k: v.value for k, v in self.boundary_tags.items()},
            "solid_cells": int(self.solid.sum()),
        }


def build_grid(extent, target_cell_size: float, origin=None, boundary_tags=None,
               solid=None, max_cells: int = DEFAULT_MAX_CELLS) -> Grid:
    """Smallest uniform grid covering ``extent`` with cells no larger than the target.

    Cell counts are ``ceil(extent / target)`` per axis (with a relative slack of
    1e-9 so exact divisions are not bumped up by round-off), and the actual
    spacing is ``extent / count``.
    """
    extent = tuple(float(e) for e in extent)
    if any(not (e > 0.0) for e in extent):
        raise GridError(f"extent must be strictly positive, got {extent}")
    if not (target_cell_size > 0.0):
        raise GridError(f"target cell size must be positive, got {target_cell_size}")
    counts = tuple(max(1, math.ceil(e / target_cell_size * (1.0 - 1e-9))) for e in extent)
    total = math.prod(counts)
    if total > max_cells:
        raise GridError(f"{counts} = {total} cells exceeds the budget of {max_cells}")
    spacing = tuple(e / n for e, n in zip(extent, counts))
    if origin is None:
        origin = (0.0,) * len(extent)
    tags = _default_tags() if boundary_tags is None else dict(boundary_tags)
    return Grid(counts, spacing, tuple(float(o) for o in origin), tags, solid)


@dataclass
class FieldSet:
    """Staggered velocity, cell pressure and level-set field of one simulation."""

    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    phi: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid, phi: float | np.ndarray = 1.0) -> "FieldSet":
        nx, ny = grid.shape
        phi_arr = np.empty((nx, ny))
        phi_arr[...] = phi
        return cls(np.zeros((nx + 1, ny)), np.zeros((nx, ny + 1)), np.zeros((nx, ny)), phi_arr)

    def check(self, grid: Grid) -> None:
        nx, ny = grid.shape
        expected = {"u": (nx + 1, ny), "v": (nx, ny + 1), "p": (nx, ny), "phi": (nx, ny)}
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise GridError(f"{name} has shape {got}, staggered layout needs {shape}")
        if not np.all(np.isfinite(self.phi)):
            raise FloatingPointError("phi contains non-finite values")

    def copy(self) -> "FieldSet":
        return FieldSet(self.u.copy(), self.v.copy(), self.p.copy(), self.phi.copy())


def interpolate_to_cell_center(fields: FieldSet) -> tuple[np.ndarray, np.ndarray]:
    """Average the two face values bracketing each cell, per component."""
    u, v = fields.u, fields.v
    if u.shape[0] != v.shape[0] + 1 or v.shape[1] != u.shape[1] + 1:
        raise GridError(f"u {u.shape} and v {v.shape} are not a staggered pair")
    return 0.5 * (u[1:, :] + u[:-1, :]), 0.5 * (v[:, 1:] + v[:, :-1])


def divergence(grid: Grid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cell-wise discrete divergence ``du/dx + dv/dy`` (1/s)."""
    return (u[1:, :] - u[:-1, :]) / grid.dx + (v[:, 1:] - v[:, :-1]) / grid.dy
