"""Run artifacts: diagnostics CSV, JSON summaries and legacy-VTK field snapshots."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .diagnostics import CSV_COLUMNS, DiagnosticsRecord
from .grid import FieldSet, Grid, interpolate_to_cell_center


def _clean(value):
    """JSON-safe copy: NaN/inf become None, numpy scalars become Python numbers."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_json(path: str | Path, data: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_diagnostics_csv(path: str | Path, records: list[DiagnosticsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for rec in records:
            w.writerow([repr(float(x)) for x in rec.row()])


def write_table_csv(path: str | Path, rows: list[dict], columns: list[str] | None = None) -> None:
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _format(row.get(k)) for k in columns})


def _format(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return "" if value is None else value


def write_vtk(path: str | Path, grid: Grid, fields: FieldSet, title: str = "fields") -> None:
    """ASCII legacy-VTK STRUCTURED_POINTS file with cell-centred point data."""
    nx, ny = grid.shape
    uc, vc = interpolate_to_cell_center(fields)
    # VTK wants x varying fastest
    order = lambda a: np.asarray(a, dtype=float).T.ravel()  # noqa: E731
    x0 = grid.origin[0] + 0.5 * grid.dx
    y0 = grid.origin[1] + 0.5 * grid.dy
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} 1",
        f"ORIGIN {x0!r} {y0!r} 0.0",
        f"SPACING {grid.dx!r} {grid.dy!r} 1.0",
        f"POINT_DATA {nx * ny}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        for name, arr in (("phi", fields.phi), ("p", fields.p), ("solid", grid.solid.astype(float))):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, order(arr), fmt="%.10g")
        fh.write("VECTORS velocity double\n")
        vel = np.column_stack([order(uc), order(vc), np.zeros(nx * ny)])
        np.savetxt(fh, vel, fmt="%.10g")


def read_vtk_scalars(path: str | Path) -> tuple[tuple[int, int], dict[str, np.ndarray]]:
    """Read back the scalar arrays of a file written by :func:`write_vtk`."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    dims = None
    out: dict[str, np.ndarray] = {}
    i = 0
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("DIMENSIONS"):
            nx, ny, _ = (int(t) for t in line.split()[1:])
            dims = (nx, ny)
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            n = dims[0] * dims[1]
            vals = np.array([float(t) for t in tokens[i + 2:i + 2 + n]])
            out[name] = vals.reshape(dims[1], dims[0]).T
            i += 1 + n
        i += 1
    return dims, out
