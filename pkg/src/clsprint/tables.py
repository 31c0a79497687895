"""Published strand-section data and the arithmetic checks built on it.

Areas are in units of 1e-3 mm^2.  The reference section for every row is
``A_F_PUBLISHED`` (half-domain strand at 20 mm/s nozzle speed).
"""

from __future__ import annotations

from dataclasses import dataclass

from .diagnostics import conservation_error
from .flow import hagen_poiseuille_reference
from .levelset import epsilon_ref_sizes

A_F_PUBLISHED = 62.83


@dataclass(frozen=True)
class TableRow:
    table: str
    parameter: str
    value: float
    A_s: float
    delta_A_published: float
    consistent: bool = True

    @property
    def delta_A(self) -> float:
        return conservation_error(self.A_s, A_F_PUBLISHED)


# gamma study (m/s)
GAMMA_ROWS = tuple(TableRow("III", "gamma", g, a, d) for g, a, d in (
    (0.005, 60.34, 3.96),
    (0.01, 60.11, 4.33),
    (0.02, 59.65, 5.07),
    (0.04, 58.74, 6.52),
    (0.08, 57.06, 9.19),
))

# interface-thickness study on the fine mesh; the 0.7 and 0.6 error entries
# are exchanged in the source, so those two rows are flagged inconsistent
EPSILON_ROWS = tuple(TableRow("IV", "epsilon_f", f, a, d, ok) for f, a, d, ok in (
    (1.0, 59.65, 5.07, True),
    (0.9, 60.89, 3.10, True),
    (0.8, 61.77, 1.69, True),
    (0.7, 62.67, 0.68, False),
    (0.6, 63.26, 0.25, False),
    (0.5, 63.74, 1.44, True),
))

# interface-thickness study on the coarser mesh
COARSE_EPSILON_ROWS = tuple(TableRow("V", "epsilon_f", f, a, d) for f, a, d in (
    (0.8, 53.65, 14.61),
    (0.7, 56.97, 9.33),
    (0.6, 59.57, 5.19),
    (0.5, 61.43, 2.23),
    (0.4, 62.68, 0.24),
    (0.3, 63.52, 1.10),
))

ALL_ROWS = GAMMA_ROWS + EPSILON_ROWS + COARSE_EPSILON_ROWS

#: error values recomputed from the areas for the two exchanged rows
SWAPPED_EXPECTED = {0.7: 0.25, 0.6: 0.68}

# mesh study: maximum nozzle pressure (MPa) at gamma = 0.02 and gamma = 1
MESH_PMAX_MPA = {"mesh 1": (8.393, 8.263), "mesh 2": (8.381, 8.323), "mesh 3": (8.377, 8.347)}

# (m_max in mm, epsilon_f, published epsilon in mm)
EPSILON_EXAMPLES = ((0.043, 0.6, 0.0258), (0.069, 0.4, 0.0276))

# pipe reference inputs: mu (Pa s), L (m), full-pipe rate (m^3/s), R (m)
PIPE_REFERENCE = {"mu": 1000.0, "L": 2e-3, "flow_rate": 2.513e-9, "R": 0.2e-3}


def graded_mesh_epsilon(m_max: float, epsilon_f: float, m_min: float | None = None) -> float:
    """``epsilon_f * epsilon_ref`` on a graded mesh.

    The published meshes are graded (``m_max > 1.3 m_min``), so the
    reference thickness equals ``m_max``; ``m_min`` defaults to ``m_max / 2``.
    """
    if m_min is None:
        m_min = 0.5 * m_max
    return epsilon_f * epsilon_ref_sizes(m_max, m_min)


def reproduce_tables() -> list[dict]:
    """One dict per published row with the recomputed error and its agreement."""
    out = []
    for row in ALL_ROWS:
        expected = row.delta_A_published
        if not row.consistent:
            expected = SWAPPED_EXPECTED[row.value]
        out.append({
            "table": row.table, "parameter": row.parameter, "value": row.value,
            "A_s_1e-3mm2": row.A_s, "delta_A_published": row.delta_A_published,
            "delta_A_recomputed": row.delta_A, "delta_A_expected": expected,
            "abs_diff": abs(row.delta_A - expected), "consistent": row.consistent,
        })
    return out


def pressure_reference_check() -> dict:
    ref = hagen_poiseuille_reference(**PIPE_REFERENCE)
    pmax = [pair[0] * 1e6 for pair in MESH_PMAX_MPA.values()]
    return {
        "reference_MPa": ref / 1e6,
        "published_pmax_MPa": [p / 1e6 for p in pmax],
        "max_excess_pct": max((p - ref) / ref * 100.0 for p in pmax),
        "within_5pct": all(ref <= p <= 1.05 * ref for p in pmax),
    }
