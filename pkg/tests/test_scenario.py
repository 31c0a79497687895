import math
import warnings

import numpy as np
import pytest

from clsprint.grid import divergence
from clsprint.scenario import (BenchmarkCase, DepositionScenario, ScenarioError, build_benchmark,
                               build_deposition, nozzle_layout, quadrature_area, zalesak_signed_distance)
from clsprint.simulation import Simulation


def test_baseline_ideal_thickness():
    sc = DepositionScenario()
    assert sc.q == pytest.approx(8e-6)
    assert sc.h_f == pytest.approx(0.4e-3)
    assert sc.gap_ratio == pytest.approx(0.8) and sc.standard
    assert DepositionScenario(v_bar_x=0.01).h_f == pytest.approx(0.8e-3)


def test_half_domain_rate():
    sc = DepositionScenario()
    assert sc.V_pl == pytest.approx(1.2566e-9, rel=1e-4)
    assert sc.A_f == pytest.approx(62.83e-9, rel=1e-3)
    assert DepositionScenario(symmetry=False).V_pl == pytest.approx(2 * sc.V_pl)


def test_scenario_validation():
    with pytest.raises(ScenarioError):
        DepositionScenario(D=0.0)
    with pytest.raises(ScenarioError):
        DepositionScenario(nozzle_x=0.0)
    with pytest.raises(ScenarioError):
        DepositionScenario(measure_offset=10e-3)
    with pytest.raises(ScenarioError):
        BenchmarkCase("spiral")


def test_gap_resolution_rules():
    sc = DepositionScenario(delta_z=0.24e-3)
    assert sc.standard
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        case = build_deposition(sc, 0.02e-3)
    assert round(sc.delta_z / case.grid.dy) == 12
    with pytest.warns(UserWarning, match="non-standard"):
        build_deposition(DepositionScenario(delta_z=0.28e-3), 0.02e-3)
    with pytest.warns(UserWarning, match="only"):
        build_deposition(DepositionScenario(), 0.32e-3 / 6)
    with pytest.raises(ScenarioError):
        build_deposition(DepositionScenario(), 0.32e-3 / 3)


def test_deposition_case_is_self_consistent():
    sc = DepositionScenario()
    case = build_deposition(sc, sc.delta_z / 8)
    g, f = case.grid, case.fields
    assert g.shape == (150, 23)
    assert np.all((f.phi >= 0.0) & (f.phi <= 1.0))
    lay = nozzle_layout(sc, g)
    assert lay["x_hi"] - lay["x_lo"] == pytest.approx(sc.D)
    assert lay["y_tip"] == pytest.approx(sc.delta_z)
    # solid walls span tip to top, slot full of ink
    assert g.solid[lay["i_lo"] - 1, lay["j_tip"]:].all() and g.solid[lay["i_hi"], lay["j_tip"]:].all()
    assert np.all(f.phi[lay["i_lo"]:lay["i_hi"], -1] < 0.01)
    assert case.station_x == pytest.approx(3e-3)
    assert case.ramp_time == pytest.approx(0.05 * case.duration)
    assert case.oracle["h_f"] == pytest.approx(0.4e-3)


def test_thick_tip_wall():
    sc = DepositionScenario(tip_wall=0.12e-3)
    case = build_deposition(sc, sc.delta_z / 8)
    lay = nozzle_layout(sc, case.grid)
    assert lay["n_wall"] == 3
    assert case.grid.solid.sum() == 2 * 3 * (case.grid.ny - lay["j_tip"])


def test_rebuild_is_bit_identical():
    sc = DepositionScenario()
    a, b = build_deposition(sc, sc.delta_z / 8), build_deposition(sc, sc.delta_z / 8)
    assert np.array_equal(a.fields.phi, b.fields.phi)
    assert np.array_equal(a.grid.solid, b.grid.solid)
    z1 = build_benchmark(BenchmarkCase("zalesak"), 1 / 32)
    z2 = build_benchmark(BenchmarkCase("zalesak"), 1 / 32)
    assert np.array_equal(z1.fields.phi, z2.fields.phi) and z1.oracle == z2.oracle


@pytest.mark.parametrize("kind", ["equilibrium", "translating_blob", "zalesak", "single_vortex",
                                  "plane_poiseuille", "hydrostatic"])
def test_benchmarks_build(kind):
    case = build_benchmark(BenchmarkCase(kind), 1 / 32 if kind not in ("plane_poiseuille", "hydrostatic")
                           else 1e-3 / 16)
    assert np.all((case.fields.phi >= 0.0) & (case.fields.phi <= 1.0))
    assert case.duration > 0.0
    if case.prescribed:
        u, v = case.velocity(0.0)
        assert np.abs(divergence(case.grid, u, v)).max() < 1e-12


def test_zalesak_oracle_area():
    area = quadrature_area(lambda x, y: zalesak_signed_distance(x, y) <= 0.0)
    # disc minus the slot rectangle clipped by the disc
    r, w = 0.15, 0.05
    slot_h = 0.85 - (0.75 - math.sqrt(r * r - (w / 2) ** 2))
    approx = math.pi * r * r - w * slot_h
    assert area == pytest.approx(approx, rel=5e-3)


def test_equilibrium_oracle():
    case = build_benchmark(BenchmarkCase("equilibrium", epsilon_f=1.0), 1 / 64)
    assert case.params.epsilon == pytest.approx(2 / 64)
    assert case.oracle["profile"](np.array(0.0)) == 0.5
    assert case.duration == pytest.approx(50 * case.params.epsilon / case.params.gamma)


def test_poiseuille_oracle():
    case = build_benchmark(BenchmarkCase("plane_poiseuille"), 1e-3 / 16)
    assert case.oracle["delta_p"] == pytest.approx(12 * 1000 * 2e-3 * 8e-6 / 1e-9)


def test_short_deposition_inflow_matches_rate():
    sc = DepositionScenario()
    case = build_deposition(sc, sc.delta_z / 8, duration=0.02)
    sim = Simulation(case)
    v0 = sim.measure().ink_volume
    result = sim.run(sample_interval=0.01)
    grown = result.records[-1].ink_volume - v0
    # ramp over the first 1 ms, then full rate
    t, tr = 0.02, case.ramp_time
    expected = sc.q * (t - 0.5 * tr)
    assert grown == pytest.approx(expected, rel=0.02)
