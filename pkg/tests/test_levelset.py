import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clsprint.grid import FieldSet, Grid
from clsprint.levelset import (LevelSetInstability, LevelSetParams, PhaseProperties, area_of_indicator,
                               advance_levelset, blend_properties, epsilon_ref, epsilon_ref_sizes,
                               init_levelset, interface_normal, smooth_heaviside, stable_dt)

from conftest import periodic_grid


def test_epsilon_ref_branches():
    g = Grid((8, 8), (0.1, 0.1))
    assert epsilon_ref(g) == 0.2
    assert epsilon_ref_sizes(2.0, 1.0) == 2.0
    assert epsilon_ref_sizes(1.3, 1.0) == 2.6
    assert round(0.6 * epsilon_ref_sizes(0.043, 0.02), 6) == 0.0258
    assert round(0.4 * epsilon_ref_sizes(0.069, 0.03), 6) == 0.0276


def test_params_validation():
    with pytest.raises(ValueError):
        LevelSetParams(0.0, 1.0)
    with pytest.raises(ValueError):
        LevelSetParams(1.0, -1.0)
    g = Grid((8, 8), (0.1, 0.1))
    p = LevelSetParams.from_factor(g, 0.5, 1.0)
    assert p.epsilon == pytest.approx(0.1) and p.epsilon_f == 0.5
    with pytest.raises(ValueError):
        PhaseProperties(rho1=0.0)


def test_init_profile_values():
    g = Grid((3, 1), (1.0, 1.0))
    p = LevelSetParams(0.5, 1.0)
    phi = init_levelset(g, np.array([[0.0], [0.5], [-1e9]]), p)
    assert phi[0, 0] == 0.5
    assert phi[1, 0] == pytest.approx(1 / (1 + math.exp(-1)))
    assert phi[1, 0] == pytest.approx(0.7311, abs=1e-4)
    assert phi[2, 0] == pytest.approx(0.0)
    with pytest.raises(ValueError):
        init_levelset(g, np.array([[0.0], [np.nan], [1.0]]), p)


def test_heaviside_and_blending():
    assert smooth_heaviside(0.0) == 0.0 and smooth_heaviside(1.0) == 1.0 and smooth_heaviside(0.5) == 0.5
    props = PhaseProperties()
    rho, mu = blend_properties(np.zeros((2, 2)), props)
    assert np.all(rho == 1000.0) and np.all(mu == 1000.0)
    rho, mu = blend_properties(np.ones((2, 2)), props)
    assert np.all(rho == 1.0) and np.all(mu == 1.0)
    rho, _ = blend_properties(np.full((2, 2), 0.5), props)
    assert np.all(rho == 500.5)


def test_normal_of_monotone_profile():
    g = Grid((32, 4), (1 / 32, 1 / 32))
    x = g.cell_centers(0)
    phi = np.repeat((1 / (1 + np.exp(-(x - 0.5) / 0.05)))[:, None], 4, axis=1)
    nx, ny = interface_normal(phi, g)
    band = (phi > 0.05) & (phi < 0.95)
    assert np.allclose(nx[band], 1.0, atol=1e-4) and np.allclose(ny[band], 0.0)


def test_normal_of_uniform_field_is_zero():
    g = Grid((8, 8), (0.1, 0.1))
    nx, ny = interface_normal(np.full((8, 8), 0.3), g)
    assert np.all(nx == 0.0) and np.all(ny == 0.0)


def test_normal_of_circle_is_radial():
    g = periodic_grid(128)
    X, Y = g.mesh()
    r = np.hypot(X - 0.5, Y - 0.5)
    phi = 0.5 * (1 + np.tanh((r - 0.25) / (2 * 2 / 128)))
    nx, ny = interface_normal(phi, g)
    ring = np.abs(r - 0.25) < 1.0 / 128
    ex, ey = (X - 0.5) / r, (Y - 0.5) / r
    angle = np.arccos(np.clip(nx * ex + ny * ey, -1, 1))
    assert angle[ring].max() < 0.01


def test_equilibrium_is_stationary():
    g = Grid((64, 2), (1 / 64, 1 / 64), boundary_tags={"left": "wall", "right": "wall",
                                                       "bottom": "periodic", "top": "periodic"})
    p = LevelSetParams(2 / 64, 1.0)
    d = np.repeat((g.cell_centers(0) - 0.5)[:, None], 2, axis=1)
    f = FieldSet.zeros(g, init_levelset(g, d, p))
    phi0 = f.phi.copy()
    dt = stable_dt(f, p, g)
    advance_levelset(f, p, dt, g)
    # the discrete steady state differs from the continuous profile by O(h^2)
    assert np.abs(f.phi - phi0).max() < 1e-3 * dt / (p.epsilon / p.gamma) * 50


def test_uniform_translation_conserves_sum():
    g = periodic_grid(32)
    X, Y = g.mesh()
    p = LevelSetParams(2 / 32, 1.0)
    f = FieldSet.zeros(g, init_levelset(g, np.hypot(X - 0.5, Y - 0.5) - 0.2, p))
    f.u[...] = 1.0
    s0 = f.phi.sum()
    dt = stable_dt(f, p, g)
    for _ in range(50):
        s = f.phi.sum()
        advance_levelset(f, p, dt, g)
        assert abs(f.phi.sum() - s) / s <= 1e-12
    assert abs(f.phi.sum() - s0) / s0 < 1e-12


def test_stable_dt_examples():
    g = Grid((10, 10), (2e-5, 2e-5))
    f = FieldSet.zeros(g)
    p = LevelSetParams(2e-5, 0.02)
    assert stable_dt(f, p, g, cfl_adv=1.0, cfl_diff=0.25) == pytest.approx(6.25e-5)
    f.u[...] = 0.02
    assert stable_dt(f, p, g, cfl_adv=0.5, cfl_diff=1.0) == pytest.approx(2.5e-4)
    f.u[...] = 0.0
    assert stable_dt(f, LevelSetParams(2e-5, 0.0), g, dt_max=0.1) == 0.1
    with pytest.raises(ValueError):
        stable_dt(f, p, g, cfl_adv=1.5)


def test_area_examples():
    g = Grid((24, 12), (0.05e-3, 0.05e-3))
    assert area_of_indicator(np.zeros(g.shape), g) == pytest.approx(0.72e-6)
    assert area_of_indicator(np.zeros(g.shape), g, "cell-count") == pytest.approx(0.72e-6)
    assert area_of_indicator(np.ones(g.shape), g) == 0.0
    with pytest.raises(ValueError):
        area_of_indicator(np.ones(g.shape), g, "pixels")


def _disc_area(n, estimator):
    g = periodic_grid(n)
    X, Y = g.mesh()
    r = np.hypot(X - 0.5, Y - 0.5)
    phi = 0.5 * (1 + np.tanh((r - 0.25) / (2 * 2 / n)))
    return area_of_indicator(phi, g, estimator)


def test_circle_area_sub_cell():
    exact = math.pi * 0.0625
    assert abs(_disc_area(256, "sub-cell") - exact) / exact < 1e-3


def test_area_convergence_orders():
    exact = math.pi * 0.0625
    errs = [abs(_disc_area(n, "sub-cell") - exact) for n in (32, 64, 128)]
    assert math.log2(errs[0] / errs[1]) > 1.5 and math.log2(errs[1] / errs[2]) > 1.5
    cells = [abs(_disc_area(n, "cell-count") - exact) for n in (32, 64, 128, 256)]
    assert all(e > s for e, s in zip(cells, errs))


def test_violating_configuration_leaves_bounds():
    g = periodic_grid(32)
    X, Y = g.mesh()
    p = LevelSetParams(0.25 / 32, 0.1)
    f = FieldSet.zeros(g, init_levelset(g, np.hypot(X - 0.5, Y - 0.5) - 0.2, LevelSetParams(0.25 / 32, 1.0)))
    f.u[...] = 1.0
    f.v[...] = 0.5
    dt = stable_dt(f, p, g)
    lo, hi = 0.0, 1.0
    for _ in range(200):
        advance_levelset(f, p, dt, g)
        lo, hi = min(lo, f.phi.min()), max(hi, f.phi.max())
    assert lo < -1e-6 or hi > 1 + 1e-6


def test_instability_signal():
    g = periodic_grid(16)
    f = FieldSet.zeros(g, np.zeros(g.shape))
    f.phi[3, 3] = np.nan
    with pytest.raises(LevelSetInstability):
        advance_levelset(f, LevelSetParams(0.1, 1.0), 1e-3, g)
    f = FieldSet.zeros(g, np.zeros(g.shape))
    f.phi[5, 5] = 1.0
    f.u[...] = 1.0
    with pytest.raises(LevelSetInstability):
        advance_levelset(f, LevelSetParams(0.1, 0.0), 5.0, g)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 0.45), st.floats(0.3, 0.7), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_bounded_and_conservative(radius, cx, ux, uy):
    g = periodic_grid(24)
    X, Y = g.mesh()
    vmax = max(abs(ux), abs(uy))
    p = LevelSetParams(0.6 / 24, max(vmax, 0.1))
    f = FieldSet.zeros(g, init_levelset(g, np.hypot(X - cx, Y - 0.5) - radius, p))
    f.u[...] = ux
    f.v[...] = uy
    s0 = f.phi.sum()
    dt = stable_dt(f, p, g)
    for _ in range(20):
        advance_levelset(f, p, dt, g)
    assert f.phi.min() >= -1e-6 and f.phi.max() <= 1 + 1e-6
    assert abs(f.phi.sum() - s0) / s0 < 1e-10
