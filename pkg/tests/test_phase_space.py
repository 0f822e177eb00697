import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evlab.errors import SingularRadiusError
from evlab.phase_space import (KineticField, PhaseGrid, PhasePoint, analytic_bracket_with_E,
                               derivative_matrix, energy_partials, moments, momentum_integral,
                               particle_energy, poisson_bracket, read_field, write_field)


@pytest.fixture(scope="module")
def grid():
    return PhaseGrid.gauss((0.5, 1.5), 8.0, 64 * 1.5**2, n=(24, 64, 64))


def test_grid_validation():
    with pytest.raises(ValueError):
        PhaseGrid(np.array([0.0, 1.0]), np.array([-1.0, 0.5]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        PhaseGrid(np.array([1.0, 0.0]), np.array([-1.0, 1.0]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        PhaseGrid(np.array([0.0, 1.0]), np.array([-1.0, 1.0]), np.array([-1.0, 1.0]))


def test_phase_point_validation():
    with pytest.raises(ValueError):
        PhasePoint(-0.1, 0.0, 0.0).validate()
    assert PhasePoint(0.0, -1.0, 0.0).validate().w == -1.0


def test_momentum_integral_isotropic_gaussian(grid):
    # int exp(-|v|^2) d^3v = pi^{3/2}, at every radius
    f = KineticField.from_function(grid, lambda R, W, L: np.exp(-(W * W + L / R**2)))
    for r in grid.r[[0, 11, 23]]:
        assert momentum_integral(f, "one", r, 0.02) == pytest.approx(math.pi**1.5, rel=1e-10)


def test_odd_field_has_zero_density_and_pressure(grid):
    f = KineticField.from_function(grid, lambda R, W, L: W * np.exp(-(W * W + L / R**2)))
    r = grid.r[5]
    assert abs(momentum_integral(f, "lorentz", r, 0.02)) < 1e-13
    assert abs(momentum_integral(f, "w2_lorentz", r, 0.02)) < 1e-13
    # j = int w^2 exp(-|v|^2) d^3v = pi^{3/2}/2
    assert momentum_integral(f, "w", r, 0.02) == pytest.approx(0.5 * math.pi**1.5, rel=1e-10)


def test_momentum_integral_errors(grid):
    f = KineticField.from_function(grid, lambda R, W, L: 0 * R)
    with pytest.raises(SingularRadiusError):
        momentum_integral(f, "one", 0.0, 0.02)
    with pytest.raises(ValueError):
        momentum_integral(f, "nope", 1.0, 0.02)
    with pytest.raises(ValueError):
        momentum_integral(f, "one", 1.0, -1.0)


def test_moments_isotropic_pressure_relation(grid):
    # for an isotropic f, q = 2 p (two tangential directions)
    f = KineticField.from_function(grid, lambda R, W, L: np.exp(-(W * W + L / R**2)))
    m = moments(f, 0.02)
    assert np.allclose(m.q, 2.0 * m.p, rtol=1e-9)
    assert np.allclose(m.j, 0.0, atol=1e-13)


def test_derivative_matrix_order():
    errs = []
    for n in (21, 41):
        x = np.linspace(0.0, 1.0, n)
        errs.append(np.max(np.abs(derivative_matrix(x) @ np.sin(3 * x) - 3 * np.cos(3 * x))))
    assert math.log2(errs[0] / errs[1]) > 3.7


def test_poisson_bracket_canonical_pair():
    g = PhaseGrid.uniform((0.5, 1.5), 1.0, 1.0, n=(21, 21, 3))
    R, W, L = g.mesh()
    r = KineticField(g, R)
    w = KineticField(g, W)
    assert np.allclose(poisson_bracket(r, w).values, 1.0)
    assert np.all(poisson_bracket(r, r).values == 0.0)
    f = KineticField(g, R**2 * W)
    gg = KineticField(g, R * W**2)
    # {r^2 w, r w^2} = 2rw * 2rw - r^2 * w^2 = 3 r^2 w^2
    assert np.allclose(poisson_bracket(f, gg).values, 3 * R**2 * W**2, atol=1e-10)


def test_fields_on_different_grids_rejected():
    a = PhaseGrid.uniform((0.5, 1.5), 1.0, 1.0, n=(5, 5, 3))
    b = PhaseGrid.uniform((0.5, 1.6), 1.0, 1.0, n=(5, 5, 3))
    with pytest.raises(ValueError):
        KineticField(a, np.zeros(a.shape)) + KineticField(b, np.zeros(b.shape))


def test_energy_partials_match_finite_differences(state):
    r, w, L = 3.0, 0.2, 0.5
    E, Er, Ew = energy_partials(state, r, w, L)
    h = 1e-5
    assert E == pytest.approx(particle_energy(state, np.array(r), w, L), rel=1e-15)
    fd_r = (particle_energy(state, np.array(r + h), w, L) - particle_energy(state, np.array(r - h), w, L)) / (2 * h)
    fd_w = (particle_energy(state, np.array(r), w + h, L) - particle_energy(state, np.array(r), w - h, L)) / (2 * h)
    assert Er == pytest.approx(fd_r, rel=1e-7)
    assert Ew == pytest.approx(fd_w, rel=1e-7)


def test_bracket_of_energy_function_with_energy_vanishes(state):
    V0 = float(state.vmax(np.array([0.0]))[0])
    g = PhaseGrid.uniform((0.2 * state.R, 0.6 * state.R), 0.3 * V0, 0.1 * (state.R * V0) ** 2, n=(41, 41, 5))
    R, W, L = g.mesh()
    h = KineticField(g, particle_energy(state, R, W, L) ** 2)
    out = analytic_bracket_with_E(h, state).values[2:-2, 2:-2]
    scale = np.max(np.abs(h.derivative(0).values))
    assert np.max(np.abs(out)) < 1e-6 * scale


def test_field_round_trip(tmp_path):
    g = PhaseGrid.uniform((0.1, 1.0), 1.0, 2.0, n=(4, 5, 3))
    R, W, L = g.mesh()
    f = KineticField(g, np.sin(R) * W + L / 3.0)
    write_field(f, tmp_path / "f.json", tmp_path / "f.csv", extra={"t": 0.5})
    back = read_field(tmp_path / "f.json", tmp_path / "f.csv")
    assert np.array_equal(back.values, f.values)
    assert np.array_equal(back.grid.w, g.w)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.55, 1.45), st.floats(-0.9, 0.9), st.floats(0.05, 1.9))
def test_cubic_interpolation_of_quadratics(r, w, L):
    g = PhaseGrid.uniform((0.5, 1.5), 1.0, 2.0, n=(11, 11, 11))
    fn = lambda R, W, LL: 1.0 + R * W - 0.5 * LL**2 + W**2
    f = KineticField.from_function(g, fn)
    assert f(r, w, L) == pytest.approx(fn(r, w, L), abs=1e-12)


def test_interpolation_outside_is_zero():
    g = PhaseGrid.uniform((0.5, 1.5), 1.0, 2.0, n=(5, 5, 5))
    f = KineticField(g, np.ones(g.shape))
    assert f(2.0, 0.0, 0.0) == 0.0


def test_reflect_and_parity():
    g = PhaseGrid.uniform((0.5, 1.5), 1.0, 2.0, n=(5, 7, 5))
    R, W, L = g.mesh()
    f = KineticField(g, R + W + W**2)
    even, odd = f.even_odd()
    assert np.allclose(odd.values, W)
    assert np.allclose(f.reflect().values, R - W + W**2)
