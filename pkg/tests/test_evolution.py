import math

import numpy as np
import pytest

from evlab.energy import free_energy
from evlab.errors import ConfigError, StepSizeError
from evlab.evolution import (CharacteristicFlow, CharacteristicSystem, GridSystem, TransportGrid,
                             dynamical_time, evolve, field_solve, gregory_weights, make_system,
                             trace_characteristic)
from evlab.generators import Generator, ODD, random_generators
from evlab.perturbation import delta_f_from_h

ORDER = (32, 12, 8)


@pytest.fixture(scope="module")
def flow(state):
    return CharacteristicFlow(state)


@pytest.fixture(scope="module")
def system(state):
    return CharacteristicSystem(state, order=ORDER)


@pytest.fixture(scope="module")
def h(state):
    return random_generators(state, 1, family=ODD, seed=1)[0]


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 8, 13])
def test_gregory_weights(n):
    w = gregory_weights(n)
    x = np.linspace(0.0, 1.0, n + 1)
    for deg in range(min(n, 3) + 1):
        assert (w @ x**deg) / n == pytest.approx(1.0 / (deg + 1), rel=1e-12)
    assert gregory_weights(0).tolist() == [0.0]


def test_characteristics_conserve_energy_and_L(state, flow):
    r0 = np.array([0.3, 0.6, 0.9]) * state.R
    V = state.vmax(r0)
    w0, L0 = 0.3 * V, (0.4 * V * r0) ** 2
    E0 = flow.energy(r0, w0, L0)
    r1, w1, L1 = flow.trace(r0, w0, L0, 3.0 * dynamical_time(state))
    assert np.array_equal(L1, L0)
    assert np.allclose(flow.energy(r1, w1, L1), E0, rtol=1e-12)


def test_trace_is_reversible(state, flow):
    p = trace_characteristic((0.4 * state.R, 0.01, 0.002), state, 0.0, 7.0, flow)
    back = trace_characteristic(p, state, 7.0, 0.0, flow)
    assert back.r == pytest.approx(0.4 * state.R, rel=1e-10)
    assert back.w == pytest.approx(0.01, abs=1e-12)


def test_trace_matches_reduced_system(state, flow):
    from scipy.integrate import solve_ivp

    r0, w0, L0 = 0.5 * state.R, 0.02, 1e-3
    rhs = lambda t, y: np.concatenate(flow.reduced_rhs(np.array([y[0]]), y[1], L0))
    sol = solve_ivp(rhs, (0.0, 5.0), [r0, w0],
                    rtol=1e-11, atol=1e-13, method="DOP853")
    r, w, _ = flow.trace(r0, w0, L0, 5.0)
    assert r[0] == pytest.approx(sol.y[0, -1], rel=1e-8)
    assert w[0] == pytest.approx(sol.y[1, -1], rel=1e-7)


def test_field_solve_matches_generator_route(state, h):
    p = delta_f_from_h(h, state)
    dlam, dmu, ddmu = field_solve(p)
    assert np.max(np.abs(dlam - p.dlam)) < 1e-8 * np.max(np.abs(p.dlam))
    assert np.max(np.abs(dmu - p.dmu)) < 1e-8 * np.max(np.abs(p.dmu))
    # dmu' divides the enclosed-mass route by r, which costs digits at the first node
    assert np.max(np.abs(ddmu - p.ddmu)) < 1e-6 * np.max(np.abs(p.ddmu))


def test_initial_snapshot(system, h, state):
    s0 = system.initial(h)
    A = free_energy(delta_f_from_h(h, system.quad, with_fields=False))
    assert s0.A == pytest.approx(A, rel=1e-12)
    assert s0.delta_mass < 1e-8          # reduced quadrature order


def test_zero_data_stays_zero(system):
    zero = Generator("0*r")
    traj = system.evolve(zero, 2.0 * system.max_step())
    assert all(a == 0.0 for a in traj.A)
    assert all(n == 0.0 for n in traj.h_norm)


def test_step_reversibility(system, h):
    s0 = system.initial(h)
    dt = 0.5 * system.max_step()
    s1 = system.step(s0, dt)
    back = system.step(s1, -dt)
    assert np.max(np.abs(back.h.h - s0.h.h)) < 1e-9 * np.max(np.abs(s0.h.h))


def test_step_bound(system, h):
    with pytest.raises(StepSizeError):
        system.evolve(h, 10.0, dt=3.0 * system.max_step())
    with pytest.raises(ConfigError):
        system.evolve(h, -1.0)


def test_short_run_conserves_energy_and_streams_monitors(system, h):
    rows = []
    traj = system.evolve(h, 8 * system.default_step(), monitors=[rows.append])
    assert len(rows) == len(traj.t) == 9
    assert [r["t"] for r in rows] == traj.t
    assert traj.energy_drift < 1e-3
    assert max(traj.delta_mass) < 1e-5


def test_snapshot_is_a_generator(system, h):
    s1 = system.step(system.initial(h), system.default_step())
    s2 = system.initial(s1)
    assert s2.A == pytest.approx(s1.A, rel=1e-10)


def test_make_system_and_module_evolve(state, h):
    with pytest.raises(ConfigError):
        make_system(state, "spectral")
    traj = evolve(h, state, 0.0, order=ORDER)
    assert traj.t == [0.0]


def test_grid_scheme_smoke(state, h):
    grid = TransportGrid.for_state(state, 24, 24, 12)
    system = GridSystem(state, grid=grid, order=ORDER)
    traj = system.evolve(h, 2 * system.max_step())
    assert len(traj.t) == 3
    assert traj.energy_drift < 0.05


def test_vacuum_rejected(poly2):
    from evlab.steady_state import solve

    with pytest.raises(ConfigError):
        CharacteristicSystem(solve(poly2, 0.02, 0.0))


def test_constraint_monitor_matches_trajectory(system, h):
    from evlab.evolution import constraint_monitor

    dt = system.default_step()
    traj = system.evolve(h, 3 * dt, keep=True)
    s = traj.states
    assert constraint_monitor(s[1], s[0], s[2], system.t_dyn) == pytest.approx(traj.constraint[1], rel=1e-12)
    # the residual shrinks with the step (second-order centred difference)
    half = system.evolve(h, 3 * dt, dt=dt / 2, keep=True).states
    assert constraint_monitor(half[2], half[1], half[3], system.t_dyn) < traj.constraint[1]
    assert constraint_monitor(system.initial(Generator("0*r"))) == 0.0
