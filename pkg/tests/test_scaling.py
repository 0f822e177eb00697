import math

import numpy as np
import pytest

from evlab import scaling
from evlab.errors import ConfigError
from evlab.generators import MIXED, ODD, random_generators


@pytest.fixture(scope="module")
def scaled(state):
    return scaling.scale_state(state)


def test_scaled_state_has_unit_gamma(state, scaled):
    assert scaled.gamma == pytest.approx(1.0)
    assert scaled.R == pytest.approx(math.sqrt(state.gamma) * state.R)
    assert scaled.nu_ring == pytest.approx(state.gamma * state.nu_ring)


def test_profile_rules(state, scaled):
    s = state.gamma
    y = np.array([0.1, 0.5, 0.9]) * scaled.R
    a, b = scaled.profile(y), state.profile(y / math.sqrt(s))
    assert np.allclose(a.mu, b.mu, rtol=1e-13)
    assert np.allclose(a.lam, b.lam, rtol=1e-13)
    assert np.allclose(a.nu, s * b.nu, rtol=1e-13)
    assert np.allclose(a.m, s**1.5 * b.m, rtol=1e-13)
    assert np.allclose(a.rho, b.rho, rtol=1e-13)


def test_t1_is_identity(state):
    assert scaling.scale_state(state, 1.0) is state
    assert scaling.group_check(state, 1.0, 1.0) < 1e-15


def test_group_law(state):
    assert scaling.group_check(state, 0.3, 0.2) < 1e-12
    assert scaling.group_check(state, 4.0, 0.25) < 1e-12


def test_relations_analytic_mode(state, scaled):
    for fam in (ODD, MIXED):
        for h in random_generators(scaled, 2, family=fam, seed=3):
            rel = scaling.relation_checks(h, state)
            assert max(rel["bracket"], rel["delta_f"], rel["delta_lambda"], rel["energy"]) < 1e-10


def test_relations_interpolate_mode(state, scaled):
    h = random_generators(scaled, 1, family=ODD, seed=0)[0]
    assert scaling.energy_relation_check(h, state, mode="interpolate") < 1e-6


def test_adm_mass_two_routes(state):
    out = scaling.adm_mass_check(state)
    assert out["rel_error"] < 1e-10


def test_redshift_is_scale_invariant(state, scaled):
    assert scaling.redshift_z(state.gamma, state.nu_ring) == pytest.approx(
        scaling.redshift_z(scaled.gamma, scaled.nu_ring), rel=1e-14)


def test_scale_phase_function_matches_f0(state, scaled):
    # T^s f_0 is the steady state of the scaled system
    s = state.gamma
    f0 = lambda r, w, L: state.f0_of(state.profile(np.ravel(r)).mu.reshape(np.shape(r)), w * w + L / r**2)
    Tf = scaling.scale_phase_function(f0, s)
    r = np.array([0.2, 0.5]) * scaled.R
    w = 0.1 * scaled.vmax(r)
    L = (0.2 * r * scaled.vmax(r)) ** 2
    mu = scaled.profile(r).mu
    assert np.allclose(Tf(r, w, L), scaled.f0_of(mu, w * w + L / r**2), rtol=1e-12)


def test_stability_needs_snapshots():
    class Empty:
        states = []

    with pytest.raises(ConfigError):
        scaling.stability_along_trajectory(Empty())


def test_family_record_and_scan(poly2):
    rec = scaling.family_record(poly2, -0.2, 0.02, count=2)
    assert rec.gamma == 0.02 and rec.n_samples == 2
    assert rec.min_coercivity_ratio >= 1.0
    assert len(rec.row()) == len(scaling.SCAN_COLUMNS)
    got = []
    scaling.family_scan(poly2, -0.2, [0.01, 0.02], count=2, done=[0.02], on_record=got.append)
    assert [r.gamma for r in got] == [0.01]
