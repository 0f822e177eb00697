import numpy as np
import pytest

from evlab.energy import (adm_mass, bracket_margin_profile, bracket_positivity_margin, casimir,
                          coercivity_rhs, energy_casimir, energy_casimir_expansion_check, free_energy,
                          node_parity_split, parity_decomposition, split, stability_lhs)
from evlab.eos import casimir_chi_from_state
from evlab.generators import EVEN, MIXED, ODD, random_generators
from evlab.perturbation import delta_f_from_h, quadrature_for


@pytest.fixture(scope="module")
def odd(state):
    return random_generators(state, 5, family=ODD, seed=2)


def test_splitting_identities(state, odd):
    for h in odd:
        rep = split(delta_f_from_h(h, state, with_fields=False), h=h)
        assert rep.splitting_error < 1e-10
        assert rep.uvw_error < 1e-10
        assert rep.A > 0.0


def test_free_energy_positive_on_accessible_perturbations(state):
    for fam in (ODD, EVEN, MIXED):
        for h in random_generators(state, 5, family=fam, seed=40):
            assert free_energy(delta_f_from_h(h, state, with_fields=False)) > 0.0


def test_coercivity_remark_form(state, odd):
    for h in odd:
        A = free_energy(delta_f_from_h(h, state, with_fields=False))
        rhs = coercivity_rhs(h, state)
        assert rhs["even"] == 0.0
        assert A >= rhs["remark"] > 0.0


def test_parity_decomposition(state):
    for h in random_generators(state, 3, family=MIXED, seed=5):
        full, parts = parity_decomposition(h, state)
        assert full == pytest.approx(parts, rel=1e-10)


def test_node_parity_split_matches_symbolic_split(state):
    quad = quadrature_for(state)
    h = random_generators(state, 1, family=MIXED, seed=9)[0]
    even, odd = node_parity_split(h.sample(quad, with_eta=False), quad)
    lhs = stability_lhs(h.sample(quad, with_eta=False), quad)
    rhs = coercivity_rhs(h, state)
    assert lhs["remark"] == pytest.approx(rhs["remark"] + rhs["even"], rel=1e-10)
    assert lhs["odd"] == pytest.approx(rhs["odd"], rel=1e-10)


def test_expansion_remainder_is_cubic(state, odd):
    chi = casimir_chi_from_state(state.eos, state.gamma)
    res = energy_casimir_expansion_check(state, odd[0], chi)
    assert np.all((res["ratios"] >= 6.0) & (res["ratios"] <= 10.0))
    assert np.all(np.abs(res["first_order_ratios"] - 4.0) < 0.1)


def test_f0_is_critical_point_of_energy_casimir(state):
    # the first variation vanishes: H_C(f0 + eps df) - H_C(f0) = O(eps^2)
    quad = quadrature_for(state)
    chi = casimir_chi_from_state(state.eos, state.gamma)
    h = random_generators(state, 1, family=EVEN, seed=1)[0]
    df = delta_f_from_h(h, quad, with_fields=False).df
    base = energy_casimir(quad.f0, chi, quad)
    d1 = energy_casimir(quad.f0 + 1e-3 * df, chi, quad) - base
    d2 = energy_casimir(quad.f0 + 5e-4 * df, chi, quad) - base
    assert d1 / d2 == pytest.approx(4.0, rel=0.05)


def test_casimir_of_zero_is_zero(state):
    quad = quadrature_for(state)
    chi = casimir_chi_from_state(state.eos, state.gamma)
    assert casimir(np.zeros(quad.shape), chi, state) == 0.0
    assert adm_mass(np.zeros(quad.shape), state) == 0.0


def test_bracket_margin(state):
    prof = bracket_margin_profile(state)
    assert np.all(prof <= 1.0)
    out = bracket_positivity_margin(state, target=0.75)
    assert out["margin"] == pytest.approx(float(np.min(prof)))
    assert out["gamma1"] > state.gamma
    assert out["margin_at_gamma1"] >= 0.75
