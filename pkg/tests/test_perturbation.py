import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evlab.eos import casimir_chi_from_state, power_casimir, sine_casimir
from evlab.generators import EVEN, MIXED, ODD, Generator, random_generator, random_generators
from evlab.perturbation import (casimir_lemma_residual, check_casimir_constraint, delta_f_bracket_form,
                                delta_f_from_h, delta_lambda_from_h, delta_lambda_from_rho, field_residuals,
                                lemma33_errors, lemma43_margin, lemma44_closed_forms, lemma44_fd_errors,
                                quadrature_for)


@pytest.fixture(scope="module")
def quad(state):
    return quadrature_for(state)


@pytest.fixture(scope="module")
def mixed(state):
    return random_generators(state, 4, family=MIXED, seed=11)


def test_even_generator_does_not_move_the_metric(state):
    h = random_generators(state, 1, family=EVEN, seed=0)[0]
    assert np.all(delta_lambda_from_h(h, state) == 0.0) or np.max(np.abs(delta_lambda_from_h(h, state))) < 1e-16


def test_dual_formulas_for_delta_f(state, mixed):
    for h in mixed:
        p = delta_f_from_h(h, state)
        alt = delta_f_bracket_form(h, state)
        assert np.max(np.abs(alt - p.df)) < 1e-12 * np.max(np.abs(p.df))


def test_dual_route_delta_lambda(state, mixed):
    for h in mixed:
        p = delta_f_from_h(h, state, with_fields=False)
        b = delta_lambda_from_rho(p.drho, state)
        assert np.max(np.abs(p.dlam - b)) < 1e-8 * np.max(np.abs(p.dlam))


def test_linearised_field_equations(state, mixed):
    for h in mixed:
        p = delta_f_from_h(h, state)
        res_lam, res_mu = field_residuals(p)
        scale = np.max(np.abs(p.dlam))
        # the spectral derivative of delta lambda loses accuracy at the last nodes below R
        inside = p.r < 0.95 * state.R
        assert np.max(np.abs(res_lam[inside])) < 1e-8 * scale
        assert np.max(np.abs(res_mu)) < 1e-12 * scale


def test_casimir_constraint_and_mass(state, mixed):
    chis = [casimir_chi_from_state(state.eos, state.gamma), power_casimir(3), sine_casimir()]
    for h in mixed:
        p = delta_f_from_h(h, state, with_fields=False)
        total, scale = p.total_mass()
        assert abs(total) < 1e-10 * scale
        for chi in chis:
            assert check_casimir_constraint(p, chi)["relative"] < 1e-6


def test_casimir_lemma_pointwise(quad):
    for chi in (power_casimir(2), sine_casimir()):
        assert np.max(casimir_lemma_residual(quad, chi)[quad.r < 0.98 * quad.R]) < 1e-8


def test_lemma33(state, quad):
    e1, e2 = lemma33_errors(state)
    inside = quad.r < 0.98 * quad.R
    assert np.max(e1[inside]) < 1e-8 and np.max(e2[inside]) < 1e-8


def test_lemma43_margin_nonnegative(state):
    for h in random_generators(state, 10, family=MIXED, seed=0):
        assert np.min(lemma43_margin(h, state)) >= -1e-13


def test_bracket_closed_forms_converge(state):
    errs = [lemma44_fd_errors(state, s) for s in (0.025, 0.0125)]
    for k in range(2):
        assert np.log2(errs[0][k] / errs[1][k]) >= 3.5


def test_closed_form_first_bracket_against_exact_partials(state):
    # {E, r w} = E_r r - E_w w... evaluated with exact E partials
    from evlab.phase_space import energy_partials

    r, w, L = np.array([1.0, 3.0]), np.array([0.1, -0.2]), np.array([0.05, 0.3])
    E, Er, Ew = energy_partials(state, r, w, L)
    first, _ = lemma44_closed_forms(state, r, w, L)
    assert np.allclose(first, Er * r - Ew * w, rtol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 5000), st.integers(0, 5000), st.floats(-2.0, 2.0))
def test_delta_f_is_linear(state, s1, s2, c):
    from evlab.generators import polynomial_generator

    a = random_generator(s1, MIXED, state.R, 1.0)
    b = random_generator(s2, MIXED, state.R, 1.0)
    combo = polynomial_generator(a.coeffs + c * b.coeffs, a.terms, a.R, a.V)
    pa, pb, pc = (delta_f_from_h(x, state, with_fields=False) for x in (a, b, combo))
    assert np.allclose(pc.df, pa.df + c * pb.df, rtol=1e-10, atol=1e-12 * np.max(np.abs(pc.df)))


def test_symbolic_and_polynomial_generators_agree(state):
    h = random_generators(state, 1, family=ODD, seed=3)[0]
    a = delta_f_from_h(h, state, with_fields=False)
    b = delta_f_from_h(Generator(h.expr), state, with_fields=False)
    assert np.allclose(a.df, b.df, rtol=1e-10, atol=1e-14)
