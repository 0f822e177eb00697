import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evlab.quadrature import (barycentric_matrix, composite_gauss, cumulative_matrix, gauss_legendre,
                              graded_unit_rule)


@pytest.mark.parametrize("n", [1, 4, 16])
def test_gauss_exact_for_degree_2n_minus_1(n):
    x, w = gauss_legendre(n, 0.0, 2.0)
    for deg in range(2 * n):
        assert np.isclose(w @ x**deg, 2.0 ** (deg + 1) / (deg + 1), rtol=1e-13)


def test_graded_rule_integrates_sqrt_endpoint():
    s, ws, _ = graded_unit_rule(24)
    # int_0^1 sqrt(1 - s) ds = 2/3; the grading removes the endpoint singularity
    assert abs(ws @ np.sqrt(1.0 - s) - 2.0 / 3.0) < 1e-12


def test_composite_gauss_covers_panels():
    x, w = composite_gauss([0.0, 0.5, 2.0], 6)
    assert np.all(np.diff(x) > 0)
    assert np.isclose(w.sum(), 2.0)
    assert np.isclose(w @ np.exp(x), np.expm1(2.0), rtol=1e-13)


def test_cumulative_matrix_integrates_polynomials():
    n = 12
    x, _ = gauss_legendre(n, 0.0, 1.0)
    C = cumulative_matrix(n, 1.0)
    assert np.allclose(C @ (3 * x**2), x**3, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=8))
def test_barycentric_reproduces_polynomials(xs):
    nodes, _ = gauss_legendre(10)
    x = np.array(xs)
    poly = lambda t: 1.0 - 2.0 * t + 0.5 * t**5 + t**9
    assert np.allclose(barycentric_matrix(nodes, x) @ poly(nodes), poly(x), atol=1e-12)
