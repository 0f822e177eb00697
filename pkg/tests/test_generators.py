import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from evlab.errors import ConfigError
from evlab.generators import (EVEN, MIXED, ODD, Generator, even_odd_split, random_generator,
                              random_generators, scale_generator)


def test_parse_and_evaluate():
    h = Generator("r*w + L**2")
    assert h(2.0, 3.0, 0.5) == pytest.approx(6.25)
    f, fr, fw = h.partials(np.array(2.0), np.array(3.0), np.array(0.5))
    assert (fr, fw) == (3.0, 2.0)


@pytest.mark.parametrize("text", ["r*w +", "x*w", "r**"])
def test_bad_expressions(text):
    with pytest.raises(ConfigError):
        Generator(text)


def test_parity():
    assert Generator("r*w").parity == ODD
    assert Generator("w**2 + L").parity == EVEN
    assert Generator("w + w**2").parity == MIXED


def test_even_odd_split_and_reflect():
    h = Generator("r*w + w**2 + r*w**3")
    ev, od = even_odd_split(h)
    assert sp.simplify(ev.expr - sp.sympify("w**2", locals={"w": sp.Symbol("w")})) == 0 or ev.parity == EVEN
    assert od.parity == ODD
    x = (1.3, 0.4, 0.2)
    assert h.reflect()(*x) == pytest.approx(ev(*x) - od(*x))


def test_scale_generator_definition():
    h = Generator("r*w**3 + L*r*w")
    g = 0.04
    hs = scale_generator(h, g)
    r, w, L = 1.1, 0.3, 0.7
    sg = np.sqrt(g)
    assert hs(r, w, L) == pytest.approx(h(sg * r, sg * w, g * g * L) / g, rel=1e-13)
    assert scale_generator(h, 1)(r, w, L) == h(r, w, L)


def test_random_family_is_seeded(state):
    a = random_generators(state, 3, family=ODD, seed=7)
    b = random_generators(state, 3, family=ODD, seed=7)
    for x, y in zip(a, b):
        assert np.array_equal(x.coeffs, y.coeffs)
    assert not np.array_equal(a[0].coeffs, a[1].coeffs)
    with pytest.raises(ConfigError):
        random_generator(0, "triangle", 1.0, 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([ODD, EVEN, MIXED]))
def test_polynomial_generator_matches_its_expression(seed, family):
    h = random_generator(seed, family, 2.0, 0.5)
    sym = Generator(h.expr)
    r, w, L = np.array([0.3, 1.7]), np.array([-0.2, 0.4]), np.array([0.01, 0.1])
    for a, b in zip(h.partials(r, w, L), sym.partials(r, w, L)):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-14)
    assert h.parity == family


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_odd_family_is_odd(seed):
    h = random_generator(seed, ODD, 1.0, 1.0)
    r, w, L = 0.7, 0.3, 0.05
    assert h(r, -w, L) == pytest.approx(-h(r, w, L), abs=1e-15)
