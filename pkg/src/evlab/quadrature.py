"""Gauss-Legendre rules, graded endpoint maps and spectral cumulative sums.

The integrands in this package vanish like fractional powers of the
distance to the energy cutoff.  A quadratic grading ``x = b - (b-a)(1-t)^2``
turns ``(b - x)^k`` into ``(1 - t)^(2k)``, which is a polynomial for the
integer and half-integer exponents of interest.
"""
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg


@lru_cache(maxsize=64)
def _leggauss(n):
    x, w = npleg.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n, a=-1.0, b=1.0):
    """Nodes and weights of the ``n``-point rule on ``[a, b]``."""
    x, w = _leggauss(int(n))
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def graded_unit_rule(n, grade=2):
    """Rule on ``[0, 1]`` for ``s = 1 - (1 - t)^grade``.

    Returns nodes ``s``, weights, and the map parameter ``t`` at the nodes.
    ``grade=1`` is plain Gauss-Legendre.
    """
    t, wt = gauss_legendre(n, 0.0, 1.0)
    s = 1.0 - (1.0 - t) ** grade
    ds = grade * (1.0 - t) ** (grade - 1)
    return s, wt * ds, t


def composite_gauss(edges, n):
    """Gauss-Legendre panels of ``n`` points between consecutive ``edges``."""
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(n, a, b)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


@lru_cache(maxsize=32)
def _cumulative_matrix(n):
    x, w = _leggauss(n)
    vander = npleg.legvander(x, n - 1)                     # P_k(x_j)
    # projection onto Legendre coefficients is exact for degree < n
    proj = ((2.0 * np.arange(n) + 1.0) / 2.0)[:, None] * (vander * w[:, None]).T
    integ = np.empty((n, n))
    for k in range(n):
        coef = np.zeros(n)
        coef[k] = 1.0
        integ[:, k] = npleg.legval(x, npleg.legint(coef, lbnd=-1.0))
    mat = integ @ proj
    mat.setflags(write=False)
    return mat


def cumulative_matrix(n, length=2.0):
    """Matrix ``S`` with ``(S f)_i ~ int_a^{x_i} f`` on an ``n``-point GL rule.

    ``length`` is ``b - a`` of the interval carrying the rule.
    """
    return _cumulative_matrix(int(n)) * (0.5 * length)


def barycentric_weights(nodes):
    nodes = np.asarray(nodes, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def barycentric_matrix(nodes, x, weights=None):
    """Interpolation matrix from values at ``nodes`` to points ``x``."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if weights is None:
        weights = barycentric_weights(nodes)
    diff = x[:, None] - nodes[None, :]
    exact = diff == 0.0
    diff[exact] = 1.0
    terms = weights[None, :] / diff
    mat = terms / terms.sum(axis=1, keepdims=True)
    rows = np.nonzero(exact.any(axis=1))[0]
    for i in rows:
        mat[i] = exact[i].astype(float)
    return mat
