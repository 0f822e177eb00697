"""Generating functions ``h(r, w, L)`` for dynamically accessible perturbations.

Generators are closed-form expressions in the symbols ``r``, ``w`` and ``L``
(any sympy syntax: polynomials, ``exp``, ``sin`` ...).  The helper name
``v2`` stands for ``|v|^2 = w^2 + L/r^2``.  Derivatives are symbolic, so
brackets of generators carry no differencing error.

Random families are polynomials in the invariants ``r^2``, ``r w`` and
``|v|^2``, which keeps them smooth at the centre; odd members contain only
odd powers of ``r w``.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np
import sympy as sp

from .errors import ConfigError

R_SYM, W_SYM, L_SYM = sp.symbols("r w L", real=True)
_LOCALS = {"r": R_SYM, "w": W_SYM, "L": L_SYM, "v2": W_SYM**2 + L_SYM / R_SYM**2,
           "exp": sp.exp, "sin": sp.sin, "cos": sp.cos, "sqrt": sp.sqrt, "pi": sp.pi}

EVEN, ODD, MIXED = "even", "odd", "mixed"


class GeneratorSample(NamedTuple):
    """Values of ``h`` and its ``(r, w)`` partials at fixed ``L`` on a node set.

    ``eta`` (``h / (r w)``) and its partials are present for odd generators.
    """
    h: np.ndarray
    h_r: np.ndarray
    h_w: np.ndarray
    eta: Optional[np.ndarray] = None
    eta_r: Optional[np.ndarray] = None
    eta_w: Optional[np.ndarray] = None

    def scaled(self, c):
        return GeneratorSample(*[None if a is None else c * a for a in self])

    def __add__(self, other):
        parts = []
        for a, b in zip(self, other):
            parts.append(None if a is None or b is None else a + b)
        return GeneratorSample(*parts)


def parse_expression(text):
    """Parse a generator string; raises :class:`ConfigError` on bad input."""
    try:
        expr = sp.sympify(text, locals=_LOCALS)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse generator expression {text!r}: {exc}") from exc
    extra = expr.free_symbols - {R_SYM, W_SYM, L_SYM}
    if extra:
        raise ConfigError(f"unknown symbols in generator: {sorted(map(str, extra))}")
    return expr


def _parity(expr):
    flipped = expr.subs(W_SYM, -W_SYM)
    if sp.expand(flipped - expr) == 0:
        return EVEN
    if sp.expand(flipped + expr) == 0:
        return ODD
    return MIXED


def _lambdify(expr):
    fn = sp.lambdify((R_SYM, W_SYM, L_SYM), expr, modules="numpy")

    def call(r, w, L):
        r, w, L = np.broadcast_arrays(np.asarray(r, float), np.asarray(w, float),
                                      np.asarray(L, float))
        out = fn(r, w, L)
        return np.broadcast_to(np.asarray(out, dtype=float), r.shape).copy()

    return call


@dataclass(frozen=True)
class Generator:
    """Closed-form generator ``h(r, w, L)``.

    Parameters
    ----------
    expr : sympy expression or str
        The generating function.
    label : str
        Free-form tag carried into reports.
    """

    expr: object
    label: str = ""
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if isinstance(self.expr, str):
            object.__setattr__(self, "expr", parse_expression(self.expr))
        else:
            object.__setattr__(self, "expr", sp.sympify(self.expr))

    @cached_property
    def parity(self):
        return _parity(self.expr)

    @cached_property
    def _fns(self):
        e = self.expr
        return _lambdify(e), _lambdify(sp.diff(e, R_SYM)), _lambdify(sp.diff(e, W_SYM))

    @cached_property
    def _eta_fns(self):
        eta = sp.cancel(sp.together(self.expr / (R_SYM * W_SYM)))
        return (_lambdify(eta), _lambdify(sp.diff(eta, R_SYM)), _lambdify(sp.diff(eta, W_SYM)))

    def __call__(self, r, w, L):
        return self._fns[0](r, w, L)

    def partials(self, r, w, L):
        f, fr, fw = self._fns
        return f(r, w, L), fr(r, w, L), fw(r, w, L)

    def sample(self, nodes, with_eta=None):
        """Evaluate on any node set exposing ``r`` (radial), ``w`` and ``L``."""
        r = np.asarray(nodes.r, dtype=float)
        if r.ndim == 1 and np.ndim(nodes.w) == 3:
            r = r[:, None, None]
        h, hr, hw = self.partials(r, nodes.w, nodes.L)
        if with_eta is None:
            with_eta = self.parity == ODD
        if not with_eta:
            return GeneratorSample(h, hr, hw)
        e, er, ew = self._eta_fns
        return GeneratorSample(h, hr, hw, e(r, nodes.w, nodes.L), er(r, nodes.w, nodes.L),
                               ew(r, nodes.w, nodes.L))

    # -- algebra ---------------------------------------------------------------

    def __add__(self, other):
        return Generator(self.expr + other.expr, label=f"({self.label})+({other.label})")

    def __mul__(self, c):
        return Generator(sp.sympify(c) * self.expr, label=f"{c}*({self.label})")

    __rmul__ = __mul__

    def reflect(self):
        """``h(r, -w, L)``, i.e. ``h(x, -v)``."""
        return Generator(self.expr.subs(W_SYM, -W_SYM), label=f"R({self.label})")

    def to_config(self):
        return {"expr": str(self.expr), "label": self.label}


def even_odd_split(h):
    """Even and odd parts ``h_pm(x, v) = (h(x, v) +- h(x, -v)) / 2``."""
    flipped = h.expr.subs(W_SYM, -W_SYM)
    even = sp.expand((h.expr + flipped) / 2)
    odd = sp.expand((h.expr - flipped) / 2)
    return Generator(even, label=f"even({h.label})"), Generator(odd, label=f"odd({h.label})")


def scale_generator(h, gamma):
    """``h^gamma(x, v) = gamma^{-1} h(gamma^{1/2} x, gamma^{1/2} v)``.

    In ``(r, w, L)`` this is ``gamma^{-1} h(sqrt(gamma) r, sqrt(gamma) w, gamma^2 L)``.
    """
    if gamma == 1:
        return Generator(h.expr, label=h.label)
    g = sp.Float(gamma, 30)
    sg = sp.sqrt(g)
    e = h.expr.subs({R_SYM: sg * R_SYM, W_SYM: sg * W_SYM, L_SYM: g**2 * L_SYM},
                    simultaneous=True) / g
    return Generator(e, label=f"scaled({h.label},{gamma!r})")


# -- random families ----------------------------------------------------------

FAMILY_TERMS = {
    # exponents (i, j, l) of (r/R)^(2i) (r w/(R V))^j (|v|/V)^(2l)
    ODD: [(i, j, l) for j in (1, 3) for i in (0, 1) for l in (0, 1)],
    EVEN: [(i, j, l) for j in (0, 2) for i in (0, 1) for l in (0, 1)],
}
FAMILY_TERMS[MIXED] = FAMILY_TERMS[EVEN] + FAMILY_TERMS[ODD]


class PolynomialGenerator(Generator):
    """Sum of ``c (r/R)^(2i) (r w/(R V))^j (|v|^2/V^2)^l`` with numeric partials.

    Evaluation bypasses sympy, which matters for sweeps over hundreds of
    seeds; the symbolic expression is still built on demand for scaling
    and serialisation.
    """

    def __init__(self, coeffs, terms, R, V, label=""):
        object.__setattr__(self, "coeffs", np.asarray(coeffs, dtype=float))
        object.__setattr__(self, "terms", tuple(tuple(t) for t in terms))
        object.__setattr__(self, "R", float(R))
        object.__setattr__(self, "V", float(V))
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "_cache", {})

    def __post_init__(self):  # pragma: no cover - dataclass hook not used here
        pass

    @cached_property
    def expr(self):
        a = (R_SYM / self.R) ** 2
        b = R_SYM * W_SYM / (self.R * self.V)
        c = (W_SYM**2 + L_SYM / R_SYM**2) / self.V**2
        return sp.expand(sum(float(k) * a**i * b**j * c**l
                             for k, (i, j, l) in zip(self.coeffs, self.terms)))

    @cached_property
    def parity(self):
        js = {j % 2 for (_, j, _), k in zip(self.terms, self.coeffs) if k != 0.0}
        if js == {1}:
            return ODD
        if js <= {0}:
            return EVEN
        return MIXED

    def _invariants(self, r, w, L):
        R, V = self.R, self.V
        a = (r / R) ** 2
        b = r * w / (R * V)
        c = (w * w + L / (r * r)) / V**2
        da = (2.0 * r / R**2, 0.0)
        db = (w / (R * V), r / (R * V))
        dc = (-2.0 * L / (r**3 * V**2), 2.0 * w / V**2)
        return a, b, c, da, db, dc

    @staticmethod
    def _power(x, n):
        return x**n if n else np.ones_like(x)

    def _evaluate(self, r, w, L, shift_j=0):
        r, w, L = np.broadcast_arrays(np.asarray(r, float), np.asarray(w, float),
                                      np.asarray(L, float))
        a, b, c, da, db, dc = self._invariants(r, w, L)
        f = np.zeros(r.shape)
        fr = np.zeros(r.shape)
        fw = np.zeros(r.shape)
        P = self._power
        for k, (i, j, l) in zip(self.coeffs, self.terms):
            j = j - shift_j
            if k == 0.0 or j < 0:
                continue
            pa, pb, pc = P(a, i), P(b, j), P(c, l)
            f += k * pa * pb * pc
            ga = i * P(a, i - 1) if i else 0.0
            gb = j * P(b, j - 1) if j else 0.0
            gc = l * P(c, l - 1) if l else 0.0
            for d, out in ((0, fr), (1, fw)):
                out += k * (ga * da[d] * pb * pc + pa * gb * db[d] * pc + pa * pb * gc * dc[d])
        return f, fr, fw

    def __call__(self, r, w, L):
        return self._evaluate(r, w, L)[0]

    def partials(self, r, w, L):
        return self._evaluate(r, w, L)

    def sample(self, nodes, with_eta=None):
        r = np.asarray(nodes.r, dtype=float)
        if r.ndim == 1 and np.ndim(nodes.w) == 3:
            r = r[:, None, None]
        h, hr, hw = self._evaluate(r, nodes.w, nodes.L)
        if with_eta is None:
            with_eta = self.parity == ODD
        if not with_eta:
            return GeneratorSample(h, hr, hw)
        if self.parity != ODD:
            raise ValueError("eta = h/(r w) needs an odd generator")
        # h = b * P with b = r w/(R V), hence eta = P / (R V)
        e, er, ew = self._evaluate(r, nodes.w, nodes.L, shift_j=1)
        s = 1.0 / (self.R * self.V)
        return GeneratorSample(h, hr, hw, s * e, s * er, s * ew)

    def __mul__(self, c):
        return PolynomialGenerator(c * self.coeffs, self.terms, self.R, self.V,
                                   label=f"{c}*({self.label})")

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, PolynomialGenerator) and (other.R, other.V) == (self.R, self.V):
            return PolynomialGenerator(np.concatenate([self.coeffs, other.coeffs]),
                                       self.terms + other.terms, self.R, self.V,
                                       label=f"({self.label})+({other.label})")
        return Generator(self.expr + other.expr, label=f"({self.label})+({other.label})")

    def to_config(self):
        return {"expr": str(self.expr), "label": self.label}

    def __repr__(self):
        return f"PolynomialGenerator({self.label!r}, {len(self.terms)} terms)"


def polynomial_generator(coeffs, terms, R, V, label=""):
    """Polynomial in ``(r/R)^2``, ``r w/(R V)`` and ``|v|^2/V^2``."""
    return PolynomialGenerator(coeffs, terms, R, V, label)


def random_generator(seed, family, R, V):
    """Seeded member of a polynomial family.

    Coefficients are independent uniform draws on ``[-1, 1]`` from
    ``numpy.random.default_rng(seed)``; the leading term is shifted away
    from zero so no member degenerates to ``h = 0``.
    """
    if family not in FAMILY_TERMS:
        raise ConfigError(f"unknown generator family {family!r}")
    terms = FAMILY_TERMS[family]
    rng = np.random.default_rng(seed)
    coeffs = rng.uniform(-1.0, 1.0, size=len(terms))
    coeffs[0] += np.copysign(0.5, coeffs[0])
    return polynomial_generator(coeffs, terms, R, V, label=f"{family}-{seed}")


def random_generators(state, count, family=ODD, seed=0):
    """``count`` family members with seeds ``seed, seed+1, ...`` scaled to ``state``."""
    R = float(state.R)
    V = float(state.vmax(np.array([0.0]))[0])
    return [random_generator(seed + i, family, R, V) for i in range(count)]
