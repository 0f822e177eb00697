"""Free energy of accessible perturbations, its splitting and coercivity bounds.

The free energy is

    A = 1/2 int int e^lambda/|phi'| (delta f)^2 - 1/(2 gamma) int e^{mu-lambda}(2 r mu' + 1) dlam^2 dr.

Because ``delta f = phi'(E) B`` on the support, the first term is evaluated
as ``1/2 int int e^lambda |phi'| B^2`` and never divides by ``phi'``.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AdmissibilityError, SupportLeakageError
from .generators import GeneratorSample, ODD, EVEN, even_odd_split
from .perturbation import _build, _sample, delta_f_from_h, quadrature_for

FOUR_PI = 4.0 * math.pi
EIGHT_PI = 8.0 * math.pi


def _metric_term(quad, dlam):
    pr = quad.prof
    weight = np.exp(pr.mu - pr.lam) * (2.0 * quad.r * pr.dmu + 1.0)
    return quad.radial_integral(weight * dlam**2) / quad.gamma


def free_energy(p, state=None):
    """``A(delta f)`` for a :class:`~evlab.perturbation.Perturbation`."""
    quad = p.quad
    kinetic = quad.integrate(np.exp(quad.lam) * quad.abs_dphi * p.reduced**2)
    return 0.5 * kinetic - 0.5 * _metric_term(quad, p.dlam)


def free_energy_from_df(df, dlam, quad):
    """``A`` from raw node values of ``delta f``; rejects mass where ``phi' = 0``."""
    df = np.asarray(df, dtype=float)
    leak = (quad.abs_dphi == 0.0) & (df != 0.0)
    if leak.any():
        raise SupportLeakageError("delta f is non-zero where phi'(E) vanishes")
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(quad.abs_dphi > 0.0, np.exp(quad.lam) / quad.abs_dphi, 0.0)
    return 0.5 * quad.integrate(w * df**2) - 0.5 * _metric_term(quad, np.asarray(dlam))


@dataclass
class EnergyReport:
    A: float
    A1: float
    A2: float
    A11: float
    A12: float
    A21: float
    A22: float
    U: float = math.nan
    V: float = math.nan
    W: float = math.nan
    X: float = math.nan
    Y: float = math.nan
    rhs_odd: float = math.nan
    rhs_even: float = math.nan
    rhs_remark: float = math.nan
    extra: dict = field(default_factory=dict)

    @property
    def splitting_error(self):
        return abs(2.0 * self.A - (self.A1 + self.A2)) / abs(self.A)

    @property
    def uvw_error(self):
        return abs(self.A11 - (self.U + self.V + self.W)) / abs(self.A11)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def _bracket_E_eta(quad, s):
    """``{E, eta}`` from the partials of ``eta = h/(r w)``."""
    return quad.dE_dr * s.eta_w - quad.dE_dw * s.eta_r


def _bracket_E_rw(quad):
    """``{E, r w} = r d_r E - w d_w E``."""
    r = quad.radial(quad.r)
    return r * quad.dE_dr - quad.w * quad.dE_dw


def split(p, state=None, h=None):
    """Splitting ``2A = A1 + A2`` and, for odd generators, ``A11 = U + V + W``."""
    quad = p.quad
    s = p.sample
    g = quad.gamma
    pr = quad.prof
    a = quad.abs_dphi
    lam, mu, w, lor = quad.lam, quad.mu, quad.w, quad.lorentz
    r = quad.radial(quad.r)
    dl = quad.radial(p.dlam)
    bracket_Eh = -p.bracket                     # {E, h} = -{h, E}
    A = free_energy(p)
    A11 = quad.integrate(np.exp(-lam) * a * bracket_Eh**2)
    A12 = -_metric_term(quad, p.dlam)
    A21 = -2.0 * g * quad.integrate(a * bracket_Eh * dl * np.exp(mu) * w**2 / lor)
    A22 = g * g * quad.integrate(a * np.exp(2.0 * mu + lam) * w**4 / lor**2 * dl**2)
    rep = EnergyReport(A=A, A1=A11 + A12, A2=A21 + A22, A11=A11, A12=A12, A21=A21, A22=A22)
    if s.eta is not None:
        E_eta = _bracket_E_eta(quad, s)
        dmu = quad.radial(pr.dmu)
        d2mu = quad.radial(pr.d2mu)
        dlm = quad.radial(pr.dlam)
        base = a * np.exp(2.0 * mu - lam) * s.h**2
        rep.U = quad.integrate(np.exp(-lam) * a * (r * w) ** 2 * E_eta**2)
        rep.V = -g * quad.integrate(base * (dlm * dmu - dlm / r + dlm / (r * lor**2)))
        rep.W = g * quad.integrate(base * (d2mu + dmu / r + 2.0 * dmu / (r * lor**2)))
        integral = quad.radial(quad.velocity_integral(quad.dphi * s.h * w))
        pre = -EIGHT_PI * g**3 * a * np.exp(2.0 * mu + lam) * integral
        rep.X = quad.integrate(pre * r**2 * w**3 / lor * E_eta)
        rep.Y = quad.integrate(pre * w / lor * _bracket_E_rw(quad) * s.h)
        rhs_odd, rhs_remark = _odd_rhs(quad, s)
        rep.rhs_odd, rep.rhs_remark, rep.rhs_even = rhs_odd, rhs_remark, 0.0
    return rep


def _odd_rhs(quad, s):
    """C*-form and explicit remark form of the odd coercivity bound."""
    g = quad.gamma
    pr = quad.prof
    a = quad.abs_dphi
    r = quad.radial(quad.r)
    E_eta = _bracket_E_eta(quad, s)
    rw2 = (r * quad.w) ** 2
    c_form = quad.integrate(a * (rw2 * E_eta**2 + g * g * s.h**2))
    nu_over_r = quad.radial(pr.dnu / quad.r)
    remark = 0.5 * quad.integrate(a * (np.exp(-quad.lam) * rw2 * E_eta**2
                                       + 0.25 * g * g * np.exp(2.0 * quad.mu - quad.lam)
                                       * nu_over_r * s.h**2))
    return c_form, remark


def _even_rhs(quad, s):
    bracket = quad.bracket_with_E(s.h_r, s.h_w)
    return 0.5 * quad.integrate(np.exp(-quad.lam) * quad.abs_dphi * bracket**2)


def coercivity_rhs(h, state):
    """Right-hand sides of the coercivity bounds.

    Returns a dict with ``odd`` (constant-free form
    ``int int |phi'| ((r w)^2 |{E, eta}|^2 + gamma^2 h_-^2)``), ``remark``
    (the explicit-constant form for ``h_-``) and ``even``
    (``1/2 int int e^{-lambda} |phi'| |{E, h_+}|^2``).
    """
    quad = quadrature_for(state)
    even, odd = _parts(h, quad)
    out = {"odd": 0.0, "remark": 0.0, "even": 0.0}
    if odd is not None:
        out["odd"], out["remark"] = _odd_rhs(quad, odd)
    if even is not None:
        out["even"] = _even_rhs(quad, even)
    return out


def _parts(h, quad):
    """Samples of the even and odd parts (``None`` when a part vanishes)."""
    parity = getattr(h, "parity", None)
    if parity == ODD:
        return None, h.sample(quad, with_eta=True)
    if parity == EVEN:
        return h.sample(quad, with_eta=False), None
    if hasattr(h, "terms"):
        from .generators import PolynomialGenerator
        ev = [(k, t) for k, t in zip(h.coeffs, h.terms) if t[1] % 2 == 0]
        od = [(k, t) for k, t in zip(h.coeffs, h.terms) if t[1] % 2 == 1]
        mk = lambda part: PolynomialGenerator([k for k, _ in part], [t for _, t in part], h.R, h.V)
        return mk(ev).sample(quad, with_eta=False), mk(od).sample(quad, with_eta=True)
    hp, hm = even_odd_split(h)
    return hp.sample(quad, with_eta=False), hm.sample(quad, with_eta=True)


def parity_decomposition(h, state):
    """``(A(delta f), A(delta f_+) + 1/2 int int e^{-lambda}|phi'||{E, h_+}|^2)``.

    ``delta f_+`` is the even part of ``delta f``, generated by ``h_-``.
    """
    quad = quadrature_for(state)
    even, odd = _parts(h, quad)
    full = free_energy(_build(_sample(h, quad), quad, with_fields=False))
    a_plus = free_energy(_build(odd, quad, with_fields=False)) if odd is not None else 0.0
    a_even = _even_rhs(quad, even) if even is not None else 0.0
    return full, a_plus + a_even


def node_parity_split(sample, quad):
    """Even and odd parts of a node sample by reflecting ``w -> -w``.

    The angular rule is symmetric, so the reflection is a reversal of the
    last node axis.  The odd part carries ``eta = h_-/(r w)`` and its
    partials (no node has ``w = 0`` for an even number of angular nodes).
    """
    if quad.order.nc % 2:
        raise ValueError("node parity split needs an even number of angular nodes")
    flip = lambda a: a[..., ::-1]  # noqa: E731
    h, hr, hw = sample.h, sample.h_r, sample.h_w
    even = GeneratorSample(0.5 * (h + flip(h)), 0.5 * (hr + flip(hr)), 0.5 * (hw - flip(hw)))
    hm, hmr, hmw = 0.5 * (h - flip(h)), 0.5 * (hr - flip(hr)), 0.5 * (hw + flip(hw))
    r = quad.radial(quad.r)
    w = quad.w
    rw = r * w
    odd = GeneratorSample(hm, hmr, hmw, hm / rw, hmr / rw - hm / (r * rw), hmw / rw - hm / (rw * w))
    return even, odd


def stability_lhs(sample, quad):
    """Left-hand sides of the stability estimate for a generator known at the nodes.

    Returns a dict with ``remark`` (explicit-constant bound on ``h_-`` plus
    the ``h_+`` bracket term), ``odd`` (constant-free ``h_-`` form) and
    ``even``.
    """
    even, odd = node_parity_split(sample, quad)
    c_form, remark = _odd_rhs(quad, odd)
    e = _even_rhs(quad, even)
    return {"remark": remark + e, "odd": c_form, "even": e}


# -- gamma_1 surrogate ---------------------------------------------------------


def bracket_margin_profile(state):
    """``1 - gamma (8 pi r^2 <v>^2 e^{2 lambda}(rho + gamma p) + r <v>^2 nu' + 2 |v|^2)``."""
    quad = quadrature_for(state)
    pr = quad.prof
    g = quad.gamma
    r = quad.radial(quad.r)
    lor2 = quad.lorentz**2
    inner = (EIGHT_PI * r**2 * lor2 * np.exp(2.0 * quad.lam) * quad.radial(pr.rho + g * pr.p)
             + r * lor2 * quad.radial(pr.dnu) + 2.0 * quad.v2)
    return 1.0 - g * inner


def bracket_positivity_margin(state, target=0.75, solver=None, tol=1e-4, gamma_max=None):
    """Minimum bracket factor on the support and the largest ``gamma`` keeping it >= ``target``.

    ``solver(gamma)`` builds the family member at ``gamma`` (defaults to
    re-solving with the same equation of state and central value).  The
    crossing is located by bisection in ``gamma`` to relative tolerance
    ``tol``.  Returns a dict with ``margin`` (at ``state.gamma``),
    ``gamma1`` and ``margin_at_gamma1``.
    """
    from .steady_state import solve

    if solver is None:
        solver = lambda g: solve(state.eos, g, state.nu_ring)  # noqa: E731

    def margin(g):
        try:
            st = state if g == state.gamma else solver(g)
        except AdmissibilityError:
            return -math.inf
        return float(np.min(bracket_margin_profile(st)))

    m0 = margin(state.gamma)
    lo, hi = state.gamma, state.gamma
    if m0 >= target:
        hi = 2.0 * lo
        while margin(hi) >= target:
            lo, hi = hi, 2.0 * hi
            if gamma_max is not None and hi > gamma_max:
                return {"margin": m0, "gamma1": math.nan, "margin_at_gamma1": math.nan}
    else:
        lo = 0.5 * hi
        while margin(lo) < target:
            hi, lo = lo, 0.5 * lo
            if lo < 1e-8:
                return {"margin": m0, "gamma1": math.nan, "margin_at_gamma1": math.nan}
    while hi - lo > tol * lo:
        mid = 0.5 * (lo + hi)
        if margin(mid) >= target:
            lo = mid
        else:
            hi = mid
    return {"margin": m0, "gamma1": lo, "margin_at_gamma1": margin(lo)}


# -- functionals of f ----------------------------------------------------------


def _lambda_of(f, quad):
    rho = quad.velocity_integral(quad.lorentz * f)
    m = quad.mass_profile(rho)
    den = 1.0 - 2.0 * quad.gamma * m / quad.r
    if np.any(den <= 0.0):
        raise AdmissibilityError("2 gamma m_f(r)/r >= 1 for the perturbed distribution")
    return -0.5 * np.log(den)


def adm_mass(f, state):
    """``H(f) = int int <v> f dv dx`` for node values of ``f`` (or a callable of r, w, L)."""
    quad = quadrature_for(state)
    f = _nodes(f, quad)
    _lambda_of(f, quad)
    return quad.integrate(quad.lorentz * f)


def casimir(f, chi, state):
    """``C(f) = int int e^{lambda_f} chi(f) dv dx`` with ``lambda_f`` built from ``f``."""
    quad = quadrature_for(state)
    f = _nodes(f, quad)
    lam = _lambda_of(f, quad)
    return quad.integrate(quad.radial(np.exp(lam)) * chi.chi(f))


def _nodes(f, quad):
    if callable(f):
        return np.asarray(f(quad.radial(quad.r), quad.w, quad.L), dtype=float)
    return np.broadcast_to(np.asarray(f, dtype=float), quad.shape)


def energy_casimir(f, chi, quad):
    return adm_mass(f, quad) + casimir(f, chi, quad)


def energy_casimir_expansion_check(state, h, chi, epsilons=(1e-2, 5e-3, 2.5e-3)):
    """Remainders ``R(eps) = H_C(f0 + eps df) - H_C(f0) - eps^2 A(df)``.

    Returns a dict with the arrays ``eps``, ``remainder``,
    ``remainder_over_eps3``, ``first_order`` (``H_C(f0 + eps df) - H_C(f0)``)
    and the consecutive ``ratios`` of ``|R|``.
    """
    quad = quadrature_for(state)
    p = delta_f_from_h(h, quad, with_fields=False)
    A = free_energy(p)
    base = energy_casimir(quad.f0, chi, quad)
    eps = np.asarray(epsilons, dtype=float)
    diff = np.array([energy_casimir(quad.f0 + e * p.df, chi, quad) - base for e in eps])
    rem = diff - eps**2 * A
    ratios = np.abs(rem[:-1] / rem[1:]) if eps.size > 1 else np.array([])
    first = np.abs(diff[:-1] / diff[1:]) if eps.size > 1 else np.array([])
    return {"eps": eps, "A": A, "remainder": rem, "remainder_over_eps3": rem / eps**3,
            "first_order": diff, "ratios": ratios, "first_order_ratios": first}
