"""Linearly dynamically accessible perturbations ``delta f`` generated by ``h``.

For a generator ``h`` the perturbation and the metric response are

    delta lambda = 4 pi r gamma^2 e^{mu+lambda} int phi'(E) h w dv,
    delta f      = phi'(E) (e^{-lambda} {h, E} + gamma e^{mu} delta lambda w^2/<v>),

and ``delta mu`` follows from the linearised field equations.  Everything
is evaluated on the support quadrature of the steady state, where
``delta f`` is stored together with its reduced form ``B = delta f / phi'``
so that weights ``1/|phi'|`` never divide by zero.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .generators import Generator, GeneratorSample
from .phase_space import KineticField, PhaseGrid
from .support import SupportQuadrature

FOUR_PI = 4.0 * math.pi
DEFAULT_ORDER = (64, 24, 16)


def quadrature_for(state, order=None):
    """Support quadrature of ``state``; cached per (state, order).

    Without ``order`` the state's ``quad_order`` attribute is used when set,
    otherwise the package default.
    """
    if isinstance(state, SupportQuadrature):
        return state
    if order is None:
        order = getattr(state, "quad_order", None) or DEFAULT_ORDER
    order = tuple(int(n) for n in order)
    cache = state.__dict__.setdefault("_quad_cache", {})
    if order not in cache:
        cache[order] = SupportQuadrature(state, *order)
    return cache[order]


def _sample(h, quad):
    if isinstance(h, GeneratorSample):
        return h
    if isinstance(h, Generator):
        return h.sample(quad)
    raise TypeError("expected a Generator or a GeneratorSample")


@dataclass
class Perturbation:
    """``delta f`` and the induced fields on a support quadrature.

    Node arrays have the quadrature shape; radial arrays live on the
    quadrature radii ``quad.r``.
    """

    quad: SupportQuadrature
    sample: GeneratorSample
    bracket: np.ndarray          # {h, E}
    reduced: np.ndarray          # B = delta f / phi'(E)
    df: np.ndarray
    dlam: np.ndarray
    drho: np.ndarray
    dp: np.ndarray
    dj: np.ndarray
    dmu: Optional[np.ndarray] = None
    ddmu: Optional[np.ndarray] = None

    @property
    def r(self):
        return self.quad.r

    def total_mass(self):
        """``int_0^R s^2 delta rho ds`` and the scale ``int s^2 |delta rho| ds``."""
        q = self.quad
        return (q.radial_integral(q.r**2 * self.drho), q.radial_integral(q.r**2 * np.abs(self.drho)))

    def l2_norm(self):
        return math.sqrt(self.quad.integrate(self.df**2))


def delta_lambda_from_h(h, state):
    """Metric perturbation from the generator (odd part only contributes)."""
    quad = quadrature_for(state)
    s = _sample(h, quad)
    return _dlam(s.h, quad)


def _dlam(hvals, quad):
    g = quad.gamma
    pr = quad.prof
    integral = quad.velocity_integral(quad.dphi * hvals * quad.w)
    return FOUR_PI * quad.r * g * g * np.exp(pr.mu + pr.lam) * integral


def delta_f_from_h(h, state, with_fields=True):
    """Perturbation generated by ``h`` on the support quadrature of ``state``."""
    quad = quadrature_for(state)
    s = _sample(h, quad)
    return _build(s, quad, with_fields)


def _build(s, quad, with_fields=True):
    g = quad.gamma
    bracket = quad.bracket_with_E(s.h_r, s.h_w)
    dlam = _dlam(s.h, quad)
    lam = quad.lam
    reduced = np.exp(-lam) * bracket + g * quad.emu * quad.radial(dlam) * quad.w**2 / quad.lorentz
    df = quad.dphi * reduced
    drho = quad.velocity_integral(quad.lorentz * df)
    dp = quad.velocity_integral(quad.w**2 / quad.lorentz * df)
    dj = quad.velocity_integral(quad.w * df)
    p = Perturbation(quad, s, bracket, reduced, df, dlam, drho, dp, dj)
    if with_fields:
        p.dmu, p.ddmu = metric_mu(p.dlam, p.dp, quad)
    return p


def delta_f_bracket_form(h, state):
    """``delta f`` from the bracket with ``f_0`` plus the explicit non-local term.

    ``e^{-lambda} {h, f0} + 4 pi gamma^3 r e^{2mu+lambda} phi' (w^2/<v>) int phi' h w dv``,
    with the ``f_0`` partials taken from ``f_0 = phi(E)`` by the chain rule.
    """
    quad = quadrature_for(state)
    s = _sample(h, quad)
    g = quad.gamma
    f0_r = quad.dphi * quad.dE_dr
    f0_w = quad.dphi * quad.dE_dw
    bracket_f0 = s.h_r * f0_w - s.h_w * f0_r
    integral = quad.velocity_integral(quad.dphi * s.h * quad.w)
    nonlocal_ = (FOUR_PI * g**3 * quad.radial(quad.r * integral) * np.exp(2.0 * quad.mu + quad.lam)
                 * quad.dphi * quad.w**2 / quad.lorentz)
    return np.exp(-quad.lam) * bracket_f0 + nonlocal_


def delta_lambda_from_rho(drho, state):
    """``gamma e^{2 lambda} (4 pi / r) int_0^r s^2 delta rho ds`` at the quadrature radii."""
    quad = quadrature_for(state)
    if isinstance(drho, Perturbation):
        drho = drho.drho
    drho = np.asarray(drho, dtype=float)
    pr = quad.prof
    return quad.gamma * np.exp(2.0 * pr.lam) * FOUR_PI / quad.r * quad.cumulative(quad.r**2 * drho)


def metric_mu(dlam, dp, quad):
    """``(delta mu, delta mu')`` from the linearised ``mu`` equation.

    ``e^{-2 lambda}(r dmu' - dlam (2 r mu' + 1)) = 4 pi gamma^2 r^2 dp``; ``delta mu``
    is integrated inwards from ``R`` where accessible fields vanish.
    """
    pr = quad.prof
    r = quad.r
    g = quad.gamma
    ddmu = (FOUR_PI * g * g * r * r * dp * np.exp(2.0 * pr.lam) + dlam * (2.0 * r * pr.dmu + 1.0)) / r
    cum = quad.cumulative(ddmu)
    total = quad.radial_integral(ddmu)
    return cum - total, ddmu


def field_residuals(p):
    """Residuals of the two linearised constraint equations at the quadrature radii."""
    quad = p.quad
    pr = quad.prof
    r = quad.r
    g = quad.gamma
    e2l = np.exp(-2.0 * pr.lam)
    # d(delta lambda)/dr via the spectral derivative in the grading variable
    dlam_dr = _spectral_derivative(quad, p.dlam)
    res_lam = e2l * (r * dlam_dr - p.dlam * (2.0 * r * pr.dlam - 1.0)) - FOUR_PI * g * r * r * p.drho
    res_mu = e2l * (r * p.ddmu - p.dlam * (2.0 * r * pr.dmu + 1.0)) - FOUR_PI * g * g * r * r * p.dp
    return res_lam, res_mu


def _spectral_derivative(quad, values):
    from .quadrature import barycentric_weights
    t = quad.t
    wts = barycentric_weights(t)
    diff = t[:, None] - t[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (wts[None, :] / wts[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return (D @ values) / quad.dr_dt


def even_odd_split(h):
    """Even/odd parts under ``w -> -w`` for generators and sampled fields."""
    if isinstance(h, KineticField):
        return h.even_odd()
    from .generators import even_odd_split as split
    return split(h)


# -- Casimir constraint --------------------------------------------------------


def check_casimir_constraint(p, chi, state=None):
    """First variation of the Casimir functional along ``delta f``.

    Returns a dict with the absolute residual
    ``int int e^lambda (chi'(f0) delta f + chi(f0) delta lambda)``, the scale
    ``int int |e^lambda chi'(f0) delta f| + |e^lambda chi(f0) delta lambda|``
    and their ratio.
    """
    quad = p.quad
    el = np.exp(quad.lam)
    a = el * chi.dchi(quad.f0) * p.df
    b = el * chi.chi(quad.f0) * quad.radial(p.dlam)
    value = quad.integrate(a + b)
    scale = quad.integrate(np.abs(a)) + quad.integrate(np.abs(b))
    return {"residual": value, "scale": scale, "relative": abs(value) / scale if scale else 0.0}


def casimir_lemma_residual(quad, chi):
    """``int chi(f0) dv + gamma e^mu int chi'(f0) phi'(E) w^2/<v> dv`` per radius (relative)."""
    lhs = quad.velocity_integral(chi.chi(quad.f0))
    rhs = -quad.gamma * np.exp(quad.prof.mu) * quad.velocity_integral(
        chi.dchi(quad.f0) * quad.dphi * quad.w**2 / quad.lorentz)
    return np.abs(lhs - rhs) / np.maximum(np.abs(lhs), 1e-300)


# -- identity suite ------------------------------------------------------------


def lemma33_errors(state):
    """Relative errors of the two equalities for ``int phi'(E) w^2 dv``."""
    quad = quadrature_for(state)
    pr = quad.prof
    g = quad.gamma
    lhs = quad.velocity_integral(quad.dphi * quad.w**2)
    mid = -np.exp(-pr.mu) / g * (g * pr.p + pr.rho)
    rhs = -np.exp(-2.0 * pr.lam - pr.mu) / (FOUR_PI * g * g * quad.r) * (pr.dlam + pr.dmu)
    scale = np.max(np.abs(lhs))
    return np.abs(lhs - mid) / scale, np.abs(mid - rhs) / scale


def lemma43_margin(h, state):
    """Cauchy-Schwarz margin ``rhs - lhs`` per radius, normalised by ``max(rhs)``."""
    quad = quadrature_for(state)
    s = _sample(h, quad)
    pr = quad.prof
    g = quad.gamma
    a = quad.abs_dphi
    lhs = quad.velocity_integral(a * quad.w * s.h) ** 2
    # lambda' + mu' = 4 pi gamma r e^{2 lambda}(rho + gamma p); the direct sum of the two
    # profile derivatives cancels m/r^2 terms and loses all digits near R
    rhs = (np.exp(-pr.mu) / g * (pr.rho + g * pr.p) * quad.velocity_integral(a * s.h**2))
    scale = np.max(rhs)
    return (rhs - lhs) / scale if scale > 0.0 else rhs - lhs


def lemma44_closed_forms(state, r, w, L):
    """Closed forms of ``{E, r w}`` and ``{E, {E, r w}}``."""
    r, w, L = np.broadcast_arrays(np.asarray(r, float), np.asarray(w, float), np.asarray(L, float))
    prof = state.profile(r.ravel())
    mu = prof.mu.reshape(r.shape)
    dmu = prof.dmu.reshape(r.shape)
    d2mu = prof.d2mu.reshape(r.shape)
    g = state.gamma
    lor = np.sqrt(1.0 + g * (w * w + L / (r * r)))
    emu = np.exp(mu)
    first = emu * (r * dmu * lor - lor + 1.0 / lor)
    second = -g * emu**2 * w * (r * d2mu + dmu + 2.0 * dmu / lor**2)
    return first, second


def lemma44_fd_errors(state, spacing, r_window=(0.25, 0.6), w_frac=0.3, L_frac=0.1,
                      probe=0.05):
    """Max errors of finite-difference brackets against the Lemma 4.4 closed forms.

    The ``(r, w)`` grid is uniform with step ``spacing * R`` in ``r`` and
    ``spacing * V(0)`` in ``w``.  Errors are taken on probe nodes spaced by
    ``probe`` (same units), which are grid nodes for every spacing dividing
    ``probe``; refinement ratios therefore compare like with like.
    """
    from .phase_space import poisson_bracket

    R = state.R
    V = float(state.vmax(np.array([0.0]))[0])
    ratio = probe / spacing
    stride = int(round(ratio))
    if abs(ratio - stride) > 1e-9:
        raise ValueError("spacing must divide the probe spacing")
    dr, dw = spacing * R, spacing * V
    n_pr = int(round((r_window[1] - r_window[0]) / probe)) + 1
    n_pw = int(round(2 * w_frac / probe)) + 1
    pad = 4
    r = r_window[0] * R + dr * np.arange(-pad, (n_pr - 1) * stride + pad + 1)
    w = -w_frac * V + dw * np.arange(-pad, (n_pw - 1) * stride + pad + 1)
    w = 0.5 * (w - w[::-1])
    L0 = L_frac * (r_window[0] * R * V) ** 2
    grid = PhaseGrid(r, w, np.array([L0, 2 * L0]))
    Rm, Wm, Lm = grid.mesh()
    E = KineticField(grid, np.exp(state.profile(r).mu)[:, None, None]
                     * np.sqrt(1.0 + state.gamma * (Wm**2 + Lm / Rm**2)))
    rw = KineticField(grid, Rm * Wm)
    first = poisson_bracket(E, rw)
    second = poisson_bracket(E, first)
    ir = pad + stride * np.arange(n_pr)
    iw = pad + stride * np.arange(n_pw)
    ex1, ex2 = lemma44_closed_forms(state, Rm[np.ix_(ir, iw, [0])], Wm[np.ix_(ir, iw, [0])],
                                    Lm[np.ix_(ir, iw, [0])])
    err1 = np.max(np.abs(first.values[np.ix_(ir, iw, [0])] - ex1))
    err2 = np.max(np.abs(second.values[np.ix_(ir, iw, [0])] - ex2))
    return float(err1), float(err2)


def lemma_identity_suite(state, generators=(), spacings=(0.025, 0.0125, 0.00625)):
    """Run the identity checks and collect errors and margins in a dict."""
    quad = quadrature_for(state)
    e1, e2 = lemma33_errors(state)
    interior = quad.r < 0.98 * quad.R
    report = {"lemma33_first": float(np.max(e1[interior])),
              "lemma33_second": float(np.max(e2[interior]))}
    errs = [lemma44_fd_errors(state, s) for s in spacings]
    report["lemma44_errors_first"] = [e[0] for e in errs]
    report["lemma44_errors_second"] = [e[1] for e in errs]
    report["lemma44_order_first"] = _orders([e[0] for e in errs], spacings)
    report["lemma44_order_second"] = _orders([e[1] for e in errs], spacings)
    margins, dual = [], []
    for h in generators:
        margins.append(float(np.min(lemma43_margin(h, quad))))
        if h.parity != "even":
            p = delta_f_from_h(h, quad, with_fields=False)
            a = p.dlam
            b = delta_lambda_from_rho(p.drho, quad)
            dual.append(float(np.max(np.abs(a - b)) / np.max(np.abs(a))))
    report["lemma43_min_margin"] = min(margins) if margins else None
    report["prop32_dual_route"] = max(dual) if dual else None
    return report


def _orders(errors, spacings):
    out = []
    for (e0, s0), (e1, s1) in zip(zip(errors, spacings), zip(errors[1:], spacings[1:])):
        out.append(math.log(e0 / e1) / math.log(s0 / s1))
    return out
