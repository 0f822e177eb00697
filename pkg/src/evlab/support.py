"""Tensor-product quadrature over the support of a steady state.

Nodes live in ``(r, u, c)`` with ``|v| = u`` and ``c`` the cosine between
``v`` and ``x``, so ``w = u c`` and ``L = r^2 u^2 (1 - c^2)``.  In these
variables ``dv = 2 pi u^2 du dc`` and ``dx = 4 pi r^2 dr``.  Both the radial
and the speed rule are graded towards their outer ends (``r = R`` and
``u = V(r)``) where the integrands vanish like fractional powers of
``1 - E``.  The angular rule is plain Gauss-Legendre.

A background is any object exposing ``gamma``, ``R``, ``profile(r)``,
``vmax(r)``, ``f0_of(mu, v2)`` and ``dphi_of(mu, v2)``; steady states of the
family with parameter ``gamma`` and their rescaled versions both qualify.
"""
import math
from dataclasses import dataclass

import numpy as np

from .quadrature import cumulative_matrix, gauss_legendre, graded_unit_rule

TWO_PI = 2.0 * math.pi
FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class QuadratureOrder:
    nr: int = 64
    nu: int = 24
    nc: int = 16


class SupportQuadrature:
    """Nodes, weights and steady-state data on ``supp f_0``.

    Arrays with a velocity dependence have shape ``(nr, nu, nc)``; radial
    arrays have shape ``(nr,)``.
    """

    def __init__(self, background, nr=64, nu=24, nc=16):
        if background.R <= 0.0:
            raise ValueError("background has empty support")
        self.bg = background
        self.gamma = float(background.gamma)
        self.R = float(background.R)
        self.order = QuadratureOrder(nr, nu, nc)
        g = self.gamma

        s, ws, t = graded_unit_rule(nr)
        self.t = t
        self.r = self.R * s
        self.dr_dt = 2.0 * self.R * (1.0 - t)
        self.wr = self.R * ws                          # dr weights
        self._cum = cumulative_matrix(nr, 1.0)         # int_0^{t_i} d tau

        prof = background.profile(self.r)
        self.prof = prof
        self.V = np.asarray(background.vmax(self.r), dtype=float)

        su, wsu, _ = graded_unit_rule(nu)
        c, wc = gauss_legendre(nc, -1.0, 1.0)
        self.c = c
        u = self.V[:, None] * su[None, :]              # (nr, nu)
        wu = self.V[:, None] * wsu[None, :]
        self.u = u[:, :, None] * np.ones((1, 1, nc))
        self.w = u[:, :, None] * c[None, None, :]
        sin2 = 1.0 - c * c
        self.q = (u * u)[:, :, None] * sin2[None, None, :]        # L / r^2
        r3 = self.r[:, None, None]
        self.L = r3 * r3 * self.q
        self.v2 = self.u * self.u
        # velocity weights for dv at each radius
        self.wv = TWO_PI * (u * u * wu)[:, :, None] * wc[None, None, :]
        # full phase-space weights for dv dx
        self.wx = FOUR_PI * self.r * self.r * self.wr
        self.weights = self.wv * self.wx[:, None, None]

        mu = prof.mu[:, None, None]
        self.mu = mu
        self.lam = prof.lam[:, None, None]
        self.lorentz = np.sqrt(1.0 + g * self.v2)
        self.emu = np.exp(mu)
        self.E = self.emu * self.lorentz
        self.f0 = np.asarray(background.f0_of(mu, self.v2), dtype=float)
        self.dphi = np.asarray(background.dphi_of(mu, self.v2), dtype=float)
        self.abs_dphi = np.abs(self.dphi)
        # partial derivatives of E in (r, w) at fixed L
        dmu = prof.dmu[:, None, None]
        self.dE_dw = g * self.emu * self.w / self.lorentz
        self.dE_dr = self.emu * (dmu * self.lorentz - g * self.q / (r3 * self.lorentz))

    # -- integration helpers ------------------------------------------------

    @property
    def shape(self):
        return self.u.shape

    def velocity_integral(self, values):
        """``int values dv`` at every radial node."""
        return np.sum(self.wv * values, axis=(1, 2))

    def integrate(self, values):
        """``int int values dv dx``."""
        return float(np.sum(self.weights * values))

    def radial_integral(self, values):
        """``int_0^R values(r) dr`` for a radial array."""
        return float(np.sum(self.wr * values))

    def cumulative(self, values):
        """``int_0^{r_i} values(s) ds`` at every radial node."""
        return self._cum @ (values * self.dr_dt)

    def mass_profile(self, rho):
        """``4 pi int_0^r s^2 rho(s) ds`` at the radial nodes."""
        return FOUR_PI * self.cumulative(self.r * self.r * rho)

    def bracket_with_E(self, h_r, h_w):
        """``{h, E}`` from the ``(r, w)`` partials of ``h`` at fixed ``L``."""
        return h_r * self.dE_dw - h_w * self.dE_dr

    def radial(self, values):
        """Broadcast a radial array against the node arrays."""
        return np.asarray(values)[:, None, None]

    def interpolate_radial(self, values, r):
        """Polynomial interpolation of a radial nodal array at radii ``r``.

        Interpolation runs in the grading variable ``t`` in which radial
        profiles are smooth up to ``r = R``; points beyond ``R`` get 0.
        """
        from .quadrature import barycentric_matrix

        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.zeros_like(r)
        inside = r <= self.R
        if inside.any():
            tt = 1.0 - np.sqrt(np.clip(1.0 - r[inside] / self.R, 0.0, 1.0))
            out[inside] = barycentric_matrix(self.t, tt) @ values
        return out
