"""Microscopic equations of state and the induced radial densities.

Energies come in two flavours.  ``eta`` is the Newtonian-like variable
``(E - 1)/gamma`` on which the ansatz ``Phi`` acts; ``E`` is the particle
energy ``exp(mu) * sqrt(1 + gamma |v|^2)``.  Functions taking ``(mu, v2)``
build ``eta`` without forming ``E - 1`` explicitly, which keeps full
relative precision for small ``gamma``.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .quadrature import graded_unit_rule

DEFAULT_NU = 48  # nodes of the graded |v| rule behind g_gamma / h_gamma


class ParameterError(ValueError):
    """Invalid physical parameter (gamma, k, ...)."""


def energy_offset(mu, v2, gamma):
    """``(exp(mu) sqrt(1 + gamma v2) - 1)/gamma``, or ``mu/gamma + v2/2`` at gamma=0."""
    mu = np.asarray(mu, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if gamma == 0.0:
        raise ParameterError("gamma must be positive; use the Newtonian helpers")
    return np.expm1(mu + 0.5 * np.log1p(gamma * v2)) / gamma


class EquationOfState:
    """Interface for an ansatz ``Phi`` with ``Phi = 0`` on ``[0, inf)``.

    Subclasses provide ``phi`` and ``dphi`` on the Newtonian variable and may
    override :meth:`densities` with a faster kernel.
    """

    kind = "abstract"

    def phi(self, eta):
        raise NotImplementedError

    def dphi(self, eta):
        raise NotImplementedError

    def phi_gamma(self, E, gamma):
        _check_gamma(gamma)
        return self.phi((np.asarray(E, dtype=float) - 1.0) / gamma)

    def dphi_gamma(self, E, gamma):
        _check_gamma(gamma)
        return self.dphi((np.asarray(E, dtype=float) - 1.0) / gamma) / gamma

    def densities(self, nu, gamma, n=DEFAULT_NU):
        """``(rho, p)`` of the isotropic state at potential values ``nu``."""
        nu = np.atleast_1d(np.asarray(nu, dtype=float))
        s, ws, _ = graded_unit_rule(n)
        rho = np.zeros_like(nu)
        p = np.zeros_like(nu)
        inside = nu < 0.0
        if not inside.any():
            return rho, p
        nv = nu[inside][:, None]
        if gamma == 0.0:
            umax = np.sqrt(-2.0 * nv)
            u = umax * s
            f = self.phi(nv + 0.5 * u * u)
            rho[inside] = 4.0 * np.pi * np.sum(ws * f * u * u, axis=1) * umax[:, 0]
            p[inside] = 4.0 * np.pi / 3.0 * np.sum(ws * f * u**4, axis=1) * umax[:, 0]
            return rho, p
        umax = np.sqrt(np.expm1(-2.0 * gamma * nv) / gamma)
        u = umax * s
        lorentz = np.sqrt(1.0 + gamma * u * u)
        f = self.phi(energy_offset(gamma * nv, u * u, gamma))
        rho[inside] = 4.0 * np.pi * np.sum(ws * f * lorentz * u * u, axis=1) * umax[:, 0]
        p[inside] = 4.0 * np.pi / 3.0 * np.sum(ws * f * u**4 / lorentz, axis=1) * umax[:, 0]
        return rho, p

    def to_config(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class Polytrope(EquationOfState):
    """``Phi(eta) = (-eta)^k`` for ``eta < 0``."""

    k: float = 2.0
    kind = "polytrope"

    def __post_init__(self):
        if not (0.0 < self.k < 3.5):
            raise ParameterError(f"polytropic exponent k={self.k} outside ]0, 7/2[")
        if self.k < 1.0:
            warnings.warn(
                f"k={self.k} < 1: dphi is unbounded at the cutoff; "
                "density integrals rely on graded panels",
                RuntimeWarning,
                stacklevel=3,
            )

    @property
    def singular_derivative(self):
        return self.k < 1.0

    def phi(self, eta):
        eta = np.asarray(eta, dtype=float)
        neg = np.maximum(-eta, 0.0)
        return np.where(eta < 0.0, neg**self.k, 0.0)

    def dphi(self, eta):
        eta = np.asarray(eta, dtype=float)
        neg = np.maximum(-eta, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = -self.k * neg ** (self.k - 1.0)
        return np.where(eta < 0.0, val, 0.0)

    def densities(self, nu, gamma, n=DEFAULT_NU):
        nu = np.atleast_1d(np.asarray(nu, dtype=float))
        s, ws, _ = graded_unit_rule(n)
        return kernels.polytrope_densities(nu, float(gamma), float(self.k), s, ws)

    def newtonian_density_constant(self):
        """``c`` in ``rho = c (-U)^(k + 3/2)`` for the Newtonian polytrope."""
        beta = math.exp(math.lgamma(self.k + 1.0) + math.lgamma(1.5) - math.lgamma(self.k + 2.5))
        return 4.0 * math.pi * math.sqrt(2.0) * beta

    def to_config(self):
        return {"kind": self.kind, "k": self.k}


def make_eos(kind="polytrope", k=2.0):
    if kind != "polytrope":
        raise ParameterError(f"unknown equation of state kind {kind!r}")
    return Polytrope(float(k))


def _check_gamma(gamma):
    if not gamma > 0.0:
        raise ParameterError(f"gamma must be positive, got {gamma}")


def phi(eos, eta):
    return eos.phi(eta)


def dphi(eos, eta):
    return eos.dphi(eta)


def phi_gamma(eos, E, gamma):
    return eos.phi_gamma(E, gamma)


def dphi_gamma(eos, E, gamma):
    return eos.dphi_gamma(E, gamma)


def g_gamma(eos, nu, gamma, n=DEFAULT_NU):
    """Rest-mass-energy density ``rho_0 = g_gamma(nu)``."""
    _check_gamma(gamma)
    return eos.densities(nu, gamma, n)[0]


def h_gamma(eos, nu, gamma, n=DEFAULT_NU):
    """Radial pressure ``p_0 = h_gamma(nu)``."""
    _check_gamma(gamma)
    return eos.densities(nu, gamma, n)[1]


def g_newton(eos, nu, n=DEFAULT_NU):
    """Newtonian density ``4 pi int_nu^0 Phi(E) sqrt(2 (E - nu)) dE``."""
    return eos.densities(nu, 0.0, n)[0]


@dataclass(frozen=True)
class CasimirSpec:
    """Casimir integrand ``chi`` with ``chi(0) = 0`` and its derivative."""

    chi: object
    dchi: object
    name: str = "custom"

    def __call__(self, s):
        return self.chi(np.asarray(s, dtype=float))


def casimir_chi_from_state(eos, gamma):
    """``chi`` with ``chi'(f0) = -E`` on the range of the steady state.

    For the polytrope ``E = 1 - gamma f0^(1/k)``; negative arguments use the
    odd extension of the power so that ``chi`` stays C^1 on the real line.
    """
    _check_gamma(gamma)
    if not isinstance(eos, Polytrope):
        raise NotImplementedError("closed-form chi is only available for polytropes")
    a = 1.0 / eos.k

    def chi(s):
        s = np.asarray(s, dtype=float)
        return -s + gamma * np.sign(s) * np.abs(s) ** (1.0 + a) / (1.0 + a)

    def dchi(s):
        s = np.asarray(s, dtype=float)
        return -(1.0 - gamma * np.abs(s) ** a)

    return CasimirSpec(chi, dchi, name="energy")


def power_casimir(n):
    """``chi(s) = s^n`` (integer ``n >= 1``)."""
    return CasimirSpec(lambda s: np.asarray(s, dtype=float) ** n,
                       lambda s: n * np.asarray(s, dtype=float) ** (n - 1),
                       name=f"s^{n}")


def sine_casimir():
    return CasimirSpec(np.sin, np.cos, name="sin")
