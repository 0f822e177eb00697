"""Static solutions: the relativistic potential ``nu_0`` and its Newtonian limit.

Both problems are integrated as the first-order system

    nu' = (4 pi gamma r p + m/r^2) / (1 - 2 gamma m / r),   m' = 4 pi r^2 rho,

with ``rho = g_gamma(nu)`` and ``p = h_gamma(nu)``; ``gamma = 0`` is the
Newtonian problem.  A fourth-order series covers the first step off the
centre, then classical RK4 runs on a uniform grid.  Values between grid
nodes come from a single RK4 step of the right length, so every radius is
resolved to the order of the scheme.  The potential is normalised by
``nu_0(R) = 0`` at the support radius ``R``.
"""
import json
import math
from typing import NamedTuple

import numpy as np

from . import kernels
from ._accel import USE_NUMBA
from .eos import DEFAULT_NU, EquationOfState, ParameterError, Polytrope, energy_offset
from .errors import AdmissibilityError, NoCompactSupportError
from .quadrature import graded_unit_rule

FOUR_PI = 4.0 * math.pi
DEFAULT_STEPS = 4096
MIN_MARGIN = 1e-6


class RadialProfile(NamedTuple):
    r: np.ndarray
    nu: np.ndarray
    m: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    dnu: np.ndarray
    dmu: np.ndarray
    d2mu: np.ndarray
    dlam: np.ndarray
    rho: np.ndarray
    p: np.ndarray
    q: np.ndarray


class _Integrator:
    """RK4 solution of the (nu, m) system on ``r_k = k h``."""

    def __init__(self, eos, gamma, nu_ring, n_u):
        self.eos = eos
        self.gamma = float(gamma)
        self.nu_ring = float(nu_ring)
        self.n_u = n_u
        self._s, self._ws, _ = graded_unit_rule(n_u)
        self._fast = USE_NUMBA and isinstance(eos, Polytrope)
        rho_c, p_c = self.dens(np.array([self.nu_ring]))
        self.rho_c, self.p_c = float(rho_c[0]), float(p_c[0])
        d = 1e-4 * abs(self.nu_ring)
        rp, _ = self.dens(np.array([self.nu_ring + d, self.nu_ring - d]))
        drho_c = (rp[0] - rp[1]) / (2.0 * d)
        g = self.gamma
        a = 2.0 * math.pi / 3.0 * (self.rho_c + 3.0 * g * self.p_c)
        dp_c = -(self.rho_c + g * self.p_c)
        b = (FOUR_PI * g * dp_c * a + 0.8 * math.pi * drho_c * a
             + 2.0 * a * (8.0 * math.pi / 3.0) * g * self.rho_c)
        self.series = (a, b, drho_c)
        # core radius: where the quadratic series would reach nu = 0
        self.r_core = math.sqrt(-self.nu_ring / a) if a > 0.0 else 0.0

    def dens(self, nu):
        nu = np.ascontiguousarray(nu, dtype=float)
        if self._fast:
            return kernels.polytrope_densities_nb(nu, self.gamma, self.eos.k, self._s, self._ws)
        return self.eos.densities(nu, self.gamma, self.n_u)

    def series_at(self, r):
        a, b, drho_c = self.series
        r = np.asarray(r, dtype=float)
        nu = self.nu_ring + a * r**2 + 0.25 * b * r**4
        m = FOUR_PI / 3.0 * self.rho_c * r**3 + 0.8 * math.pi * drho_c * a * r**5
        return nu, m

    def run(self, h, nsteps):
        nu1, m1 = self.series_at(h)
        if self._fast:
            r, nu, m, fail = kernels.tov_rk4_nb(h, float(nu1), float(m1), h, nsteps - 1,
                                                self.gamma, self.eos.k, self._s, self._ws,
                                                MIN_MARGIN, self.r_core)
        else:
            r, nu, m, fail = kernels.tov_rk4_np(h, float(nu1), float(m1), h, nsteps - 1,
                                                self.gamma, self.dens, MIN_MARGIN, self.r_core)
        r = np.concatenate(([0.0], r))
        nu = np.concatenate(([self.nu_ring], nu))
        m = np.concatenate(([0.0], m))
        return r, nu, m, (fail + 1 if fail >= 0 else -1)

    def step_from(self, r_nodes, nu_nodes, m_nodes, idx, steps):
        idx = np.ascontiguousarray(idx, dtype=np.int64)
        steps = np.ascontiguousarray(steps, dtype=float)
        if self._fast:
            return kernels.tov_dense_nb(r_nodes, nu_nodes, m_nodes, idx, steps,
                                        self.gamma, self.eos.k, self._s, self._ws, self.r_core)
        return kernels.tov_dense_np(r_nodes, nu_nodes, m_nodes, idx, steps, self.gamma, self.dens,
                                    self.r_core)


class _RadialSolution:
    """Grid solution plus dense evaluation and analytic exterior."""

    def __init__(self, integ, r, nu, m, R):
        self.integ = integ
        self.gamma = integ.gamma
        self.nu_ring = integ.nu_ring
        self.r = r
        self.nu = nu
        self.m = m
        self.h = r[1] - r[0]
        self.R = R
        self.r_last = r[-1]
        self.mass = m[-1]

    def nu_m(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        nu = np.empty_like(r)
        m = np.empty_like(r)
        first = r < self.h
        outside = r > self.r_last
        mid = ~(first | outside)
        if first.any():
            nu[first], m[first] = self.integ.series_at(r[first])
        if mid.any():
            idx = np.minimum(np.floor(r[mid] / self.h).astype(np.int64), self.r.size - 1)
            idx = np.maximum(idx, 1)
            nu[mid], m[mid] = self.integ.step_from(self.r, self.nu, self.m, idx,
                                                   r[mid] - self.r[idx])
        if outside.any():
            ro = r[outside]
            m[outside] = self.mass
            g = self.gamma
            if g == 0.0:
                nu[outside] = self.nu[-1] + self.mass * (1.0 / self.r_last - 1.0 / ro)
            else:
                ratio = (1.0 - 2.0 * g * self.mass / ro) / (1.0 - 2.0 * g * self.mass / self.r_last)
                nu[outside] = self.nu[-1] + 0.5 * np.log(ratio) / g
        return nu, m

    def find_root(self, i):
        """Zero of nu in ``[r_i, r_{i+1}]`` by bisection on the dense step."""
        lo, hi = 0.0, self.h
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            nu, _ = self.integ.step_from(self.r, self.nu, self.m, np.array([i]), np.array([mid]))
            if nu[0] < 0.0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(self.r[i], 1.0):
                break
        return self.r[i] + 0.5 * (lo + hi)

    def profile(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        g = self.gamma
        nu, m = self.nu_m(r)
        rho, p = self.integ.dens(nu)
        safe = np.where(r > 0.0, r, 1.0)
        den = np.where(r > 0.0, 1.0 - 2.0 * g * m / safe, 1.0)
        mr2 = np.where(r > 0.0, m / safe**2, 0.0)
        dnu = (FOUR_PI * g * r * p + mr2) / den
        dlam = g * (FOUR_PI * r * rho - mr2) / den
        lam = -0.5 * np.log(den)
        # nu'' from differentiating the right-hand side; p' = -(rho + gamma p) nu'
        dp = -(rho + g * p) * dnu
        dm = FOUR_PI * r**2 * rho
        mr3 = np.where(r > 0.0, m / safe**3, 0.0)
        num = FOUR_PI * g * r * p + mr2
        dnum = FOUR_PI * g * (p + r * dp) + FOUR_PI * rho - 2.0 * mr3
        dden = -2.0 * g * (FOUR_PI * r * rho - mr2)
        d2nu = (dnum * den - num * dden) / den**2
        centre = r == 0.0
        if centre.any():
            d2nu[centre] = 2.0 * self.integ.series[0]
        return RadialProfile(r=r, nu=nu, m=m, mu=g * nu, lam=lam, dnu=dnu, dmu=g * dnu,
                             d2mu=g * d2nu, dlam=dlam, rho=rho, p=p, q=2.0 * p)


def _integrate(eos, gamma, nu_ring, n_steps, r_factor, n_u):
    integ = _Integrator(eos, gamma, nu_ring, n_u)
    a = integ.series[0]
    scale = math.sqrt(abs(nu_ring) / a) if a > 0.0 else math.inf
    if not math.isfinite(scale):
        raise NoCompactSupportError("vanishing central density: no compact support")
    # coarse pass locates the support radius for the step size
    h0 = scale / 64.0
    r, nu, m, fail = integ.run(h0, 64 * 400)
    crossing = np.nonzero(nu >= 0.0)[0]
    if crossing.size == 0:
        if fail >= 0:
            raise AdmissibilityError(f"2 gamma m/r reached 1 - {MIN_MARGIN} near r={r[-1]:.6g}")
        raise NoCompactSupportError(f"nu never reached 0 within r={r[-1]:.6g}")
    r_guess = r[crossing[0]]
    h = r_guess / n_steps
    total = int(math.ceil(r_factor * n_steps)) + 2
    r, nu, m, fail = integ.run(h, total)
    if fail >= 0:
        raise AdmissibilityError(f"2 gamma m/r reached 1 - {MIN_MARGIN} near r={r[fail]:.6g}")
    crossing = np.nonzero(nu >= 0.0)[0]
    if crossing.size == 0:
        raise NoCompactSupportError("nu did not reach 0 on the refined grid")
    sol = _RadialSolution(integ, r, nu, m, None)
    sol.R = sol.find_root(crossing[0] - 1)
    return sol


class SteadyState:
    """Isotropic steady state ``f_0 = Phi((E - 1)/gamma)`` of (EV_gamma).

    Parameters are the equation of state, ``gamma = 1/c^2`` and the central
    value ``nu_ring = nu_0(0) < 0``.  Use :func:`solve` to build one.
    """

    def __init__(self, eos, gamma, nu_ring, solution=None):
        self.eos = eos
        self.gamma = float(gamma)
        self.nu_ring = float(nu_ring)
        self._sol = solution
        if solution is None:
            self.r = np.zeros(1)
            self.nu = np.zeros(1)
            self.m = np.zeros(1)
            self.R = 0.0
            self.step = 0.0
        else:
            self.r = solution.r
            self.nu = solution.nu
            self.m = solution.m
            self.R = solution.R
            self.step = solution.h
        for arr in (self.r, self.nu, self.m):
            arr.setflags(write=False)

    @property
    def is_vacuum(self):
        return self._sol is None

    # --- background interface shared with scaled states --------------------

    def profile(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if self._sol is None:
            z = np.zeros_like(r)
            return RadialProfile(r, z, z, z, z, z, z, z, z, z, z, z)
        return self._sol.profile(r)

    def vmax(self, r):
        """Largest ``|v|`` inside the support at radius ``r``."""
        mu = self.profile(r).mu
        with np.errstate(invalid="ignore"):
            return np.where(mu < 0.0, np.sqrt(np.maximum(np.expm1(-2.0 * mu), 0.0) / self.gamma), 0.0)

    def eta(self, mu, v2):
        return energy_offset(mu, v2, self.gamma)

    def f0_of(self, mu, v2):
        return self.eos.phi(self.eta(mu, v2))

    def dphi_of(self, mu, v2):
        """``phi'(E)`` at ``E = exp(mu) sqrt(1 + gamma v2)``."""
        return self.eos.dphi(self.eta(mu, v2)) / self.gamma

    # --- diagnostics ---------------------------------------------------------

    @property
    def mass(self):
        """``m`` at the outer edge of the grid, i.e. the ADM mass."""
        return 0.0 if self._sol is None else float(self._sol.mass)

    def mass_at(self, r):
        return self.profile(r).m

    def redshift(self):
        return redshift(self)

    def mu_asymptotic(self):
        """``mu_0(inf)`` of the exterior Schwarzschild continuation."""
        if self._sol is None:
            return 0.0
        r_last = self._sol.r_last
        p = self.profile(np.array([r_last]))
        return float(p.mu[0] - 0.5 * math.log(1.0 - 2.0 * self.gamma * self.mass / r_last))

    def admissibility_margin(self):
        """``min_r (1 - 2 gamma m(r)/r)`` over the grid."""
        if self._sol is None:
            return 1.0
        r = self.r[1:]
        return float(np.min(1.0 - 2.0 * self.gamma * self.m[1:] / r))

    def prop41_bounds(self, n=512):
        """Empirical constants for the steady-state bound suite."""
        if self._sol is None:
            return {}
        rs = np.linspace(0.0, self.R, n + 1)[1:-1]
        prof = self.profile(rs)
        all_r = np.linspace(0.0, self._sol.r_last, 4 * n)
        full = self.profile(all_r)
        vmax = float(self.vmax(np.array([0.0]))[0])
        return {
            "support_radius": self.R,
            "max_speed": vmax,
            "C_support": self.R + vmax,
            "min_dnu_interior": float(np.min(prof.dnu[rs > 0.05 * self.R])),
            "min_dnu_over_r": float(np.min(prof.dnu / rs)),
            "max_rho": float(np.max(full.rho)),
            "max_p": float(np.max(full.p)),
            "max_lambda": float(np.max(np.abs(full.lam))),
            "max_nu": float(np.max(np.abs(full.nu))),
            "max_dnu": float(np.max(np.abs(full.dnu))),
            "admissibility_margin": self.admissibility_margin(),
        }

    def check_invariants(self):
        """Raise if a structural invariant of the steady state fails."""
        if self._sol is None:
            return
        if self.admissibility_margin() <= 0.0:
            raise AdmissibilityError("2 gamma m/r >= 1 somewhere on the grid")
        inside = self.r <= self.R
        if np.any(np.diff(self.nu[inside]) <= 0.0):
            raise AdmissibilityError("nu_0 is not strictly increasing on the support")
        if abs(float(self.profile(np.array([self.R])).nu[0])) > 1e-10 * abs(self.nu_ring):
            raise AdmissibilityError("nu_0(R) != 0 to tolerance")

    def to_table(self):
        prof = self.profile(self.r)
        return {"r": prof.r, "nu0": prof.nu, "mu0": prof.mu, "lambda0": prof.lam, "m": prof.m,
                "rho0": prof.rho, "p0": prof.p, "q0": prof.q}

    def sidecar(self):
        return {"gamma": self.gamma, "nu_ring": self.nu_ring, "R": self.R,
                "z": redshift(self), "adm_mass": self.mass,
                "eos": self.eos.to_config(), "steps": int(self.r.size - 1)}


class NewtonianState:
    """Solution ``U`` of the semilinear Poisson equation with ``U(0) = nu_ring``."""

    def __init__(self, eos, nu_ring, solution):
        self.eos = eos
        self.nu_ring = float(nu_ring)
        self._sol = solution
        self.r = solution.r
        self.U = solution.nu
        self.R0 = solution.R

    def potential(self, r):
        return self._sol.nu_m(r)[0]

    def density(self, r):
        return self._sol.integ.dens(self.potential(r))[0]

    def mass(self, r):
        return self._sol.nu_m(r)[1]


def solve_newtonian(eos, nu_ring, n_steps=DEFAULT_STEPS, r_factor=2.0, n_u=DEFAULT_NU):
    """Newtonian steady state (``gamma = 0``) with ``U(0) = nu_ring``."""
    if not nu_ring < 0.0:
        raise NoCompactSupportError("nu_ring must be negative for a non-trivial state")
    if not isinstance(eos, EquationOfState):
        raise ParameterError("eos must be an EquationOfState")
    sol = _integrate(eos, 0.0, nu_ring, n_steps, r_factor, n_u)
    return NewtonianState(eos, nu_ring, sol)


def solve(eos, gamma, nu_ring, n_steps=DEFAULT_STEPS, r_factor=2.0, n_u=DEFAULT_NU,
          check=True):
    """Relativistic steady state of (EV_gamma) with ``nu_0(0) = nu_ring``.

    ``nu_ring = 0`` returns the vacuum.  The grid extends to ``r_factor``
    times the support radius; beyond it the exterior Schwarzschild solution
    is used analytically.
    """
    if not gamma > 0.0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    if nu_ring > 0.0:
        raise ParameterError(f"nu_ring must be <= 0, got {nu_ring}")
    if nu_ring == 0.0:
        return SteadyState(eos, gamma, 0.0, None)
    sol = _integrate(eos, gamma, nu_ring, n_steps, r_factor, n_u)
    state = SteadyState(eos, gamma, nu_ring, sol)
    if check:
        state.check_invariants()
    return state


def redshift(state):
    """Central redshift ``exp(-gamma nu_ring) - 1``."""
    return math.expm1(-state.gamma * state.nu_ring)


def _fd_first(y, h):
    d = np.full_like(y, np.nan)
    d[2:-2] = (y[:-4] - 8.0 * y[1:-3] + 8.0 * y[3:-1] - y[4:]) / (12.0 * h)
    return d


def _fd_second(y, h):
    d = np.full_like(y, np.nan)
    d[2:-2] = (-y[:-4] + 16.0 * y[1:-3] - 30.0 * y[2:-2] + 16.0 * y[3:-1] - y[4:]) / (12.0 * h * h)
    return d


def field_equation_residuals(state):
    """Residuals of the static field equations on the solver grid.

    Metric derivatives are fourth-order finite differences of the stored
    ``lambda_0`` and ``mu_0`` profiles, so the residuals measure how well the
    integrated profiles satisfy the equations rather than restating the ODE.
    """
    if state.is_vacuum:
        z = np.zeros(1)
        return {"r": z, "lambda_eq": z, "mu_eq": z, "second_order": z, "max": 0.0}
    prof = state.profile(state.r)
    h = state.step
    g = state.gamma
    r = prof.r
    dlam = _fd_first(prof.lam, h)
    dmu = _fd_first(prof.mu, h)
    d2mu = _fd_second(prof.mu, h)
    e2l = np.exp(-2.0 * prof.lam)
    sl = slice(2, -2)
    r = r[sl]
    res1 = e2l[sl] * (2.0 * r * dlam[sl] - 1.0) + 1.0 - 8.0 * math.pi * g * r**2 * prof.rho[sl]
    res2 = e2l[sl] * (2.0 * r * dmu[sl] + 1.0) - 1.0 - 8.0 * math.pi * g**2 * r**2 * prof.p[sl]
    res3 = (e2l[sl] * (d2mu[sl] + (dmu[sl] - dlam[sl]) * (dmu[sl] + 1.0 / r))
            - FOUR_PI * g**2 * prof.q[sl])
    worst = max(np.max(np.abs(res1)), np.max(np.abs(res2)), np.max(np.abs(res3)))
    return {"r": r, "lambda_eq": res1, "mu_eq": res2, "second_order": res3, "max": float(worst)}


def write_state(state, csv_path, json_path, extra=None):
    """CSV with columns ``r,nu0,mu0,lambda0,m,rho0,p0,q0`` plus a JSON sidecar."""
    table = state.to_table()
    cols = list(table)
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for row in zip(*(table[c] for c in cols)):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    meta = state.sidecar()
    if extra:
        meta.update(extra)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def adm_mass(f, state):
    """``H(f) = int int <v> f dv dx`` on the support quadrature of ``state``."""
    from .energy import adm_mass as _adm

    return _adm(f, state)


def casimir(f, chi, state):
    """``C(f) = int int e^{lambda_f} chi(f) dv dx`` on the support quadrature of ``state``."""
    from .energy import casimir as _casimir

    return _casimir(f, chi, state)
