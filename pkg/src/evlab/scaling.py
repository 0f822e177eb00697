"""Scaling between the family with parameter ``gamma`` and the system with ``gamma = 1``.

The map

    T^s f(x, v) = s^{-3/2} f(s^{-1/2} x, s^{-1/2} v),   T^s lambda(r) = lambda(s^{-1/2} r)

sends solutions with parameter ``gamma`` to solutions with parameter
``gamma/s``; ``s = gamma`` lands in the system with ``c = 1``.  Generators
scale as ``h^s(x, v) = s^{-1} h(s^{1/2} x, s^{1/2} v)`` (see
:func:`evlab.generators.scale_generator`), so that accessible
perturbations and free energies satisfy

    delta f_h = T^s delta f_{h^s},       A(delta f) = s^{-3/2} A^s(T^s delta f).

Scaled backgrounds are evaluated either analytically (the original profile
at ``r/sqrt(s)``) or through a cubic spline of tabulated profiles; the
second mode is what one gets from stored data and carries interpolation
error.
"""
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .energy import coercivity_rhs, free_energy, stability_lhs, bracket_margin_profile
from .errors import AdmissibilityError, ConfigError, NoCompactSupportError
from .generators import ODD, random_generators, scale_generator
from .perturbation import _build, _sample, quadrature_for
from .steady_state import RadialProfile, solve

__all__ = ["ScaledState", "scale_state", "scale_generator", "scale_phase_function", "redshift_z",
           "relation_checks", "energy_relation_check", "bracket_relation_check", "group_check",
           "adm_mass_check", "FamilyRecord", "family_scan", "threshold_surrogates",
           "stability_along_trajectory"]

MODES = ("analytic", "interpolate")
SCAN_COLUMNS = ("gamma", "z", "R", "mass", "margin", "min_coercivity_ratio", "n_samples")


class ScaledState:
    """Background ``T^s`` of ``base`` with parameter ``base.gamma / s``.

    Exposes the background interface used by the quadrature, the
    perturbation formulas, the energy and the evolution, so every tool
    applies unchanged.

    Parameters
    ----------
    base : SteadyState or ScaledState
    s : float
        Scaling factor; ``s = base.gamma`` gives the member of the family
        with ``gamma = 1``.
    mode : {"analytic", "interpolate"}
    n_table : int
        Spline knots over ``[0, r_last]`` in interpolation mode.
    """

    def __init__(self, base, s, mode="analytic", n_table=2049):
        if not s > 0.0:
            raise ConfigError("scaling factor must be positive")
        if mode not in MODES:
            raise ConfigError(f"unknown resampling mode {mode!r}")
        # flatten chains so that T^a T^b = T^{ab} holds by construction only in the
        # analytic mode; the interpolating mode keeps its own tables
        if isinstance(base, ScaledState) and mode == "analytic" and base.mode == "analytic":
            s = s * base.s
            base = base.base
        self.base = base
        self.s = float(s)
        self.mode = mode
        self.gamma = base.gamma / self.s
        self.R = math.sqrt(self.s) * base.R
        self.nu_ring = self.s * base.nu_ring
        self.eos = getattr(base, "eos", None)
        self._spline = None
        if mode == "interpolate":
            r_last = float(getattr(base, "r", np.array([2.0 * base.R]))[-1]) or 2.0 * base.R
            knots = np.linspace(0.0, r_last, n_table)
            pr = base.profile(knots)
            self._spline = {name: CubicSpline(knots, getattr(pr, name))
                            for name in ("mu", "lam", "dmu", "d2mu", "dlam", "rho", "p", "q", "m")}
            self._r_last = r_last

    @property
    def is_vacuum(self):
        return self.R <= 0.0

    def _base_profile(self, y):
        if self._spline is None or np.all(y > self._r_last):
            return self.base.profile(y)
        pr = self.base.profile(y)          # exterior values beyond the table
        inside = y <= self._r_last
        vals = {}
        for name in RadialProfile._fields:
            arr = np.array(getattr(pr, name), dtype=float)
            if name in self._spline:
                arr[inside] = self._spline[name](y[inside])
            vals[name] = arr
        vals["nu"] = vals["mu"] / self.base.gamma
        vals["dnu"] = vals["dmu"] / self.base.gamma
        return RadialProfile(**vals)

    def profile(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        s = self.s
        rs = math.sqrt(s)
        pr = self._base_profile(r / rs)
        return RadialProfile(r=r, nu=s * pr.nu, m=s * rs * pr.m, mu=pr.mu, lam=pr.lam,
                             dnu=rs * pr.dnu, dmu=pr.dmu / rs, d2mu=pr.d2mu / s, dlam=pr.dlam / rs,
                             rho=pr.rho, p=s * pr.p, q=s * pr.q)

    def vmax(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        mu = self.profile(r).mu
        with np.errstate(invalid="ignore"):
            return np.where(mu < 0.0, np.sqrt(np.maximum(np.expm1(-2.0 * mu), 0.0) / self.gamma), 0.0)

    def f0_of(self, mu, v2):
        return self.s ** -1.5 * self.base.f0_of(mu, np.asarray(v2) / self.s)

    def dphi_of(self, mu, v2):
        return self.s ** -1.5 * self.base.dphi_of(mu, np.asarray(v2) / self.s)

    @property
    def mass(self):
        return self.s ** 1.5 * self.base.mass

    def redshift(self):
        return redshift_z(self.base.gamma, self.base.nu_ring)

    def __repr__(self):
        return f"ScaledState(s={self.s!r}, gamma={self.gamma!r}, mode={self.mode!r})"


def scale_state(state, s=None, mode="analytic"):
    """``T^s state``; by default ``s = state.gamma`` (the member with ``gamma = 1``)."""
    s = state.gamma if s is None else s
    if not s > 0.0:
        raise ConfigError("gamma must be positive")
    if s == 1.0 and mode == "analytic":
        return state
    return ScaledState(state, s, mode)


def scale_phase_function(f, s):
    """``T^s f`` for a callable ``f(r, w, L)``."""
    rs = math.sqrt(s)

    def scaled(r, w, L):
        return s ** -1.5 * f(np.asarray(r) / rs, np.asarray(w) / rs, np.asarray(L) / (s * s))

    return scaled


def redshift_z(gamma, nu_ring):
    """Central redshift ``e^{-gamma nu_ring} - 1``."""
    return math.expm1(-gamma * nu_ring)


# -- relation checks ------------------------------------------------------------


def _rel(a, b):
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / scale if scale > 0.0 else 0.0


def relation_checks(h, state, s=None, mode="analytic", order=None):
    """Node-wise comparison of both sides of the scaling relations.

    ``h`` is a generator for the scaled background ``T^s state``; the
    original side uses ``h^s`` on ``state``.  The two quadratures have the
    same order, so their nodes are images of each other under the scaling
    and the comparison needs no interpolation of phase-space data.

    Returns relative errors for ``bracket`` ``{h, f_0^s} = T^s {h^s, f_0}``,
    ``delta_f`` (``delta f_h = T^s delta f_{h^s}``), ``delta_lambda``
    (``T^s`` acting as a radial profile) and ``energy``
    (``A(delta f) = s^{-3/2} A^s(T^s delta f)``), plus the two energies.
    """
    s = state.gamma if s is None else s
    scaled = scale_state(state, s, mode) if s != 1.0 or mode != "analytic" else state
    q1 = quadrature_for(scaled, order)
    q0 = quadrature_for(state, order)
    hs = scale_generator(h, s)
    p1 = _build(_sample(h, q1), q1, with_fields=False)
    p0 = _build(_sample(hs, q0), q0, with_fields=False)
    bracket1 = q1.dphi * p1.bracket
    bracket0 = s ** -1.5 * q0.dphi * p0.bracket
    A1 = free_energy(p1)
    A0 = free_energy(p0)
    denom = max(abs(A0), abs(s ** -1.5 * A1))
    return {
        "bracket": _rel(bracket1, bracket0),
        "delta_f": _rel(p1.df, s ** -1.5 * p0.df),
        "delta_lambda": _rel(p1.dlam, p0.dlam),
        "energy": abs(A0 - s ** -1.5 * A1) / denom if denom > 0.0 else 0.0,
        "A": A0,
        "A_scaled": A1,
    }


def energy_relation_check(h, state, s=None, mode="analytic", order=None):
    """Relative residual of ``A(delta f_{h^s}) = s^{-3/2} A^s(delta f_h)``."""
    return relation_checks(h, state, s, mode, order)["energy"]


def bracket_relation_check(h, state, s=None, mode="analytic", order=None):
    return relation_checks(h, state, s, mode, order)["bracket"]


def group_check(state, s1, s2, radii=None):
    """Largest relative profile difference between ``T^{s2} T^{s1}`` and ``T^{s1 s2}``.

    Both sides are built without chain flattening so the check exercises
    the composition of the transformation rules.
    """
    a = _Unflattened(ScaledState(state, s1), s2)
    b = ScaledState(state, s1 * s2)
    radii = np.linspace(0.0, 1.5 * b.R, 301) if radii is None else np.asarray(radii)
    pa, pb = a.profile(radii), b.profile(radii)
    err = max(_rel(getattr(pa, k), getattr(pb, k)) for k in RadialProfile._fields if k != "r")
    v2 = np.linspace(0.0, 1.0, 7) * float(b.vmax(np.array([0.0]))[0]) ** 2
    mu = np.full_like(v2, float(pb.mu[0]))
    err = max(err, _rel(a.f0_of(mu, v2), b.f0_of(mu, v2)), _rel(a.dphi_of(mu, v2), b.dphi_of(mu, v2)))
    return err


class _Unflattened(ScaledState):
    """``T^s`` applied on top of another scaled state without merging the factors."""

    def __init__(self, base, s):
        self.base = base
        self.s = float(s)
        self.mode = "analytic"
        self.gamma = base.gamma / self.s
        self.R = math.sqrt(self.s) * base.R
        self.nu_ring = self.s * base.nu_ring
        self.eos = getattr(base, "eos", None)
        self._spline = None


def adm_mass_check(state, s=None, order=None):
    """ADM mass of ``T^s state`` by two routes.

    Route one transforms the profile mass, ``s^{3/2} m(R)``; route two
    integrates ``<v> f_0^s`` over the scaled support.  Returns both values
    and their relative difference.
    """
    from .energy import adm_mass

    s = state.gamma if s is None else s
    scaled = scale_state(state, s)
    quad = quadrature_for(scaled, order)
    by_profile = float(scaled.profile(np.array([scaled.R])).m[0])
    by_quadrature = adm_mass(quad.f0, scaled)
    return {"profile": by_profile, "quadrature": by_quadrature,
            "rel_error": abs(by_profile - by_quadrature) / abs(by_profile)}


# -- stability of the family ----------------------------------------------------------


def stability_along_trajectory(trajectory):
    """Instantiate the family stability estimate on stored snapshots.

    For each snapshot the left-hand side (explicit-constant form) is
    compared with ``A(0)``.  Since ``A`` is conserved only up to the drift
    of the scheme, the estimate counts as satisfied when
    ``lhs(t) <= A(0) (1 + drift)``.
    """
    states = trajectory.states
    if not states:
        raise ConfigError("trajectory has no stored snapshots; evolve with keep=True")
    A0 = states[0].A
    drift = trajectory.energy_drift
    lhs = []
    for st in states:
        quad = st.perturbation.quad
        lhs.append(stability_lhs(st.h, quad)["remark"])
    lhs = np.array(lhs)
    return {"t": list(trajectory.t), "lhs": lhs.tolist(), "A0": A0, "drift": drift,
            "max_ratio": float(np.max(lhs) / A0),
            "holds": bool(np.all(lhs <= A0 * (1.0 + drift)))}


@dataclass(frozen=True)
class FamilyRecord:
    """One member of the family, in the units of the system with ``gamma = 1``."""

    gamma: float
    z: float
    R: float
    mass: float
    margin: float
    min_coercivity_ratio: float
    n_samples: int

    def row(self):
        return [getattr(self, c) for c in SCAN_COLUMNS]


def family_record(eos, nu_ring, gamma, count=8, seed=0, family=ODD):
    """Solve, scale and sample one family member.

    The coercivity ratio is ``A / rhs`` with the explicit-constant form of
    the bound on ``count`` seeded generators; ratios at least one mean the
    estimate holds for every sample.
    """
    st = solve(eos, gamma, nu_ring)
    if st.is_vacuum:
        raise NoCompactSupportError(f"no compact support for nu_ring={nu_ring}")
    margin = float(np.min(bracket_margin_profile(st)))
    ratios = []
    for h in random_generators(st, count, family=family, seed=seed):
        quad = quadrature_for(st)
        p = _build(_sample(h, quad), quad, with_fields=False)
        rhs = coercivity_rhs(h, st)
        bound = rhs["remark"] + rhs["even"]
        ratios.append(free_energy(p) / bound if bound > 0.0 else math.inf)
    return FamilyRecord(gamma=float(gamma), z=redshift_z(gamma, nu_ring), R=math.sqrt(gamma) * st.R,
                        mass=gamma ** 1.5 * st.mass, margin=margin,
                        min_coercivity_ratio=float(min(ratios)) if ratios else math.nan,
                        n_samples=len(ratios))


def _record_task(args):
    eos, nu_ring, gamma, count, seed, family = args
    return family_record(eos, nu_ring, gamma, count, seed, family)


def family_scan(eos, nu_ring, gammas, count=8, seed=0, family=ODD, workers=None, done=(), on_record=None):
    """Records for every ``gamma`` not in ``done``, in increasing ``gamma``.

    Members are independent and run in a process pool of ``workers``
    (default ``EV_LAB_THREADS`` or 1).  ``on_record`` receives each record
    in increasing ``gamma`` order, so a writer can append as results
    arrive.
    """
    gammas = sorted(set(float(g) for g in gammas))
    if any(not g > 0.0 for g in gammas):
        raise ConfigError("gamma values must be positive")
    done = {float(g) for g in done}
    todo = [g for g in gammas if g not in done]
    if workers is None:
        workers = int(os.environ.get("EV_LAB_THREADS", "1") or 1)
    tasks = [(eos, nu_ring, g, count, seed, family) for g in todo]
    records = []
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_record_task, tasks)
            for rec in results:
                records.append(rec)
                if on_record is not None:
                    on_record(rec)
    else:
        for task in tasks:
            rec = _record_task(task)
            records.append(rec)
            if on_record is not None:
                on_record(rec)
    return records


def threshold_surrogates(eos, nu_ring, records=(), target=0.75, gamma_hi=1.0, tol=1e-3):
    """Empirical stand-ins for the three thresholds on ``gamma``.

    ``gamma0``: largest ``gamma`` for which a compactly supported,
    admissible state exists (bisection).  ``gamma1``: where the bracket
    margin falls to ``target``.  ``gamma_star``: largest scanned ``gamma``
    below which every record satisfies the coercivity bound.
    """
    from .energy import bracket_positivity_margin

    def exists(g):
        try:
            return not solve(eos, g, nu_ring).is_vacuum
        except (AdmissibilityError, NoCompactSupportError):
            return False

    lo, hi = 0.0, gamma_hi
    if exists(hi):
        gamma0 = math.inf
    else:
        lo = hi / 2.0
        while not exists(lo) and lo > 1e-8:
            hi, lo = lo, lo / 2.0
        while hi - lo > tol * lo:
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if exists(mid) else (lo, mid)
        gamma0 = lo
    ref = solve(eos, min(0.01, 0.5 * lo) if math.isfinite(gamma0) else 0.01, nu_ring)
    gamma1 = bracket_positivity_margin(ref, target=target, tol=tol)["gamma1"]
    gamma_star = math.nan
    for rec in sorted(records, key=lambda r: r.gamma):
        if rec.min_coercivity_ratio >= 1.0:
            gamma_star = rec.gamma
        else:
            break
    return {"gamma0": gamma0, "gamma1": gamma1, "gamma_star": gamma_star}
