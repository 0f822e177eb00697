"""Linearised Einstein-Vlasov evolution at the level of the generator.

The generator obeys the inhomogeneous transport equation

    d_t h + (1/gamma) e^{-lambda} {h, E} + S = 0,
    S = e^{mu} dlam w^2/<v> - (1/gamma) E dmu,

whose characteristics are the steady-state particle orbits.  Two schemes
are provided.

``"characteristic"`` (default)
    Uses the integral form ``h(t, z) = h(0, Z(0)) - int_0^t S(s, Z(s)) ds``
    directly at the nodes of the support quadrature.  Foot points and the
    flow Jacobian come from RK4 on the orbits and their tangent vectors,
    the time integral from Gregory's rule; no spatial interpolation of ``h``
    is involved.
``"grid"``
    Semi-Lagrangian transport of grid values in ``(r, w, q)``, ``q = L/r^2``,
    with tricubic interpolation at the foot points.

In both schemes ``delta f`` and the fields are rebuilt from ``h`` on the
support quadrature after every step, so ``delta f`` stays dynamically
accessible by construction.  The steady flow is autonomous: foot points
depend only on the elapsed time and are traced once per lag.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import kernels
from .energy import free_energy
from .errors import ConfigError, StepSizeError
from .generators import GeneratorSample
from .perturbation import _build, quadrature_for
from .phase_space import PhasePoint
from .quadrature import barycentric_matrix

FOUR_PI = 4.0 * math.pi
SCHEMES = ("characteristic", "grid")


# -- characteristics -----------------------------------------------------------


class CharacteristicFlow:
    """Orbits of the steady state, integrated with RK4 in the orbit plane.

    In Cartesian coordinates of the orbit plane

        x' = e^{mu-lambda} v/<v>,   v' = -(1/gamma) e^{mu-lambda} mu' <v> x/r,

    which conserves ``L`` up to round-off and ``E`` to the RK4 order.  The
    coefficients ``a = e^{mu-lambda}`` and ``b = e^{mu-lambda} nu'/r`` (both
    even in ``r``) are tabulated on a uniform radial grid, together with
    ``mu`` and ``mu'`` for evaluating sources along orbits.

    Parameters
    ----------
    state : SteadyState
    r_table : float, optional
        Extent of the tables (default ``4 R``); beyond it the field of a
        point mass is used.
    n_table : int
        Number of table intervals.
    max_substep : float
        Largest RK4 step.
    """

    def __init__(self, state, r_table=None, n_table=16384, max_substep=0.05):
        self.state = state
        self.gamma = float(state.gamma)
        self.max_substep = float(max_substep)
        R = float(state.R)
        end = float(r_table) if r_table is not None else (4.0 * R if R > 0.0 else 1.0)
        r = np.linspace(0.0, end, n_table + 1)
        self.step = r[1]
        pr = state.profile(r)
        a = np.exp(pr.mu - pr.lam)
        b = np.empty_like(a)
        b[1:] = a[1:] * pr.dnu[1:] / r[1:]
        g = self.gamma
        b[0] = a[0] * (pr.d2mu[0] / g if g > 0.0 else 0.0)
        self.tab_a = np.ascontiguousarray(a)
        self.tab_b = np.ascontiguousarray(b)
        self.tab_mu = np.ascontiguousarray(np.vstack([pr.mu, pr.dmu]))

    def substeps(self, duration):
        return max(1, int(math.ceil(abs(duration) / self.max_substep)))

    def trace(self, r, w, L, duration):
        """Positions after ``duration`` (negative for backward tracing).

        Returns ``(r, w, L)`` arrays; ``L`` is returned unchanged.
        """
        r = np.atleast_1d(np.asarray(r, dtype=float))
        w = np.broadcast_to(np.asarray(w, dtype=float), r.shape)
        L = np.broadcast_to(np.asarray(L, dtype=float), r.shape)
        x1 = r.ravel().copy()
        x2 = np.zeros_like(x1)
        v1 = w.ravel().copy()
        with np.errstate(divide="ignore", invalid="ignore"):
            v2 = np.where(x1 > 0.0, np.sqrt(L.ravel()) / x1, 0.0)
        kernels.trace_orbits(x1, x2, v1, v2, float(duration), self.substeps(duration),
                             self.gamma, self.tab_a, self.tab_b, self.step)
        rn = np.hypot(x1, x2)
        with np.errstate(divide="ignore", invalid="ignore"):
            wn = np.where(rn > 0.0, (x1 * v1 + x2 * v2) / rn, np.hypot(v1, v2))
        return rn.reshape(r.shape), wn.reshape(r.shape), np.array(L, dtype=float)

    def bundle(self, r, w, L):
        """Orbits through ``(r, w, L)`` carrying the tangents along ``r`` and ``w``."""
        return OrbitBundle(self, r, w, L)

    def energy(self, r, w, L):
        r = np.asarray(r, dtype=float)
        mu = self.state.profile(r.ravel()).mu.reshape(r.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(r > 0.0, L / r**2, 0.0)
        return np.exp(mu) * np.sqrt(1.0 + self.gamma * (w * w + q))

    def reduced_rhs(self, r, w, L):
        """Right-hand side of the reduced system for ``(r, w)`` at fixed ``L``."""
        pr = self.state.profile(np.atleast_1d(r))
        a = np.exp(pr.mu - pr.lam)
        lor = np.sqrt(1.0 + self.gamma * (w * w + L / r**2))
        return a * w / lor, -a * pr.dnu * lor + a * L / (r**3 * lor)

    def orbital_frequency(self):
        """Largest harmonic frequency ``sqrt(b)`` inside the support."""
        inside = np.arange(self.tab_b.size) * self.step <= max(self.state.R, self.step)
        return float(np.sqrt(np.max(self.tab_b[inside])))


class OrbitBundle:
    """Orbits with tangent vectors; ``coordinates`` returns ``(r, w, J)``.

    ``J[:, 0:4]`` holds ``dr/dr0, dr/dw0, dw/dr0, dw/dw0`` at fixed ``L``.
    """

    def __init__(self, flow, r, w, L):
        r = np.asarray(r, dtype=float).ravel()
        w = np.asarray(w, dtype=float).ravel()
        L = np.broadcast_to(np.asarray(L, dtype=float), r.shape).ravel()
        self.flow = flow
        self.L = L.copy()
        y = np.zeros((r.size, 12))
        with np.errstate(divide="ignore", invalid="ignore"):
            vt = np.where(r > 0.0, np.sqrt(L) / r, 0.0)
            dvt = np.where(r > 0.0, -np.sqrt(L) / r**2, 0.0)
        y[:, 0] = r
        y[:, 2] = w
        y[:, 3] = vt
        y[:, 4] = 1.0
        y[:, 7] = dvt
        y[:, 10] = 1.0
        self.y = y

    def advance(self, duration):
        f = self.flow
        kernels.trace_tangents(self.y, float(duration), f.substeps(duration), f.gamma,
                               f.tab_a, f.tab_b, f.step)

    def coordinates(self):
        y = self.y
        x1, x2, v1, v2 = y[:, 0], y[:, 1], y[:, 2], y[:, 3]
        r = np.hypot(x1, x2)
        safe = np.where(r > 0.0, r, 1.0)
        w = (x1 * v1 + x2 * v2) / safe
        J = np.empty((r.size, 4))
        for col, k in ((0, 4), (1, 8)):
            dx1, dx2, dv1, dv2 = y[:, k], y[:, k + 1], y[:, k + 2], y[:, k + 3]
            dr = (x1 * dx1 + x2 * dx2) / safe
            dw = (dx1 * v1 + dx2 * v2 + x1 * dv1 + x2 * dv2) / safe - w * dr / safe
            J[:, col] = dr
            J[:, 2 + col] = dw
        return r, w, J


def trace_characteristic(start, state, from_t, to_t, flow=None):
    """Follow the characteristic through ``start`` at ``from_t`` to time ``to_t``."""
    start = PhasePoint(*start).validate()
    flow = flow if flow is not None else CharacteristicFlow(state)
    r, w, L = flow.trace(start.r, start.w, start.L, to_t - from_t)
    return PhasePoint(float(r[0]), float(w[0]), float(L[0]))


def gregory_weights(n):
    """Weights (in units of the step) for ``int_0^{n dt}`` on ``n + 1`` equidistant samples.

    Fourth-order Gregory end corrections for ``n >= 5``; closed Newton-Cotes
    rules for shorter intervals.
    """
    if n == 0:
        return np.zeros(1)
    small = {1: [0.5, 0.5], 2: [1 / 3, 4 / 3, 1 / 3], 3: [3 / 8, 9 / 8, 9 / 8, 3 / 8],
             4: [14 / 45, 64 / 45, 24 / 45, 64 / 45, 14 / 45]}
    if n in small:
        return np.array(small[n])
    w = np.ones(n + 1)
    ends = np.array([3 / 8, 7 / 6, 23 / 24])
    w[:3] = ends
    w[-3:] = ends[::-1]
    return w


# -- radial field tables ---------------------------------------------------------


class FieldTables:
    """Uniform radial tables of ``(dlam, dlam', dmu, dmu')``; zero beyond ``R``."""

    def __init__(self, quad, n=4096, extent=1.25):
        self.quad = quad
        self.step = extent * quad.R / n
        r = np.arange(n + 1) * self.step
        inside = r <= quad.R
        tt = 1.0 - np.sqrt(np.clip(1.0 - r[inside] / quad.R, 0.0, 1.0))
        self._M = np.zeros((r.size, quad.r.size))
        self._M[inside] = barycentric_matrix(quad.t, tt)
        self.r = r

    def __call__(self, p):
        quad = self.quad
        pr = quad.prof
        g = quad.gamma
        r = quad.r
        ddlam = (FOUR_PI * g * r * r * p.drho * np.exp(2.0 * pr.lam) + p.dlam * (2.0 * r * pr.dlam - 1.0)) / r
        cols = np.vstack([p.dlam, ddlam, p.dmu, p.ddmu])
        return np.ascontiguousarray(cols @ self._M.T)


class FieldHistory:
    """Generator at ``t = 0`` plus the field tables of every completed level."""

    def __init__(self, h0, flow, tables, dt=None, levels=()):
        self.h0 = h0
        self.flow = flow
        self.tables = tables
        self.dt = dt
        self.levels = list(levels)

    def evaluate(self, n, r, w, L):
        """``(h, h_r, h_w)`` at level ``n`` for arbitrary points."""
        r, w, L = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r, w, L)))
        shape = r.shape
        r, w, L = r.ravel(), w.ravel(), L.ravel()
        out = np.zeros((3, r.size))
        bundle = self.flow.bundle(r, w, L)
        weights = gregory_weights(n)
        for k in range(n + 1):
            if k:
                bundle.advance(-self.dt)
            rk, wk, J = bundle.coordinates()
            if n:
                self._source(out, rk, wk, bundle.L, J, self.levels[n - k], -weights[n - k] * self.dt)
        _pull_back(out, self.h0, rk, wk, bundle.L, J)
        return tuple(o.reshape(shape) for o in out)

    def _source(self, out, r, w, L, J, table, weight):
        if weight == 0.0:
            return
        kernels.accumulate_source(r, w, L, J, table, self.tables.step, self.flow.tab_mu,
                                  self.flow.step, weight, self.flow.gamma, out)


def _pull_back(out, h0, r, w, L, J):
    f, fr, fw = h0.partials(r, w, L)
    out[0] += f
    out[1] += fr * J[:, 0] + fw * J[:, 2]
    out[2] += fr * J[:, 1] + fw * J[:, 3]


# -- transport grid (semi-Lagrangian scheme) ----------------------------------------


@dataclass(frozen=True)
class TransportGrid:
    """Uniform grid in ``(r, w, q)``; ``r`` and ``w`` cell-centred, ``q`` node-centred."""

    nr: int
    nw: int
    nq: int
    r_max: float
    w_max: float
    q_max: float

    def __post_init__(self):
        if min(self.nr, self.nw, self.nq) < 4:
            raise ConfigError("transport grid needs at least 4 points per axis")
        if self.nw % 2:
            raise ConfigError("nw must be even so that w = 0 is not a node")

    @classmethod
    def for_state(cls, state, nr=48, nw=48, nq=24, pad=3):
        """Box around the support with ``pad`` cells on the outer sides."""
        V0 = float(state.vmax(0.0)[0])
        return cls(nr, nw, nq,
                   r_max=state.R * nr / (nr - pad),
                   w_max=V0 * nw / (nw - 2 * pad),
                   q_max=V0 * V0 * (nq - 1) / (nq - 1 - pad))

    @property
    def dr(self):
        return self.r_max / self.nr

    @property
    def dw(self):
        return 2.0 * self.w_max / self.nw

    @property
    def dq(self):
        return self.q_max / (self.nq - 1)

    @property
    def shape(self):
        return (self.nr, self.nw, self.nq)

    @property
    def size(self):
        return self.nr * self.nw * self.nq

    @property
    def r(self):
        return (np.arange(self.nr) + 0.5) * self.dr

    @property
    def w(self):
        return -self.w_max + (np.arange(self.nw) + 0.5) * self.dw

    @property
    def q(self):
        return np.arange(self.nq) * self.dq

    def mesh(self):
        return np.meshgrid(self.r, self.w, self.q, indexing="ij")

    def nodes(self):
        """Grid nodes as an ``(N, 3)`` array of ``(r, w, q)``."""
        return np.column_stack([a.ravel() for a in self.mesh()])

    def axes(self):
        return np.array([0.5 * self.dr, self.dr, -self.w_max + 0.5 * self.dw, self.dw, 0.0, self.dq])

    def interpolation_matrix(self, points, deriv=(0, 0, 0)):
        """Sparse matrix mapping grid values to the tricubic interpolant at ``points``."""
        pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
        idx, wts = kernels.tricubic_stencils(self.axes(), np.array(self.shape, dtype=np.int64),
                                             pts, np.asarray(deriv, dtype=np.int64))
        m = pts.shape[0]
        indptr = np.arange(0, 64 * m + 1, 64)
        return sp.csr_matrix((wts.ravel(), idx.ravel(), indptr), shape=(m, self.size))

    def sample(self, h):
        """Values of a generator (callable of ``r, w, L``) at the grid nodes."""
        r, w, q = self.mesh()
        return np.asarray(h(r, w, q * r * r), dtype=float).ravel()

    def partials(self, values, r, w, L):
        """``(h, h_r, h_w)`` of the tricubic interpolant, derivatives at fixed ``L``."""
        r = np.asarray(r, dtype=float)
        shape = r.shape
        rf = r.ravel()
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(rf > 0.0, np.broadcast_to(L, shape).ravel() / rf**2, 0.0)
        pts = np.column_stack([rf, np.broadcast_to(w, shape).ravel(), q])
        h, hr, hw, hq = (self.interpolation_matrix(pts, d) @ values
                         for d in ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)))
        with np.errstate(divide="ignore", invalid="ignore"):
            hr = hr - np.where(rf > 0.0, 2.0 * q / rf, 0.0) * hq
        return h.reshape(shape), hr.reshape(shape), hw.reshape(shape)


def _radial_stencil(x, table_x):
    """Sparse 4-point Lagrange interpolation on a uniform table."""
    step = table_x[1] - table_x[0]
    n = table_x.size
    s = np.clip(x / step, 0.0, n - 1.0)
    base = np.clip(np.floor(s).astype(np.int64) - 1, 0, n - 4)
    t = s - base
    cols = base[:, None] + np.arange(4)
    wts = np.ones((x.size, 4))
    for a in range(4):
        for b in range(4):
            if b != a:
                wts[:, a] *= (t - b) / (a - b)
    indptr = np.arange(0, 4 * x.size + 1, 4)
    return sp.csr_matrix((wts.ravel(), cols.ravel(), indptr), shape=(x.size, n))


# -- linearised states -----------------------------------------------------------


@dataclass(frozen=True)
class LinearizedState:
    """Immutable snapshot of the linearised evolution; usable as a generator.

    Attributes
    ----------
    t : float
    perturbation : Perturbation
        ``delta f`` and the fields rebuilt from ``h`` on the support quadrature.
    A, delta_mass, h_norm : float
        Monitor values: free energy, relative total ``delta``-mass and
        ``(int int |phi'| h^2)^{1/2}``.
    inner_residuals : tuple
        Fixed-point residuals of the step that produced this state.
    """

    t: float
    perturbation: object
    A: float
    delta_mass: float
    h_norm: float
    inner_residuals: tuple = ()
    rep: object = field(default=None, repr=False, compare=False)

    @property
    def h(self):
        """Generator sample on the support quadrature."""
        return self.perturbation.sample

    @property
    def dlam(self):
        return self.perturbation.dlam

    @property
    def dmu(self):
        return self.perturbation.dmu

    @property
    def dj(self):
        return self.perturbation.dj

    def partials(self, r, w, L):
        return self.rep.partials(r, w, L)

    def __call__(self, r, w, L):
        return self.partials(r, w, L)[0]

    def sample(self, nodes, with_eta=False):
        r = np.asarray(nodes.r, dtype=float)
        if r.ndim == 1 and np.ndim(nodes.w) == 3:
            r = r[:, None, None]
        r = np.broadcast_to(r, np.shape(nodes.w))
        h, hr, hw = self.partials(r, nodes.w, nodes.L)
        return GeneratorSample(h, hr, hw)


@dataclass
class _HistoryRep:
    history: FieldHistory
    level: int

    def partials(self, r, w, L):
        return self.history.evaluate(self.level, r, w, L)


@dataclass
class _GridRep:
    grid: TransportGrid
    values: np.ndarray
    previous: Optional[object] = None      # perturbation one step back
    step_dt: float = 0.0

    def partials(self, r, w, L):
        return self.grid.partials(self.values, r, w, L)


class LinearizedSystem:
    """Shared machinery: fields, monitors and the time loop.

    Parameters
    ----------
    state : SteadyState
    order : tuple, optional
        Support quadrature order used for the fields and monitors.
    inner_iters : int
        Fixed-point passes per step (``0`` iterates to ``inner_tol``).
    inner_tol : float
        Relative tolerance of the iterate-to-tolerance mode.
    """

    scheme = None

    def __init__(self, state, order=None, flow=None, inner_iters=2, inner_tol=1e-10, max_substep=0.05):
        if state.R <= 0.0:
            raise ConfigError("the linearised evolution needs a steady state with support")
        self.state = state
        self.quad = quadrature_for(state, order)
        self.flow = flow if flow is not None else CharacteristicFlow(state, max_substep=max_substep)
        self.inner_iters = int(inner_iters)
        self.inner_tol = float(inner_tol)
        self.t_dyn = dynamical_time(state)

    def fields_from_sample(self, sample):
        return _build(sample, self.quad, with_fields=True)

    def snapshot(self, t, p, rep, residuals=()):
        mass, scale = p.total_mass()
        quad = self.quad
        norm = math.sqrt(quad.integrate(quad.abs_dphi * p.sample.h**2))
        return LinearizedState(t=float(t), perturbation=p, A=free_energy(p),
                               delta_mass=abs(mass) / scale if scale > 0.0 else 0.0,
                               h_norm=norm, inner_residuals=tuple(residuals), rep=rep)

    def max_step(self):
        raise NotImplementedError

    def default_step(self):
        return self.max_step()

    def check_step(self, dt):
        if dt == 0.0 or not math.isfinite(dt):
            raise ConfigError("dt must be finite and non-zero")
        bound = self.max_step()
        if abs(dt) > bound * (1.0 + 1e-9):
            raise StepSizeError(f"|dt|={abs(dt):g} exceeds the step bound {bound:.6g}")

    def _iterate(self, known_fn, guess, passes):
        """Fixed-point passes ``h = known - c S(fields(h))``; returns (sample, p, residuals)."""
        residuals = []
        prev = None
        passes = passes if passes > 0 else 200
        for _ in range(passes):
            sample_vals = known_fn(guess)
            h = sample_vals[0]
            if prev is not None:
                scale = max(float(np.max(np.abs(h))), 1e-300)
                res = float(np.max(np.abs(h - prev))) / scale
                residuals.append(res)
                if len(residuals) >= 2 and residuals[-1] > residuals[-2] and residuals[-1] > 1e-12:
                    raise StepSizeError("inner fixed-point iteration is not contracting; reduce dt")
                if self.inner_iters <= 0 and res <= self.inner_tol:
                    prev = h
                    guess = self._after(sample_vals)
                    break
            prev = h
            guess = self._after(sample_vals)
        return guess, residuals

    def evolve(self, initial, T_end, dt=None, monitors=(), check_dt=True, keep=False, on_state=None):
        """Run to ``T_end``; returns a :class:`Trajectory`.

        ``dt=None`` uses :meth:`default_step`, shortened so that it divides
        ``T_end``.  Every monitor is called with a record dict
        (``t, A, constraint_residual, delta_mass, h_norm``) as soon as the
        centred constraint residual of that time level is available;
        ``on_state(i, state)`` sees every snapshot.
        """
        if T_end < 0.0:
            raise ConfigError("T_end must be non-negative")
        bound = self.max_step()
        if dt is None:
            dt = self.default_step()
        elif dt <= 0.0:
            raise ConfigError("dt must be positive")
        elif check_dt and dt > bound * (1.0 + 1e-9):
            raise StepSizeError(f"dt={dt:g} exceeds the step bound {bound:.6g}")
        n = int(math.ceil(T_end / dt - 1e-9)) if T_end > 0.0 else 0
        dt = T_end / n if n else 0.0
        s = initial if isinstance(initial, LinearizedState) else self.initial(initial)
        traj = Trajectory(dt=dt, t_dyn=self.t_dyn)
        traj.push(s, keep, monitors)
        if on_state is not None:
            on_state(0, s)
        for i in range(n):
            s = self.step(s, dt)
            traj.push(s, keep, monitors)
            if on_state is not None:
                on_state(i + 1, s)
        traj.finish(monitors)
        return traj


class CharacteristicSystem(LinearizedSystem):
    """Integral-form scheme evaluated at the support quadrature nodes."""

    scheme = "characteristic"

    def __init__(self, state, order=None, flow=None, inner_iters=2, inner_tol=1e-10, max_substep=0.05,
                 steps_per_tdyn=32):
        super().__init__(state, order, flow, inner_iters, inner_tol, max_substep)
        self.tables = FieldTables(self.quad)
        self.steps_per_tdyn = int(steps_per_tdyn)
        quad = self.quad
        self._pts = (np.broadcast_to(quad.radial(quad.r), quad.shape).ravel().copy(),
                     quad.w.ravel().copy(), quad.L.ravel().copy())
        self._identity = np.tile([1.0, 0.0, 0.0, 1.0], (self._pts[0].size, 1))
        self._lags = {}

    def max_step(self):
        """Half the shortest harmonic period scale ``1/omega`` of the orbits."""
        return 0.5 / self.flow.orbital_frequency()

    def default_step(self):
        return min(self.max_step(), self.t_dyn / self.steps_per_tdyn)

    def lags(self, dt, n):
        """Foot points and Jacobians of the quadrature nodes for lags ``0..n`` steps."""
        key = round(float(dt), 14)
        entry = self._lags.get(key)
        if entry is None:
            entry = (self.flow.bundle(*self._pts), [])
            self._lags[key] = entry
        bundle, out = entry
        while len(out) <= n:
            if out:
                bundle.advance(-dt)
            out.append(bundle.coordinates())
        return out

    def initial(self, h, t=0.0):
        """Snapshot from a generator exposing ``partials(r, w, L)``."""
        if not hasattr(h, "partials"):
            raise ConfigError("the characteristic scheme needs a generator with partials(r, w, L)")
        out = np.zeros((3, self._pts[0].size))
        _pull_back(out, h, *self._pts, self._identity)
        p = self.fields_from_sample(self._sample(out))
        history = FieldHistory(h, self.flow, self.tables, levels=[self.tables(p)])
        return self.snapshot(t, p, _HistoryRep(history, 0))

    def _sample(self, out):
        shape = self.quad.shape
        return GeneratorSample(out[0].reshape(shape), out[1].reshape(shape), out[2].reshape(shape))

    def step(self, s, dt):
        """Advance ``s`` by ``dt`` (negative values step backwards)."""
        self.check_step(dt)
        rep = s.rep
        hist = rep.history if isinstance(rep, _HistoryRep) else None
        fresh = (hist is None or hist.flow is not self.flow
                 or rep.level != len(hist.levels) - 1
                 or (hist.dt is not None and hist.dt != dt))
        if fresh:
            hist = FieldHistory(s, self.flow, self.tables, levels=[self.tables(s.perturbation)])
            n = 0
        else:
            n = rep.level
        if hist.dt is None:
            hist.dt = dt
        lags = self.lags(dt, n + 1)
        weights = gregory_weights(n + 1)
        known = np.zeros((3, self._pts[0].size))
        r, w, J = lags[n + 1]
        _pull_back(known, hist.h0, r, w, self._pts[2], J)
        for m in range(n + 1):
            r, w, J = lags[n + 1 - m]
            hist._source(known, r, w, self._pts[2], J, hist.levels[m], -weights[m] * dt)
        end = -weights[n + 1] * dt
        if n >= 1:
            guess = 2.0 * hist.levels[n] - hist.levels[n - 1]
        else:
            guess = hist.levels[n]

        def solve(table):
            out = known.copy()
            hist._source(out, *self._pts[:2], self._pts[2], self._identity, table, end)
            return out

        self._last = None
        table, residuals = self._iterate(solve, guess, self.inner_iters)
        p = self._last
        hist.levels.append(table)
        return self.snapshot(s.t + dt, p, _HistoryRep(hist, n + 1), residuals)

    def _after(self, out):
        self._last = self.fields_from_sample(self._sample(out))
        return self.tables(self._last)


class GridSystem(LinearizedSystem):
    """Semi-Lagrangian transport of grid values in ``(r, w, q)``.

    The source integral uses the trapezoidal rule on the first step and the
    three-level Adams-Moulton rule once a previous level with the same step
    exists.
    """

    scheme = "grid"

    def __init__(self, state, grid=None, order=None, flow=None, inner_iters=2, inner_tol=1e-10,
                 max_substep=0.05):
        super().__init__(state, order, flow, inner_iters, inner_tol, max_substep)
        self.grid = grid if grid is not None else TransportGrid.for_state(state)
        quad = self.quad
        pts = np.column_stack([np.broadcast_to(quad.radial(quad.r), quad.shape).ravel(),
                               quad.w.ravel(), quad.q.ravel()])
        self._P = [self.grid.interpolation_matrix(pts, d)
                   for d in ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))]
        self._two_q_over_r = (2.0 * quad.q / quad.radial(quad.r)).ravel()
        self._table_r = np.linspace(0.0, self.grid.r_max * 1.5, 4097)
        inside = self._table_r <= quad.R
        tt = 1.0 - np.sqrt(np.clip(1.0 - self._table_r[inside] / quad.R, 0.0, 1.0))
        self._to_table = np.zeros((self._table_r.size, quad.r.size))
        self._to_table[inside] = barycentric_matrix(quad.t, tt)
        nodes = self.grid.nodes()
        self._nodes = nodes
        L = nodes[:, 0] ** 2 * nodes[:, 2]
        self._energy_over_gamma = self.flow.energy(nodes[:, 0], nodes[:, 1], L) / state.gamma
        self._feet = {}
        self._node_source = self._source_data(nodes)

    def _source_data(self, pts):
        r, w, q = pts[:, 0], pts[:, 1], pts[:, 2]
        mu = self.state.profile(r).mu
        lor = np.sqrt(1.0 + self.state.gamma * (w * w + q))
        return np.exp(mu) * w * w / lor, _radial_stencil(r, self._table_r)

    def feet(self, duration):
        """Interpolation data at the foot points ``Z(-duration)`` of all nodes."""
        key = round(float(duration), 14)
        if key not in self._feet:
            nodes = self._nodes
            L = nodes[:, 0] ** 2 * nodes[:, 2]
            r, w, _ = self.flow.trace(nodes[:, 0], nodes[:, 1], L, -duration)
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.where(r > 0.0, L / r**2, 0.0)
            pts = np.column_stack([r, w, q])
            self._feet[key] = (self.grid.interpolation_matrix(pts), self._source_data(pts))
        return self._feet[key]

    def max_step(self):
        """Half the shortest time a characteristic needs to cross one cell in ``(r, w)``."""
        quad = self.quad
        a = quad.radial(np.exp(quad.prof.mu - quad.prof.lam))
        rdot = np.max(np.abs(a * quad.w / quad.lorentz))
        wdot = np.max(np.abs(a * quad.radial(quad.prof.dnu) * quad.lorentz))
        return 0.5 * min(self.grid.dr / rdot, self.grid.dw / wdot)

    def sample_values(self, h):
        shape = self.quad.shape
        P0, Pr, Pw, Pq = self._P
        hq = Pq @ h
        return GeneratorSample(h=(P0 @ h).reshape(shape),
                               h_r=(Pr @ h - self._two_q_over_r * hq).reshape(shape),
                               h_w=(Pw @ h).reshape(shape))

    def _source(self, p, data):
        coeff, stencil = data
        dlam = stencil @ (self._to_table @ p.dlam)
        dmu = stencil @ (self._to_table @ p.dmu)
        return coeff * dlam - self._energy_over_gamma * dmu

    def initial(self, h, t=0.0):
        """Snapshot from a generator (callable of ``r, w, L``) or from grid values."""
        if isinstance(h, np.ndarray):
            values = np.array(h, dtype=float).ravel()
            if values.size != self.grid.size:
                raise ConfigError("grid values do not match the transport grid")
        else:
            values = self.grid.sample(h)
        p = self.fields_from_sample(self.sample_values(values))
        return self.snapshot(t, p, _GridRep(self.grid, values))

    def step(self, s, dt):
        self.check_step(dt)
        if not isinstance(s.rep, _GridRep) or s.rep.grid != self.grid:
            s = self.initial(s, s.t)
        T1, data1 = self.feet(dt)
        p_n = s.perturbation
        known = T1 @ s.rep.values
        prev = s.rep.previous if s.rep.step_dt == dt else None
        if prev is None:
            c_new = 0.5
            known -= 0.5 * dt * self._source(p_n, data1)
            guess = p_n
        else:
            _, data2 = self.feet(2.0 * dt)
            c_new = 5.0 / 12.0
            known -= dt * (8.0 * self._source(p_n, data1) - self._source(prev, data2)) / 12.0
            guess = _Fields(2.0 * p_n.dlam - prev.dlam, 2.0 * p_n.dmu - prev.dmu)

        def solve(fields):
            h = known - c_new * dt * self._source(fields, self._node_source)
            return (h,)

        self._last = None
        _, residuals = self._iterate(solve, guess, self.inner_iters)
        values, p = self._last
        return self.snapshot(s.t + dt, p, _GridRep(self.grid, values, p_n, dt), residuals)

    def _after(self, out):
        values = out[0]
        p = self.fields_from_sample(self.sample_values(values))
        self._last = (values, p)
        return p


@dataclass
class _Fields:
    dlam: np.ndarray
    dmu: np.ndarray


# -- monitors ---------------------------------------------------------------------


def _flux(quad, dj):
    pr = quad.prof
    return FOUR_PI * quad.gamma * quad.r * np.exp(pr.mu + pr.lam) * dj


def _constraint_norm(quad, rate, dlam, dj, t_dyn):
    """``max |dlam_t + 4 pi gamma r e^{mu+lambda} dj|`` over ``max|flux| + max|dlam|/t_dyn``."""
    flux = _flux(quad, dj)
    scale = float(np.max(np.abs(flux))) + float(np.max(np.abs(dlam))) / t_dyn
    res = float(np.max(np.abs(rate + flux)))
    return res / scale if scale > 0.0 else res


def constraint_monitor(s, prev=None, nxt=None, t_dyn=None):
    """Residual of ``dlam_t = -4 pi gamma r e^{mu+lambda} dj`` at the time of ``s``.

    ``dlam_t`` is the centred difference of the neighbouring snapshots, or a
    one-sided difference when only one neighbour is given.  The residual is
    divided by ``max|flux| + max|dlam|/t_dyn`` (``t_dyn`` defaults to the
    dynamical time of the background); a state without neighbours has
    ``dlam_t = 0``.
    """
    quad = s.perturbation.quad
    t_dyn = t_dyn if t_dyn is not None else dynamical_time(quad.bg)
    if prev is not None and nxt is not None:
        rate = (nxt.dlam - prev.dlam) / (nxt.t - prev.t)
    elif nxt is not None:
        rate = (nxt.dlam - s.dlam) / (nxt.t - s.t)
    elif prev is not None:
        rate = (s.dlam - prev.dlam) / (s.t - prev.t)
    else:
        rate = np.zeros_like(s.dlam)
    return _constraint_norm(quad, rate, s.dlam, s.dj, t_dyn)


@dataclass
class Trajectory:
    """Monitor time series of a run (and the snapshots when ``keep=True``)."""

    dt: float
    t_dyn: float
    t: list = field(default_factory=list)
    A: list = field(default_factory=list)
    delta_mass: list = field(default_factory=list)
    h_norm: list = field(default_factory=list)
    constraint: list = field(default_factory=list)
    inner_residuals: list = field(default_factory=list)
    states: list = field(default_factory=list)
    final: Optional[LinearizedState] = None
    _window: list = field(default_factory=list, repr=False)

    COLUMNS = ("t", "A", "constraint_residual", "delta_mass", "h_norm")

    def push(self, s, keep=False, monitors=()):
        self.t.append(s.t)
        self.A.append(s.A)
        self.delta_mass.append(s.delta_mass)
        self.h_norm.append(s.h_norm)
        self.inner_residuals.append(s.inner_residuals)
        self.final = s
        if keep:
            self.states.append(s)
        self._window.append((s.dlam, s.dj, s.perturbation.quad))
        self._window = self._window[-3:]
        n = len(self.t)
        if n == 3 and not self.constraint:
            self._emit(0, monitors)
        if n >= 3:
            self._emit(n - 2, monitors)

    def finish(self, monitors=()):
        while len(self.constraint) < len(self.t):
            self._emit(len(self.constraint), monitors)

    def _rate(self, i):
        n = len(self.t)
        dt = self.dt
        win = self._window
        lam = [w[0] for w in win]
        off = n - len(win)                     # index of win[0]
        if n == 1 or dt == 0.0:
            return np.zeros_like(lam[-1])
        if n == 2:
            return (lam[1] - lam[0]) / dt
        j = i - off
        if i == 0:
            return (-3.0 * lam[0] + 4.0 * lam[1] - lam[2]) / (2.0 * dt)
        if i == n - 1:
            return (3.0 * lam[2] - 4.0 * lam[1] + lam[0]) / (2.0 * dt)
        return (lam[j + 1] - lam[j - 1]) / (2.0 * dt)

    def _emit(self, i, monitors):
        off = len(self.t) - len(self._window)
        dlam, dj, quad = self._window[i - off]
        self.constraint.append(_constraint_norm(quad, self._rate(i), dlam, dj, self.t_dyn))
        rec = self.record(i)
        for m in monitors:
            m(rec)

    def record(self, i):
        return {"t": self.t[i], "A": self.A[i], "constraint_residual": self.constraint[i],
                "delta_mass": self.delta_mass[i], "h_norm": self.h_norm[i]}

    @property
    def energy_drift(self):
        A = np.asarray(self.A)
        if A[0] == 0.0:
            return float(np.max(np.abs(A)))
        return float(np.max(np.abs(A - A[0])) / abs(A[0]))

    def as_array(self):
        return np.column_stack([self.t, self.A, self.constraint, self.delta_mass, self.h_norm])


# -- module-level operations --------------------------------------------------------


def field_solve(p, state=None):
    """``(dlam, dmu, dmu')`` from the moments of a perturbation.

    ``dlam`` comes from the enclosed ``delta rho``; ``dmu'`` from the
    linearised ``mu`` equation and ``dmu`` by inward integration from ``R``.
    A non-zero total ``delta``-mass (input that is not dynamically
    accessible, so ``dlam`` does not vanish outside the support) is reported
    with a warning and the integration still starts at ``R``.
    """
    import warnings

    from .perturbation import delta_lambda_from_rho, metric_mu

    quad = p.quad
    dlam = delta_lambda_from_rho(p.drho, quad)
    mass, scale = p.total_mass()
    if scale > 0.0 and abs(mass) > 1e-8 * scale:
        warnings.warn("total delta-mass is not zero: exterior delta lambda is cut at R",
                      RuntimeWarning, stacklevel=2)
    dmu, ddmu = metric_mu(dlam, p.dp, quad)
    return dlam, dmu, ddmu


def dynamical_time(state):
    """``R / V(0)``: support radius over the largest speed at the centre."""
    return float(state.R / state.vmax(0.0)[0])


def make_system(state, scheme="characteristic", **kwargs):
    if scheme == "characteristic":
        return CharacteristicSystem(state, **kwargs)
    if scheme == "grid":
        return GridSystem(state, **kwargs)
    raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def evolve(initial, state, T_end, dt=None, monitors=(), scheme="characteristic", keep=False,
           system=None, on_state=None, **kwargs):
    """Evolve a generator for ``T_end`` around ``state``; returns a :class:`Trajectory`."""
    system = system if system is not None else make_system(state, scheme, **kwargs)
    return system.evolve(initial, T_end, dt=dt, monitors=monitors, keep=keep, on_state=on_state)


def step(s, dt, system):
    """One step of ``system`` from the snapshot ``s``."""
    return system.step(s, dt)
