"""Spherically symmetric phase space in the variables ``(r, w, L)``.

``r = |x|``, ``w = x.v/r`` and ``L = |x x v|^2``.  For spherically symmetric
functions ``dv = (pi/r^2) dw dL`` and ``dx = 4 pi r^2 dr``; the Poisson
bracket reduces to ``{f, g} = d_r f d_w g - d_w f d_r g``.

Fields are sampled on tensor grids.  Derivatives use five-point stencils
(fourth order, shifted to one side near the grid edges) built for
arbitrary node spacing.
"""
import csv
import io
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import spsolve

from .errors import SingularRadiusError
from .quadrature import gauss_legendre

FIELD_COLUMNS = ("r", "w", "L", "value")
STENCIL = 5


class PhasePoint(NamedTuple):
    r: float
    w: float
    L: float

    def validate(self):
        if self.r < 0.0 or self.L < 0.0:
            raise ValueError(f"invalid phase point {self}")
        return self


def _check_axis(name, nodes, weights):
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size < 2 or np.any(np.diff(nodes) <= 0.0):
        raise ValueError(f"{name} nodes must be strictly increasing")
    if weights is None:
        weights = _trapezoid_weights(nodes)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != nodes.shape or np.any(weights <= 0.0):
        raise ValueError(f"{name} weights must be positive and match the nodes")
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _trapezoid_weights(x):
    w = np.zeros_like(x)
    d = np.diff(x)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """Tensor grid with per-axis quadrature weights.

    Parameters
    ----------
    r, w, L : array_like
        Strictly increasing nodes.  ``w`` must be symmetric about 0 and
        ``L`` non-negative.
    wr, ww, wL : array_like, optional
        Quadrature weights; trapezoidal weights are used when omitted.
    """

    r: np.ndarray
    w: np.ndarray
    L: np.ndarray
    wr: np.ndarray = None
    ww: np.ndarray = None
    wL: np.ndarray = None

    def __post_init__(self):
        for name, wname in (("r", "wr"), ("w", "ww"), ("L", "wL")):
            n, wt = _check_axis(name, getattr(self, name), getattr(self, wname))
            object.__setattr__(self, name, n)
            object.__setattr__(self, wname, wt)
        if self.r[0] < 0.0 or self.L[0] < 0.0:
            raise ValueError("r and L nodes must be non-negative")
        if not np.allclose(self.w, -self.w[::-1], rtol=0.0, atol=1e-14 * np.max(np.abs(self.w))):
            raise ValueError("w nodes must be symmetric about 0")

    @classmethod
    def gauss(cls, r_range, w_max, L_max, n=(64, 96, 96)):
        """Gauss-Legendre nodes on ``[r0, r1] x [-w_max, w_max] x [0, L_max]``."""
        r, wr = gauss_legendre(n[0], *r_range)
        w, ww = gauss_legendre(n[1], -w_max, w_max)
        w = 0.5 * (w - w[::-1])                      # exact symmetry
        L, wL = gauss_legendre(n[2], 0.0, L_max)
        return cls(r, w, L, wr, ww, wL)

    @classmethod
    def uniform(cls, r_range, w_max, L_max, n=(64, 65, 33)):
        r = np.linspace(r_range[0], r_range[1], n[0])
        w = np.linspace(-w_max, w_max, n[1])
        L = np.linspace(0.0, L_max, n[2])
        return cls(r, w, L)

    @property
    def shape(self):
        return (self.r.size, self.w.size, self.L.size)

    def mesh(self):
        return np.meshgrid(self.r, self.w, self.L, indexing="ij")

    def header(self):
        return {"shape": list(self.shape), "axes": ["r", "w", "L"],
                "r": self.r.tolist(), "w": self.w.tolist(), "L": self.L.tolist(),
                "wr": self.wr.tolist(), "ww": self.ww.tolist(), "wL": self.wL.tolist()}


def _stencil_weights(x, x0, deriv):
    """Weights of the ``deriv``-th derivative at ``x0`` from nodes ``x``."""
    n = x.size
    scale = np.max(np.abs(x - x0))
    t = (x - x0) / scale
    vander = np.vander(t, n, increasing=True).T             # row k: t^k
    rhs = np.zeros(n)
    rhs[deriv] = math.factorial(deriv)
    return np.linalg.solve(vander, rhs) / scale**deriv


def derivative_matrix(x, deriv=1, width=STENCIL):
    """Dense matrix of a ``width``-point finite-difference operator on nodes ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    width = min(width, n)
    half = width // 2
    mat = np.zeros((n, n))
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        idx = np.arange(lo, lo + width)
        mat[i, idx] = _stencil_weights(x[idx], x[i], deriv)
    return mat


def _apply(mat, values, axis):
    return np.moveaxis(np.tensordot(mat, values, axes=(1, axis)), 0, axis)


class KineticField:
    """Samples of a function of ``(r, w, L)`` on a :class:`PhaseGrid`.

    Evaluation off the nodes uses linear or cubic tensor interpolation and
    returns 0 outside the grid box.
    """

    def __init__(self, grid, values, order="cubic"):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {grid.shape}")
        if order not in ("linear", "cubic"):
            raise ValueError("order must be 'linear' or 'cubic'")
        self.grid = grid
        self.values = values
        self.order = order
        self._interp = None

    @classmethod
    def from_function(cls, grid, fn, order="cubic"):
        R, W, L = grid.mesh()
        return cls(grid, np.broadcast_to(fn(R, W, L), grid.shape).astype(float), order)

    def __call__(self, r, w, L):
        if self._interp is None:
            g = self.grid
            # the default iterative spline solve stops at ~1e-6; a direct solve is exact
            extra = {"solver": spsolve} if self.order == "cubic" else {}
            self._interp = RegularGridInterpolator((g.r, g.w, g.L), self.values,
                                                   method=self.order, bounds_error=False,
                                                   fill_value=0.0, **extra)
        r, w, L = np.broadcast_arrays(np.asarray(r, float), np.asarray(w, float),
                                      np.asarray(L, float))
        pts = np.stack([r.ravel(), w.ravel(), L.ravel()], axis=-1)
        return self._interp(pts).reshape(r.shape)

    def derivative(self, axis):
        """Finite-difference partial along ``axis`` (0: r, 1: w, 2: L)."""
        nodes = (self.grid.r, self.grid.w, self.grid.L)[axis]
        return KineticField(self.grid, _apply(derivative_matrix(nodes), self.values, axis),
                            self.order)

    def reflect(self):
        """``f(r, -w, L)``; exact on the symmetric ``w`` grid."""
        return KineticField(self.grid, self.values[:, ::-1, :].copy(), self.order)

    def even_odd(self):
        flipped = self.values[:, ::-1, :]
        return (KineticField(self.grid, 0.5 * (self.values + flipped), self.order),
                KineticField(self.grid, 0.5 * (self.values - flipped), self.order))

    def __add__(self, other):
        _same_grid(self, other)
        return KineticField(self.grid, self.values + other.values, self.order)

    def __sub__(self, other):
        _same_grid(self, other)
        return KineticField(self.grid, self.values - other.values, self.order)

    def __mul__(self, other):
        if isinstance(other, KineticField):
            _same_grid(self, other)
            return KineticField(self.grid, self.values * other.values, self.order)
        return KineticField(self.grid, self.values * other, self.order)

    __rmul__ = __mul__


def _same_grid(f, g):
    if f.grid is g.grid:
        return
    if f.grid.shape != g.grid.shape or not all(
            np.array_equal(a, b) for a, b in ((f.grid.r, g.grid.r), (f.grid.w, g.grid.w),
                                              (f.grid.L, g.grid.L))):
        raise ValueError("fields live on different grids")


# -- momentum integrals -----------------------------------------------------

WEIGHTS = ("lorentz", "w2_lorentz", "w", "tangential", "one")


def _lorentz(r, w, L, gamma):
    return np.sqrt(1.0 + gamma * (w * w + L / (r * r)))


def momentum_weight(name, r, w, L, gamma):
    """Weight functions of the four densities plus the constant 1."""
    if name == "one":
        return np.ones(np.broadcast(w, L).shape)
    if name == "w":
        return np.broadcast_to(w, np.broadcast(w, L).shape)
    lor = _lorentz(r, w, L, gamma)
    if name == "lorentz":
        return lor
    if name == "w2_lorentz":
        return w * w / lor
    if name == "tangential":
        return (L / (r * r)) / lor
    raise ValueError(f"unknown weight {name!r}; expected one of {WEIGHTS}")


def _radial_slice(field, r):
    """Values on the ``(w, L)`` plane at radius ``r`` (exact on grid nodes)."""
    grid = field.grid
    hit = np.nonzero(grid.r == r)[0]
    if hit.size:
        return field.values[hit[0]]
    if r < grid.r[0] or r > grid.r[-1]:
        return np.zeros(grid.shape[1:])
    n = min(4 if field.order == "cubic" else 2, grid.r.size)
    i = int(np.searchsorted(grid.r, r))
    lo = min(max(i - n // 2, 0), grid.r.size - n)
    idx = np.arange(lo, lo + n)
    coef = _stencil_weights(grid.r[idx], r, 0)
    return np.tensordot(coef, field.values[idx], axes=(0, 0))


def momentum_integral(field, weight, r, gamma):
    """``(pi/r^2) int int weight * field dw dL`` at radius ``r``.

    Parameters
    ----------
    field : KineticField
    weight : {'lorentz', 'w2_lorentz', 'w', 'tangential', 'one'}
        ``<v>``, ``w^2/<v>``, ``w``, ``(L/r^2)/<v>`` or 1.
    r : float
        Radius, strictly positive.
    gamma : float
        ``1/c^2`` entering ``<v> = sqrt(1 + gamma (w^2 + L/r^2))``.
    """
    if weight not in WEIGHTS:
        raise ValueError(f"unknown weight {weight!r}; expected one of {WEIGHTS}")
    if not r > 0.0:
        raise SingularRadiusError("momentum integrals in (w, L) are singular at r = 0; "
                                  "use the r -> 0 limit of the density instead")
    if gamma < 0.0:
        raise ValueError("gamma must be non-negative")
    grid = field.grid
    vals = _radial_slice(field, r)
    W, L = np.meshgrid(grid.w, grid.L, indexing="ij")
    wt = momentum_weight(weight, r, W, L, gamma)
    return math.pi / r**2 * float(grid.ww @ (wt * vals) @ grid.wL)


class Moments(NamedTuple):
    rho: np.ndarray
    p: np.ndarray
    j: np.ndarray
    q: np.ndarray


def moments(field, gamma):
    """Radial profiles ``(rho, p, j, q)`` at every positive radial node."""
    grid = field.grid
    out = {k: np.zeros(grid.r.size) for k in ("rho", "p", "j", "q")}
    names = {"rho": "lorentz", "p": "w2_lorentz", "j": "w", "q": "tangential"}
    for i, r in enumerate(grid.r):
        if r <= 0.0:
            continue
        for key, wname in names.items():
            out[key][i] = momentum_integral(field, wname, r, gamma)
    return Moments(**out)


# -- brackets ----------------------------------------------------------------


def poisson_bracket(f, g):
    """``{f, g} = d_r f d_w g - d_w f d_r g`` by finite differences."""
    _same_grid(f, g)
    if f is g:
        return KineticField(f.grid, np.zeros(f.grid.shape), f.order)
    fr, fw = f.derivative(0).values, f.derivative(1).values
    gr, gw = g.derivative(0).values, g.derivative(1).values
    return KineticField(f.grid, fr * gw - fw * gr, f.order)


def particle_energy(state, r, w, L):
    """``E = e^{mu_0(r)} <v>`` for the steady state."""
    r = np.asarray(r, dtype=float)
    mu = state.profile(r.ravel()).mu.reshape(r.shape)
    return np.exp(mu) * _lorentz(r, w, L, state.gamma)


def energy_partials(state, r, w, L):
    """``(E, d_r E, d_w E)`` at fixed ``L`` from the analytic steady-state profile."""
    r, w, L = np.broadcast_arrays(np.asarray(r, float), np.asarray(w, float),
                                  np.asarray(L, float))
    prof = state.profile(r.ravel())
    mu = prof.mu.reshape(r.shape)
    dmu = prof.dmu.reshape(r.shape)
    g = state.gamma
    lor = _lorentz(r, w, L, g)
    emu = np.exp(mu)
    return emu * lor, emu * (dmu * lor - g * L / (r**3 * lor)), g * emu * w / lor


def analytic_bracket_with_E(h, state):
    """``{h, E}`` with exact ``E`` partials; only ``h`` is differenced.

    Nodes outside the support of the steady state (``E >= 1``) get 0.
    """
    R, W, L = h.grid.mesh()
    E, Er, Ew = energy_partials(state, R, W, L)
    hr, hw = h.derivative(0).values, h.derivative(1).values
    out = np.where(E < 1.0, hr * Ew - hw * Er, 0.0)
    return KineticField(h.grid, out, h.order)


# -- serialisation -----------------------------------------------------------


def write_field(field, json_path, csv_path, extra=None):
    """JSON header (axes, weights, order) plus CSV rows ``r,w,L,value``.

    Rows run with ``L`` fastest, then ``w``, then ``r``.
    """
    header = field.grid.header()
    header.update({"order": field.order, "columns": list(FIELD_COLUMNS),
                   "row_order": "C (L fastest)"})
    if extra:
        header["meta"] = extra
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
        fh.write("\n")
    R, W, L = field.grid.mesh()
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(FIELD_COLUMNS) + "\n")
        for row in zip(R.ravel(), W.ravel(), L.ravel(), field.values.ravel()):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_field(json_path, csv_path):
    with open(json_path, encoding="utf-8") as fh:
        header = json.load(fh)
    grid = PhaseGrid(np.array(header["r"]), np.array(header["w"]), np.array(header["L"]),
                     np.array(header["wr"]), np.array(header["ww"]), np.array(header["wL"]))
    with open(csv_path, encoding="utf-8") as fh:
        text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if tuple(rows[0]) != FIELD_COLUMNS:
        raise ValueError(f"unexpected columns {rows[0]}")
    data = np.array(rows[1:], dtype=float)
    if data.shape[0] != int(np.prod(grid.shape)):
        raise ValueError("row count does not match the grid header")
    return KineticField(grid, data[:, 3].reshape(grid.shape), header.get("order", "cubic"))
