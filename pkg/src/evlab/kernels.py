"""Hot numerical kernels.

Each kernel has a numba implementation (``*_nb``) and a vectorised numpy
implementation (``*_np``).  The public name is bound to one of them
according to :data:`evlab._accel.USE_NUMBA`; ``benchmarks/`` calls both
variants directly.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

FOUR_PI = 4.0 * math.pi

# ---------------------------------------------------------------------------
# isotropic polytrope densities rho = g_gamma(nu), p = h_gamma(nu)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _poly_point(nu, gamma, k, s, ws):
    if nu >= 0.0:
        return 0.0, 0.0
    rho = 0.0
    p = 0.0
    if gamma == 0.0:
        umax = math.sqrt(-2.0 * nu)
        for j in range(s.shape[0]):
            u = umax * s[j]
            eta = nu + 0.5 * u * u
            if eta < 0.0:
                f = (-eta) ** k
                rho += ws[j] * f * u * u
                p += ws[j] * f * u ** 4
        return FOUR_PI * rho * umax, FOUR_PI / 3.0 * p * umax
    umax = math.sqrt(math.expm1(-2.0 * gamma * nu) / gamma)
    mu = gamma * nu
    for j in range(s.shape[0]):
        u = umax * s[j]
        g2 = gamma * u * u
        eta = math.expm1(mu + 0.5 * math.log1p(g2)) / gamma
        if eta < 0.0:
            f = (-eta) ** k
            lor = math.sqrt(1.0 + g2)
            rho += ws[j] * f * lor * u * u
            p += ws[j] * f * u ** 4 / lor
    return FOUR_PI * rho * umax, FOUR_PI / 3.0 * p * umax


@njit(cache=True)
def polytrope_densities_nb(nu, gamma, k, s, ws):
    rho = np.empty(nu.shape[0])
    p = np.empty(nu.shape[0])
    for i in range(nu.shape[0]):
        rho[i], p[i] = _poly_point(nu[i], gamma, k, s, ws)
    return rho, p


def polytrope_densities_np(nu, gamma, k, s, ws):
    rho = np.zeros(nu.shape[0])
    p = np.zeros(nu.shape[0])
    inside = nu < 0.0
    if not inside.any():
        return rho, p
    nv = nu[inside][:, None]
    if gamma == 0.0:
        umax = np.sqrt(-2.0 * nv)
        u = umax * s
        eta = nv + 0.5 * u * u
        lor = np.ones_like(u)
    else:
        umax = np.sqrt(np.expm1(-2.0 * gamma * nv) / gamma)
        u = umax * s
        g2 = gamma * u * u
        eta = np.expm1(gamma * nv + 0.5 * np.log1p(g2)) / gamma
        lor = np.sqrt(1.0 + g2)
    f = np.where(eta < 0.0, np.maximum(-eta, 0.0) ** k, 0.0)
    rho[inside] = FOUR_PI * np.sum(ws * f * lor * u * u, axis=1) * umax[:, 0]
    p[inside] = FOUR_PI / 3.0 * np.sum(ws * f * u ** 4 / lor, axis=1) * umax[:, 0]
    return rho, p


# ---------------------------------------------------------------------------
# fixed-step RK4 for (nu, m):  nu' = (4 pi gamma r p + m/r^2)/(1 - 2 gamma m/r),
#                              m'  = 4 pi r^2 rho
# ---------------------------------------------------------------------------


@njit(cache=True)
def _tov_rhs(r, nu, m, gamma, k, s, ws):
    rho, p = _poly_point(nu, gamma, k, s, ws)
    den = 1.0 - 2.0 * gamma * m / r
    return (FOUR_PI * gamma * r * p + m / (r * r)) / den, FOUR_PI * r * r * rho, den


@njit(cache=True)
def _tov_step(r, nu, m, h, gamma, k, s, ws):
    k1n, k1m, d1 = _tov_rhs(r, nu, m, gamma, k, s, ws)
    k2n, k2m, d2 = _tov_rhs(r + 0.5 * h, nu + 0.5 * h * k1n, m + 0.5 * h * k1m, gamma, k, s, ws)
    k3n, k3m, d3 = _tov_rhs(r + 0.5 * h, nu + 0.5 * h * k2n, m + 0.5 * h * k2m, gamma, k, s, ws)
    k4n, k4m, d4 = _tov_rhs(r + h, nu + h * k3n, m + h * k3m, gamma, k, s, ws)
    dmin = min(min(d1, d2), min(d3, d4))
    return (nu + h * (k1n + 2.0 * k2n + 2.0 * k3n + k4n) / 6.0,
            m + h * (k1m + 2.0 * k2m + 2.0 * k3m + k4m) / 6.0, dmin)


@njit(cache=True)
def _substeps(r, h, r_core):
    # the m/r^2 coupling inflates the local error near the centre; r_core/r
    # substeps restore fourth-order global convergence
    if r_core <= 0.0 or r >= r_core:
        return 1
    return int(math.ceil(r_core / max(r, h)))


@njit(cache=True)
def _tov_advance(r, nu, m, h, gamma, k, s, ws, r_core):
    n = _substeps(r, h, r_core)
    hs = h / n
    dmin = 1.0
    for j in range(n):
        nu, m, d = _tov_step(r + j * hs, nu, m, hs, gamma, k, s, ws)
        dmin = min(dmin, d)
    return nu, m, dmin


@njit(cache=True)
def tov_rk4_nb(r0, nu0, m0, h, nsteps, gamma, k, s, ws, min_margin, r_core):
    """Integrate ``nsteps`` RK4 steps; returns arrays and the failing step (-1 if none)."""
    r = np.empty(nsteps + 1)
    nu = np.empty(nsteps + 1)
    m = np.empty(nsteps + 1)
    r[0] = r0
    nu[0] = nu0
    m[0] = m0
    for i in range(nsteps):
        nxt, mn, dmin = _tov_advance(r[i], nu[i], m[i], h, gamma, k, s, ws, r_core)
        if not dmin > min_margin:
            return r[: i + 1], nu[: i + 1], m[: i + 1], i
        r[i + 1] = r0 + (i + 1) * h
        nu[i + 1] = nxt
        m[i + 1] = mn
    return r, nu, m, -1


@njit(cache=True)
def tov_dense_nb(r_nodes, nu_nodes, m_nodes, idx, steps, gamma, k, s, ws, r_core):
    """Advance from node ``idx[j]`` by ``steps[j]`` for every query."""
    out_nu = np.empty(idx.shape[0])
    out_m = np.empty(idx.shape[0])
    h = r_nodes[1] - r_nodes[0]
    for j in range(idx.shape[0]):
        i = idx[j]
        if steps[j] == 0.0:
            out_nu[j] = nu_nodes[i]
            out_m[j] = m_nodes[i]
        else:
            n = _substeps(r_nodes[i], h, r_core)
            hs = steps[j] / n
            a, b = nu_nodes[i], m_nodes[i]
            for q in range(n):
                a, b, _ = _tov_step(r_nodes[i] + q * hs, a, b, hs, gamma, k, s, ws)
            out_nu[j] = a
            out_m[j] = b
    return out_nu, out_m


def _tov_rhs_np(r, nu, m, gamma, dens):
    rho, p = dens(nu)
    den = 1.0 - 2.0 * gamma * m / r
    return (FOUR_PI * gamma * r * p + m / (r * r)) / den, FOUR_PI * r * r * rho, den


def _tov_step_np(r, nu, m, h, gamma, dens):
    k1n, k1m, d1 = _tov_rhs_np(r, nu, m, gamma, dens)
    k2n, k2m, d2 = _tov_rhs_np(r + 0.5 * h, nu + 0.5 * h * k1n, m + 0.5 * h * k1m, gamma, dens)
    k3n, k3m, d3 = _tov_rhs_np(r + 0.5 * h, nu + 0.5 * h * k2n, m + 0.5 * h * k2m, gamma, dens)
    k4n, k4m, d4 = _tov_rhs_np(r + h, nu + h * k3n, m + h * k3m, gamma, dens)
    dmin = np.minimum(np.minimum(d1, d2), np.minimum(d3, d4))
    return (nu + h * (k1n + 2.0 * k2n + 2.0 * k3n + k4n) / 6.0,
            m + h * (k1m + 2.0 * k2m + 2.0 * k3m + k4m) / 6.0, dmin)


def _substeps_np(r, h, r_core):
    if r_core <= 0.0 or r >= r_core:
        return 1
    return int(math.ceil(r_core / max(r, h)))


def tov_rk4_np(r0, nu0, m0, h, nsteps, gamma, dens, min_margin, r_core):
    r = r0 + h * np.arange(nsteps + 1)
    nu = np.empty(nsteps + 1)
    m = np.empty(nsteps + 1)
    nu[0] = nu0
    m[0] = m0
    state_nu = np.array([nu0])
    state_m = np.array([m0])
    for i in range(nsteps):
        n = _substeps_np(r[i], h, r_core)
        hs = h / n
        dmin = 1.0
        for j in range(n):
            state_nu, state_m, d = _tov_step_np(r[i] + j * hs, state_nu, state_m, hs, gamma, dens)
            dmin = min(dmin, d[0])
        if not dmin > min_margin:
            return r[: i + 1], nu[: i + 1], m[: i + 1], i
        nu[i + 1] = state_nu[0]
        m[i + 1] = state_m[0]
    return r, nu, m, -1


def tov_dense_np(r_nodes, nu_nodes, m_nodes, idx, steps, gamma, dens, r_core):
    h = r_nodes[1] - r_nodes[0]
    nsub = np.array([_substeps_np(r_nodes[i], h, r_core) for i in idx], dtype=np.int64)
    nu = nu_nodes[idx].copy()
    m = m_nodes[idx].copy()
    for n in np.unique(nsub):
        sel = nsub == n
        hs = steps[sel] / n
        a, b = nu[sel], m[sel]
        r = r_nodes[idx[sel]]
        for q in range(n):
            a, b, _ = _tov_step_np(r + q * hs, a, b, hs, gamma, dens)
        nu[sel], m[sel] = a, b
    zero = steps == 0.0
    nu[zero] = nu_nodes[idx[zero]]
    m[zero] = m_nodes[idx[zero]]
    return nu, m



# ---------------------------------------------------------------------------
# characteristics of the steady state in the orbit plane:
#   x' = a(r) v/<v>,  v' = -b(r) <v> x,  a = e^{mu-lambda},  b = e^{mu-lambda} nu'/r
# a and b are tabulated on a uniform radial grid and extended evenly to r < 0.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _table_eval(tab, step, r):
    n = tab.shape[0]
    x = abs(r) / step
    i = int(x)
    base = i - 1
    if base > n - 4:
        base = n - 4
    t = x - base
    out = 0.0
    for a in range(4):
        wgt = 1.0
        for b in range(4):
            if b != a:
                wgt *= (t - b) / (a - b)
        j = abs(base + a)
        out += wgt * tab[j]
    return out


@njit(cache=True)
def _coefficients(tab_a, tab_b, step, r):
    r_end = step * (tab_a.shape[0] - 1)
    if r <= r_end:
        return _table_eval(tab_a, step, r), _table_eval(tab_b, step, r)
    # beyond the table: exterior field of a point mass, b ~ r^-3
    ratio = r_end / r
    return tab_a[-1], tab_b[-1] * ratio * ratio * ratio


@njit(cache=True)
def _orbit_rhs(x1, x2, v1, v2, gamma, tab_a, tab_b, step):
    r = math.sqrt(x1 * x1 + x2 * x2)
    a, b = _coefficients(tab_a, tab_b, step, r)
    lor = math.sqrt(1.0 + gamma * (v1 * v1 + v2 * v2))
    return a * v1 / lor, a * v2 / lor, -b * lor * x1, -b * lor * x2


@njit(cache=True)
def trace_orbits_nb(x1, x2, v1, v2, duration, nsub, gamma, tab_a, tab_b, step):
    """Advance every orbit by ``duration`` with ``nsub`` RK4 substeps (in place)."""
    h = duration / nsub
    for p in range(x1.shape[0]):
        a1, a2, b1, b2 = x1[p], x2[p], v1[p], v2[p]
        for _ in range(nsub):
            k1 = _orbit_rhs(a1, a2, b1, b2, gamma, tab_a, tab_b, step)
            k2 = _orbit_rhs(a1 + 0.5 * h * k1[0], a2 + 0.5 * h * k1[1],
                            b1 + 0.5 * h * k1[2], b2 + 0.5 * h * k1[3], gamma, tab_a, tab_b, step)
            k3 = _orbit_rhs(a1 + 0.5 * h * k2[0], a2 + 0.5 * h * k2[1],
                            b1 + 0.5 * h * k2[2], b2 + 0.5 * h * k2[3], gamma, tab_a, tab_b, step)
            k4 = _orbit_rhs(a1 + h * k3[0], a2 + h * k3[1], b1 + h * k3[2], b2 + h * k3[3],
                            gamma, tab_a, tab_b, step)
            a1 += h * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]) / 6.0
            a2 += h * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]) / 6.0
            b1 += h * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]) / 6.0
            b2 += h * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]) / 6.0
        x1[p], x2[p], v1[p], v2[p] = a1, a2, b1, b2


def _table_eval_np(tab, step, r):
    n = tab.shape[0]
    x = np.abs(r) / step
    base = np.minimum(x.astype(np.int64) - 1, n - 4)
    t = x - base
    out = np.zeros_like(x)
    for a in range(4):
        wgt = np.ones_like(x)
        for b in range(4):
            if b != a:
                wgt *= (t - b) / (a - b)
        out += wgt * tab[np.abs(base + a)]
    return out


def _orbit_rhs_np(x1, x2, v1, v2, gamma, tab_a, tab_b, step):
    r = np.sqrt(x1 * x1 + x2 * x2)
    r_end = step * (tab_a.shape[0] - 1)
    inside = r <= r_end
    rc = np.minimum(r, r_end)
    a = np.where(inside, _table_eval_np(tab_a, step, rc), tab_a[-1])
    b = np.where(inside, _table_eval_np(tab_b, step, rc), tab_b[-1] * (r_end / np.maximum(r, r_end)) ** 3)
    lor = np.sqrt(1.0 + gamma * (v1 * v1 + v2 * v2))
    return a * v1 / lor, a * v2 / lor, -b * lor * x1, -b * lor * x2


def trace_orbits_np(x1, x2, v1, v2, duration, nsub, gamma, tab_a, tab_b, step):
    h = duration / nsub
    y = [x1.copy(), x2.copy(), v1.copy(), v2.copy()]
    for _ in range(nsub):
        k1 = _orbit_rhs_np(*y, gamma, tab_a, tab_b, step)
        k2 = _orbit_rhs_np(*[c + 0.5 * h * d for c, d in zip(y, k1)], gamma, tab_a, tab_b, step)
        k3 = _orbit_rhs_np(*[c + 0.5 * h * d for c, d in zip(y, k2)], gamma, tab_a, tab_b, step)
        k4 = _orbit_rhs_np(*[c + h * d for c, d in zip(y, k3)], gamma, tab_a, tab_b, step)
        y = [c + h * (d1 + 2.0 * d2 + 2.0 * d3 + d4) / 6.0
             for c, d1, d2, d3, d4 in zip(y, k1, k2, k3, k4)]
    x1[:], x2[:], v1[:], v2[:] = y


# ---------------------------------------------------------------------------
# tricubic Lagrange stencils on the (r, w, q) transport grid.
# r is cell-centred and continued to r < 0 by h(-r, w, q) = h(r, -w, q);
# w and q use one-sided stencils at their edges.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _lagrange4(t, deriv, out):
    for a in range(4):
        if deriv == 0:
            wgt = 1.0
            for b in range(4):
                if b != a:
                    wgt *= (t - b) / (a - b)
        else:
            wgt = 0.0
            for c in range(4):
                if c == a:
                    continue
                term = 1.0 / (a - c)
                for b in range(4):
                    if b != a and b != c:
                        term *= (t - b) / (a - b)
                wgt += term
        out[a] = wgt


@njit(cache=True)
def _base(x, lo, n):
    b = int(math.floor(x)) - 1
    if b < lo:
        b = lo
    if b > n - 4:
        b = n - 4
    return b


@njit(cache=True)
def tricubic_stencils_nb(axes, sizes, pts, deriv):
    """Flat indices and weights of the tricubic interpolant at ``pts``.

    ``axes = (r0, dr, w0, dw, q0, dq)`` with ``r0`` the first cell centre,
    ``sizes = (nr, nw, nq)``, ``pts`` of shape (m, 3), ``deriv`` the
    derivative order per axis (0 or 1).
    """
    nr, nw, nq = sizes[0], sizes[1], sizes[2]
    m = pts.shape[0]
    idx = np.empty((m, 64), dtype=np.int64)
    wts = np.empty((m, 64))
    wr = np.empty(4)
    ww = np.empty(4)
    wq = np.empty(4)
    for p in range(m):
        xr = min(max((pts[p, 0] - axes[0]) / axes[1], -0.5), nr - 1.0)
        xw = min(max((pts[p, 1] - axes[2]) / axes[3], 0.0), nw - 1.0)
        xq = min(max((pts[p, 2] - axes[4]) / axes[5], 0.0), nq - 1.0)
        br = _base(xr, -2, nr)
        bw = _base(xw, 0, nw)
        bq = _base(xq, 0, nq)
        _lagrange4(xr - br, deriv[0], wr)
        _lagrange4(xw - bw, deriv[1], ww)
        _lagrange4(xq - bq, deriv[2], wq)
        sr = axes[1] ** deriv[0] if deriv[0] else 1.0
        sw = axes[3] ** deriv[1] if deriv[1] else 1.0
        sq = axes[5] ** deriv[2] if deriv[2] else 1.0
        scale = 1.0 / (sr * sw * sq)
        k = 0
        for a in range(4):
            i = br + a
            for b in range(4):
                j = bw + b
                if i < 0:
                    ii = -1 - i
                    jj = nw - 1 - j
                else:
                    ii = i
                    jj = j
                for c in range(4):
                    idx[p, k] = (ii * nw + jj) * nq + bq + c
                    wts[p, k] = wr[a] * ww[b] * wq[c] * scale
                    k += 1
    return idx, wts


def _lagrange4_np(t, deriv):
    out = np.empty(t.shape + (4,))
    for a in range(4):
        if deriv == 0:
            wgt = np.ones_like(t)
            for b in range(4):
                if b != a:
                    wgt = wgt * (t - b) / (a - b)
        else:
            wgt = np.zeros_like(t)
            for c in range(4):
                if c == a:
                    continue
                term = np.full_like(t, 1.0 / (a - c))
                for b in range(4):
                    if b != a and b != c:
                        term = term * (t - b) / (a - b)
                wgt = wgt + term
        out[..., a] = wgt
    return out


def tricubic_stencils_np(axes, sizes, pts, deriv):
    nr, nw, nq = (int(v) for v in sizes)
    xr = np.clip((pts[:, 0] - axes[0]) / axes[1], -0.5, nr - 1.0)
    xw = np.clip((pts[:, 1] - axes[2]) / axes[3], 0.0, nw - 1.0)
    xq = np.clip((pts[:, 2] - axes[4]) / axes[5], 0.0, nq - 1.0)
    br = np.clip(np.floor(xr).astype(np.int64) - 1, -2, nr - 4)
    bw = np.clip(np.floor(xw).astype(np.int64) - 1, 0, nw - 4)
    bq = np.clip(np.floor(xq).astype(np.int64) - 1, 0, nq - 4)
    wr = _lagrange4_np(xr - br, deriv[0]) / axes[1] ** deriv[0]
    ww = _lagrange4_np(xw - bw, deriv[1]) / axes[3] ** deriv[1]
    wq = _lagrange4_np(xq - bq, deriv[2]) / axes[5] ** deriv[2]
    off = np.arange(4)
    i = br[:, None] + off                                   # (m, 4)
    j = bw[:, None] + off
    ghost = i < 0
    ii = np.where(ghost, -1 - i, i)[:, :, None]
    jj = np.where(ghost[:, :, None], nw - 1 - j[:, None, :], j[:, None, :])
    flat_rw = (ii * nw + jj) * nq                           # (m, 4, 4)
    kk = bq[:, None] + off
    idx = flat_rw[:, :, :, None] + kk[:, None, None, :]
    wts = wr[:, :, None, None] * ww[:, None, :, None] * wq[:, None, None, :]
    m = pts.shape[0]
    return idx.reshape(m, 64), wts.reshape(m, 64)



# ---------------------------------------------------------------------------
# orbits with tangent vectors: y = (x, v, dx_r, dv_r, dx_w, dv_w) in the orbit
# plane, the tangents being the derivatives with respect to the initial (r, w)
# at fixed L.  Used to differentiate h(t, z) = h0(Z) - int S(Z) ds in z.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _table_sym(tab, step, r, sign):
    # cubic Lagrange on a uniform table; tab[-j] = sign * tab[j]; 0 beyond the end
    n = tab.shape[0]
    x = r / step
    if x > n - 1:
        return 0.0, 0.0
    i = int(x)
    base = i - 1
    if base > n - 4:
        base = n - 4
    t = x - base
    val = 0.0
    der = 0.0
    for a in range(4):
        wgt = 1.0
        dw = 0.0
        for b in range(4):
            if b != a:
                term = 1.0 / (a - b)
                for c in range(4):
                    if c != a and c != b:
                        term *= (t - c) / (a - c)
                dw += term
                wgt *= (t - b) / (a - b)
        j = base + a
        v = tab[j] if j >= 0 else sign * tab[-j]
        val += wgt * v
        der += dw * v
    return val, der / step


@njit(cache=True)
def _coeffs_with_slope(tab_a, tab_b, step, r):
    r_end = step * (tab_a.shape[0] - 1)
    if r <= r_end:
        a, da = _table_sym(tab_a, step, r, 1.0)
        b, db = _table_sym(tab_b, step, r, 1.0)
        return a, da, b, db
    ratio = r_end / r
    b = tab_b[-1] * ratio * ratio * ratio
    return tab_a[-1], 0.0, b, -3.0 * b / r


@njit(cache=True)
def _tangent_rhs(y, out, gamma, tab_a, tab_b, step):
    x1, x2, v1, v2 = y[0], y[1], y[2], y[3]
    r = math.sqrt(x1 * x1 + x2 * x2)
    a, da, b, db = _coeffs_with_slope(tab_a, tab_b, step, r)
    lor = math.sqrt(1.0 + gamma * (v1 * v1 + v2 * v2))
    out[0] = a * v1 / lor
    out[1] = a * v2 / lor
    out[2] = -b * lor * x1
    out[3] = -b * lor * x2
    for k in (4, 8):
        dx1, dx2, dv1, dv2 = y[k], y[k + 1], y[k + 2], y[k + 3]
        dr = (x1 * dx1 + x2 * dx2) / r if r > 0.0 else 0.0
        dlor = gamma * (v1 * dv1 + v2 * dv2) / lor
        out[k] = da * dr * v1 / lor + a * dv1 / lor - a * v1 * dlor / (lor * lor)
        out[k + 1] = da * dr * v2 / lor + a * dv2 / lor - a * v2 * dlor / (lor * lor)
        out[k + 2] = -(db * dr * lor * x1 + b * dlor * x1 + b * lor * dx1)
        out[k + 3] = -(db * dr * lor * x2 + b * dlor * x2 + b * lor * dx2)


@njit(cache=True)
def trace_tangents_nb(y, duration, nsub, gamma, tab_a, tab_b, step):
    """RK4 for orbits and their two tangent vectors; ``y`` has shape (m, 12)."""
    h = duration / nsub
    k1 = np.empty(12)
    k2 = np.empty(12)
    k3 = np.empty(12)
    k4 = np.empty(12)
    tmp = np.empty(12)
    for p in range(y.shape[0]):
        cur = y[p]
        for _ in range(nsub):
            _tangent_rhs(cur, k1, gamma, tab_a, tab_b, step)
            for j in range(12):
                tmp[j] = cur[j] + 0.5 * h * k1[j]
            _tangent_rhs(tmp, k2, gamma, tab_a, tab_b, step)
            for j in range(12):
                tmp[j] = cur[j] + 0.5 * h * k2[j]
            _tangent_rhs(tmp, k3, gamma, tab_a, tab_b, step)
            for j in range(12):
                tmp[j] = cur[j] + h * k3[j]
            _tangent_rhs(tmp, k4, gamma, tab_a, tab_b, step)
            for j in range(12):
                cur[j] += h * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) / 6.0


def _table_sym_np(tab, step, r, sign):
    n = tab.shape[0]
    x = r / step
    outside = x > n - 1
    xc = np.minimum(x, n - 1)
    base = np.minimum(xc.astype(np.int64) - 1, n - 4)
    t = xc - base
    val = np.zeros_like(xc)
    der = np.zeros_like(xc)
    for a in range(4):
        wgt = np.ones_like(t)
        dw = np.zeros_like(t)
        for b in range(4):
            if b != a:
                term = np.full_like(t, 1.0 / (a - b))
                for c in range(4):
                    if c != a and c != b:
                        term = term * (t - c) / (a - c)
                dw += term
                wgt = wgt * (t - b) / (a - b)
        j = base + a
        v = np.where(j >= 0, tab[np.abs(j)], sign * tab[np.abs(j)])
        val += wgt * v
        der += dw * v
    val[outside] = 0.0
    der[outside] = 0.0
    return val, der / step


def _tangent_rhs_np(y, gamma, tab_a, tab_b, step):
    x1, x2, v1, v2 = y[:, 0], y[:, 1], y[:, 2], y[:, 3]
    r = np.sqrt(x1 * x1 + x2 * x2)
    r_end = step * (tab_a.shape[0] - 1)
    inside = r <= r_end
    a, da = _table_sym_np(tab_a, step, np.minimum(r, r_end), 1.0)
    b, db = _table_sym_np(tab_b, step, np.minimum(r, r_end), 1.0)
    ratio = r_end / np.maximum(r, r_end)
    b_out = tab_b[-1] * ratio**3
    a = np.where(inside, a, tab_a[-1])
    da = np.where(inside, da, 0.0)
    b = np.where(inside, b, b_out)
    db = np.where(inside, db, -3.0 * b_out / np.maximum(r, r_end))
    lor = np.sqrt(1.0 + gamma * (v1 * v1 + v2 * v2))
    out = np.empty_like(y)
    out[:, 0] = a * v1 / lor
    out[:, 1] = a * v2 / lor
    out[:, 2] = -b * lor * x1
    out[:, 3] = -b * lor * x2
    safe = np.where(r > 0.0, r, 1.0)
    for k in (4, 8):
        dx1, dx2, dv1, dv2 = y[:, k], y[:, k + 1], y[:, k + 2], y[:, k + 3]
        dr = np.where(r > 0.0, (x1 * dx1 + x2 * dx2) / safe, 0.0)
        dlor = gamma * (v1 * dv1 + v2 * dv2) / lor
        out[:, k] = da * dr * v1 / lor + a * dv1 / lor - a * v1 * dlor / lor**2
        out[:, k + 1] = da * dr * v2 / lor + a * dv2 / lor - a * v2 * dlor / lor**2
        out[:, k + 2] = -(db * dr * lor * x1 + b * dlor * x1 + b * lor * dx1)
        out[:, k + 3] = -(db * dr * lor * x2 + b * dlor * x2 + b * lor * dx2)
    return out


def trace_tangents_np(y, duration, nsub, gamma, tab_a, tab_b, step):
    h = duration / nsub
    cur = y.copy()
    for _ in range(nsub):
        k1 = _tangent_rhs_np(cur, gamma, tab_a, tab_b, step)
        k2 = _tangent_rhs_np(cur + 0.5 * h * k1, gamma, tab_a, tab_b, step)
        k3 = _tangent_rhs_np(cur + 0.5 * h * k2, gamma, tab_a, tab_b, step)
        k4 = _tangent_rhs_np(cur + h * k3, gamma, tab_a, tab_b, step)
        cur += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    y[:] = cur


# ---------------------------------------------------------------------------
# source of the generator equation and its (r, w) gradient, pulled back by
# the flow Jacobian J = d(r', w')/d(r, w):
#   S = e^mu dlam w^2/<v> - (E/gamma) dmu
# field tables hold (dlam, dlam', dmu, dmu'); steady tables (mu, mu').
# ---------------------------------------------------------------------------


@njit(cache=True)
def accumulate_source_nb(r, w, L, J, ftab, fstep, stab, sstep, weight, gamma, out):
    """``out[0:3] += weight * (S, dS/dr, dS/dw)`` evaluated at the points (r, w, L)."""
    for p in range(r.shape[0]):
        rr = r[p]
        ww = w[p]
        dl, _ = _table_sym(ftab[0], fstep, rr, -1.0)
        ddl, _ = _table_sym(ftab[1], fstep, rr, 1.0)
        dm, _ = _table_sym(ftab[2], fstep, rr, 1.0)
        ddm, _ = _table_sym(ftab[3], fstep, rr, -1.0)
        if dl == 0.0 and ddl == 0.0 and dm == 0.0 and ddm == 0.0:
            continue
        mu, _ = _table_sym(stab[0], sstep, rr, 1.0)
        dmu, _ = _table_sym(stab[1], sstep, rr, -1.0)
        q = L[p] / (rr * rr)
        lor = math.sqrt(1.0 + gamma * (ww * ww + q))
        e = math.exp(mu)
        big_e = e * lor
        lor_r = -gamma * q / (rr * lor)
        lor_w = gamma * ww / lor
        c = ww * ww / lor
        c_r = -ww * ww * lor_r / (lor * lor)
        c_w = 2.0 * ww / lor - ww * ww * lor_w / (lor * lor)
        s = e * dl * c - big_e * dm / gamma
        s_r = e * (dmu * dl + ddl) * c + e * dl * c_r - ((e * dmu * lor + e * lor_r) * dm + big_e * ddm) / gamma
        s_w = e * dl * c_w - e * lor_w * dm / gamma
        out[0, p] += weight * s
        out[1, p] += weight * (s_r * J[p, 0] + s_w * J[p, 2])
        out[2, p] += weight * (s_r * J[p, 1] + s_w * J[p, 3])


def accumulate_source_np(r, w, L, J, ftab, fstep, stab, sstep, weight, gamma, out):
    dl, _ = _table_sym_np(ftab[0], fstep, r, -1.0)
    ddl, _ = _table_sym_np(ftab[1], fstep, r, 1.0)
    dm, _ = _table_sym_np(ftab[2], fstep, r, 1.0)
    ddm, _ = _table_sym_np(ftab[3], fstep, r, -1.0)
    mu, _ = _table_sym_np(stab[0], sstep, r, 1.0)
    dmu, _ = _table_sym_np(stab[1], sstep, r, -1.0)
    q = L / (r * r)
    lor = np.sqrt(1.0 + gamma * (w * w + q))
    e = np.exp(mu)
    big_e = e * lor
    lor_r = -gamma * q / (r * lor)
    lor_w = gamma * w / lor
    c = w * w / lor
    c_r = -w * w * lor_r / lor**2
    c_w = 2.0 * w / lor - w * w * lor_w / lor**2
    s = e * dl * c - big_e * dm / gamma
    s_r = e * (dmu * dl + ddl) * c + e * dl * c_r - ((e * dmu * lor + e * lor_r) * dm + big_e * ddm) / gamma
    s_w = e * dl * c_w - e * lor_w * dm / gamma
    out[0] += weight * s
    out[1] += weight * (s_r * J[:, 0] + s_w * J[:, 2])
    out[2] += weight * (s_r * J[:, 1] + s_w * J[:, 3])


if USE_NUMBA:
    polytrope_densities = polytrope_densities_nb
    trace_orbits = trace_orbits_nb
    tricubic_stencils = tricubic_stencils_nb
    trace_tangents = trace_tangents_nb
    accumulate_source = accumulate_source_nb
else:
    polytrope_densities = polytrope_densities_np
    trace_orbits = trace_orbits_np
    tricubic_stencils = tricubic_stencils_np
    trace_tangents = trace_tangents_np
    accumulate_source = accumulate_source_np
