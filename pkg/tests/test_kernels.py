"""The numba kernels and their numpy fallbacks must agree."""
import numpy as np
import pytest

from evlab import _accel, kernels as K
from evlab.evolution import CharacteristicFlow


@pytest.fixture(scope="module")
def flow(state):
    return CharacteristicFlow(state)


def _orbits(state, n=200, seed=0):
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.05, 0.95, n) * state.R
    V = state.vmax(r)
    w = rng.uniform(-0.6, 0.6, n) * V
    vt = rng.uniform(0.0, 0.6, n) * V
    return r, w, vt


def test_orbit_kernels_agree(state, flow):
    r, w, vt = _orbits(state)
    a = [r.copy(), np.zeros_like(r), w.copy(), vt.copy()]
    b = [x.copy() for x in a]
    K.trace_orbits_nb(*a, 5.0, 100, flow.gamma, flow.tab_a, flow.tab_b, flow.step)
    K.trace_orbits_np(*b, 5.0, 100, flow.gamma, flow.tab_a, flow.tab_b, flow.step)
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-12, atol=1e-13)


def test_tangent_kernels_agree(state, flow):
    r, w, vt = _orbits(state, 50, 1)
    bundle = flow.bundle(r, w, (r * vt) ** 2)
    y0 = bundle.y.copy()
    y1, y2 = y0.copy(), y0.copy()
    K.trace_tangents_nb(y1, 3.0, 60, flow.gamma, flow.tab_a, flow.tab_b, flow.step)
    K.trace_tangents_np(y2, 3.0, 60, flow.gamma, flow.tab_a, flow.tab_b, flow.step)
    assert np.allclose(y1, y2, rtol=1e-11, atol=1e-12)


def test_tangents_match_finite_differences(state, flow):
    r0, w0, L0 = np.array([0.4 * state.R]), np.array([0.01]), np.array([2e-3])
    b = flow.bundle(r0, w0, L0)
    b.advance(4.0)
    _, _, J = b.coordinates()
    h = 1e-6
    rp, wp, _ = flow.trace(r0 + h, w0, L0, 4.0)
    rm, wm, _ = flow.trace(r0 - h, w0, L0, 4.0)
    assert J[0, 0] == pytest.approx(((rp - rm) / (2 * h))[0], rel=1e-6)
    assert J[0, 2] == pytest.approx(((wp - wm) / (2 * h))[0], rel=1e-6)


def test_tov_kernels_agree(poly2):
    from evlab.quadrature import graded_unit_rule

    s, ws, _ = graded_unit_rule(48)
    gamma, k = 0.02, 2.0
    dens = lambda nu: K.polytrope_densities_np(np.atleast_1d(nu), gamma, k, s, ws)
    nb = K.tov_rk4_nb(0.01, -0.2, 1e-6, 0.01, 200, gamma, k, s, ws, 1e-6, 0.5)
    npy = K.tov_rk4_np(0.01, -0.2, 1e-6, 0.01, 200, gamma, dens, 1e-6, 0.5)
    for a, b in zip(nb, npy):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def test_stencil_kernels_agree():
    rng = np.random.default_rng(0)
    axes = np.array([0.05, 0.1, -1.05, 0.1, 0.0, 0.05])
    sizes = np.array([20, 22, 12])
    pts = np.column_stack([rng.uniform(0, 1.9, 300), rng.uniform(-1, 1, 300), rng.uniform(0, 0.5, 300)])
    for d in ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)):
        i1, w1 = K.tricubic_stencils_nb(axes, sizes, pts, np.array(d))
        i2, w2 = K.tricubic_stencils_np(axes, sizes, pts, np.array(d))
        assert np.array_equal(i1, i2)
        assert np.allclose(w1, w2, rtol=1e-13, atol=1e-14)


def test_numpy_fallback_selected_by_environment():
    import subprocess
    import sys

    code = ("from evlab import _accel, kernels as K; "
            "print(_accel.USE_NUMBA, K.trace_orbits is K.trace_orbits_np)")
    env = dict(__import__("os").environ, EV_LAB_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "True"]


def test_thread_cap(monkeypatch):
    monkeypatch.delenv("EV_LAB_THREADS", raising=False)
    assert _accel.threads() is None
    monkeypatch.setenv("EV_LAB_THREADS", "2")
    assert _accel.threads() == 2
    monkeypatch.setenv("EV_LAB_THREADS", "0")
    with pytest.raises(ValueError):
        _accel.threads()
