"""Acceptance run: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v -s`` (the lines
are also collected into the terminal summary) or ``python
tests/test_acceptance.py``.  The slowest criterion is the evolution
refinement study (a few minutes on one core).
"""
import filecmp
import math
import time

import numpy as np
import pytest

from evlab import scaling
from evlab.cli import cmd_verify
from evlab.config import load_config
from evlab.energy import coercivity_rhs, energy_casimir_expansion_check, split
from evlab.eos import casimir_chi_from_state, make_eos, power_casimir, sine_casimir
from evlab.evolution import CharacteristicSystem
from evlab.generators import MIXED, ODD, random_generators
from evlab.perturbation import check_casimir_constraint, delta_f_from_h, lemma_identity_suite
from evlab.phase_space import KineticField, PhaseGrid, momentum_integral
from evlab.quadrature import gauss_legendre
from evlab.steady_state import field_equation_residuals, solve, solve_newtonian

pytestmark = pytest.mark.acceptance

RESULTS = {}
K, GAMMA, NU_RING = 2.0, 0.02, -0.2


def record(number, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed <= budget
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.1f} s / {budget:.0f} s]"
    RESULTS[number] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def eos():
    return make_eos("polytrope", K)


@pytest.fixture(scope="module")
def state(eos):
    return solve(eos, GAMMA, NU_RING)


# -- 1 -------------------------------------------------------------------------


def _cartesian_integral(fn, weight, n=96, vmax=8.0):
    v, wv = gauss_legendre(n, -vmax, vmax)
    v1, v2, v3 = np.meshgrid(v, v, v, indexing="ij")
    wts = wv[:, None, None] * wv[None, :, None] * wv[None, None, :]
    q = v2**2 + v3**2
    return float(np.sum(wts * weight(v1, q) * fn(v1, q)))


def test_criterion_01_momentum_integral():
    t0 = time.perf_counter()
    g = GAMMA
    lor = lambda w, q: np.sqrt(1.0 + g * (w * w + q))
    cases = [
        ("one", lambda w, q: np.exp(-(w * w + q)), lambda w, q: 1.0),
        ("lorentz", lambda w, q: w * w * np.exp(-(w * w + q)), lor),
        ("w", lambda w, q: (1.0 + w) ** 2 * np.exp(-0.5 * (w * w + q)), lambda w, q: w),
        ("tangential", lambda w, q: np.exp(-(w - 0.3) ** 2 - q), lambda w, q: q / lor(w, q)),
        ("w2_lorentz", lambda w, q: q * q * np.exp(-(w * w + q)), lambda w, q: w * w / lor(w, q)),
    ]
    grid = PhaseGrid.gauss((0.5, 1.5), 8.0, 64 * 1.5**2)
    worst = 0.0
    for name, fn, weight in cases:
        field = KineticField.from_function(grid, lambda R, W, L: fn(W, L / R**2))
        exact = _cartesian_integral(fn, weight)
        for i in (5, 30, 60):
            got = momentum_integral(field, name, grid.r[i], g)
            worst = max(worst, abs(got - exact) / abs(exact))
    record(1, worst < 1e-8, f"max relative error {worst:.2e} (< 1e-8)", time.perf_counter() - t0, 1.0)


# -- 2 -------------------------------------------------------------------------


def test_criterion_02_steady_state(eos):
    t0 = time.perf_counter()
    res = field_equation_residuals(solve(eos, GAMMA, NU_RING))["max"]
    ref = solve(eos, GAMMA, NU_RING, n_steps=16384)
    mass = lambda s: float(s.profile(np.array([s.R])).m[0])
    eR, em = [], []
    for n in (256, 512, 1024):
        s = solve(eos, GAMMA, NU_RING, n_steps=n)
        eR.append(abs(s.R - ref.R))
        em.append(abs(mass(s) - mass(ref)))
    orders = np.log2(np.array(eR[:-1] + em[:-1]) / np.array(eR[1:] + em[1:]))
    ok = res < 1e-8 and np.all(np.abs(orders - 4.0) <= 0.3)
    record(2, ok, f"residual {res:.2e}; orders R {orders[:2].round(2)}, m(R) {orders[2:].round(2)}",
           time.perf_counter() - t0, 10.0)


# -- 3 -------------------------------------------------------------------------


def test_criterion_03_newtonian_limit(eos):
    t0 = time.perf_counter()
    newt = solve_newtonian(eos, NU_RING)
    r = np.linspace(0.0, 2.0 * newt.R0, 2001)
    U = newt.potential(r)
    errs = np.array([np.max(np.abs(solve(eos, g, NU_RING).profile(r).nu - U)) for g in (0.08, 0.04, 0.02, 0.01)])
    ratios = errs[:-1] / errs[1:]
    ok = np.all(np.diff(errs) < 0) and np.all((ratios >= 1.7) & (ratios <= 2.3))
    record(3, ok, f"sup|nu0 - U| ratios {ratios.round(3)} (in [1.7, 2.3])", time.perf_counter() - t0, 30.0)


# -- 4 -------------------------------------------------------------------------


def test_criterion_04_identity_suite(state):
    t0 = time.perf_counter()
    gens = random_generators(state, 100, family=MIXED, seed=0)
    rep = lemma_identity_suite(state, gens)
    l33 = max(rep["lemma33_first"], rep["lemma33_second"])
    order = min(rep["lemma44_order_first"] + rep["lemma44_order_second"])
    margin, dual = rep["lemma43_min_margin"], rep["prop32_dual_route"]
    ok = l33 < 1e-8 and order >= 3.5 and dual < 1e-8 and margin >= -1e-13
    record(4, ok, f"energy identities {l33:.1e}; bracket order {order:.2f}; dual-route {dual:.1e}; "
                  f"Cauchy-Schwarz margin {margin:.1e}", time.perf_counter() - t0, 60.0)


# -- 5 -------------------------------------------------------------------------


def test_criterion_05_casimir_constraint(state):
    t0 = time.perf_counter()
    chis = [casimir_chi_from_state(state.eos, state.gamma), power_casimir(2), sine_casimir()]
    cas, mass = 0.0, 0.0
    for h in random_generators(state, 20, family=MIXED, seed=0):
        p = delta_f_from_h(h, state, with_fields=False)
        total, scale = p.total_mass()
        mass = max(mass, abs(total) / scale)
        for chi in chis:
            cas = max(cas, check_casimir_constraint(p, chi)["relative"])
    record(5, cas < 1e-6 and mass < 1e-10, f"Casimir residual {cas:.1e} (< 1e-6); delta mass {mass:.1e} (< 1e-10)",
           time.perf_counter() - t0, 30.0)


# -- 6 -------------------------------------------------------------------------


def test_criterion_06_splitting(state):
    t0 = time.perf_counter()
    e1 = e2 = 0.0
    for h in random_generators(state, 20, family=ODD, seed=0):
        rep = split(delta_f_from_h(h, state, with_fields=False), h=h)
        e1, e2 = max(e1, rep.splitting_error), max(e2, rep.uvw_error)
    record(6, e1 < 1e-6 and e2 < 1e-6, f"2A vs A1+A2 {e1:.1e}; A11 vs U+V+W {e2:.1e} (< 1e-6)",
           time.perf_counter() - t0, 30.0)


# -- 7 -------------------------------------------------------------------------

A2_BOUND = 0.25     # the observed sup of |A2|/(gamma A1) is 0.175 at every gamma


def test_criterion_07_coercivity(eos):
    t0 = time.perf_counter()
    st = solve(eos, 0.01, NU_RING)
    violations, worst = 0, math.inf
    for h in random_generators(st, 100, family=ODD, seed=0):
        rep = split(delta_f_from_h(h, st, with_fields=False), h=h)
        ratio = rep.A / coercivity_rhs(h, st)["remark"]
        worst = min(worst, ratio)
        violations += ratio < 1.0
    sups = []
    for g in (0.04, 0.02, 0.01):
        sg = st if g == 0.01 else solve(eos, g, NU_RING)
        vals = [abs(r.A2) / (g * r.A1) for r in
                (split(delta_f_from_h(h, sg, with_fields=False), h=h)
                 for h in random_generators(sg, 20, family=ODD, seed=0))]
        sups.append(max(vals))
    sups = np.array(sups)
    steady = sups.max() <= A2_BOUND and sups.max() / sups.min() < 1.1
    record(7, violations == 0 and steady,
           f"{violations} violations, min A/rhs {worst:.3f}; sup |A2|/(gamma A1) {sups.round(4)} (<= {A2_BOUND})",
           time.perf_counter() - t0, 300.0)


# -- 8 -------------------------------------------------------------------------


def test_criterion_08_expansion(state):
    t0 = time.perf_counter()
    h = random_generators(state, 1, family=ODD, seed=0)[0]
    chi = casimir_chi_from_state(state.eos, state.gamma)
    res = energy_casimir_expansion_check(state, h, chi, (1e-2, 5e-3, 2.5e-3))
    r3, r2 = res["ratios"], res["first_order_ratios"]
    ok = np.all((r3 >= 6.0) & (r3 <= 10.0)) and np.all((r2 >= 3.0) & (r2 <= 5.0))
    record(8, ok, f"remainder ratios {np.round(r3, 3)} (in [6, 10]); first-order ratios {np.round(r2, 3)}",
           time.perf_counter() - t0, 60.0)


# -- 9 -------------------------------------------------------------------------


def test_criterion_09_evolution(state):
    t0 = time.perf_counter()
    h = random_generators(state, 1, family=ODD, seed=1)[0]
    base = CharacteristicSystem(state)
    coarse = base.evolve(h, base.t_dyn)
    fine = CharacteristicSystem(state, order=(128, 48, 32), steps_per_tdyn=64).evolve(h, base.t_dyn)
    gain = coarse.energy_drift / fine.energy_drift
    # constraint residual at dt and dt/2 on the default quadrature
    half = base.evolve(h, base.t_dyn, dt=coarse.dt / 2)
    c1, c2 = max(coarse.constraint[1:-1]), max(half.constraint[1:-1])
    order = math.log2(c1 / c2)
    ok = coarse.energy_drift < 1e-3 and gain >= 4.0 and abs(order - 2.0) <= 0.3
    record(9, ok, f"drift {coarse.energy_drift:.2e} (< 1e-3), refined {fine.energy_drift:.2e} (x{gain:.1f}); "
                  f"constraint order {order:.2f}", time.perf_counter() - t0, 600.0)


# -- 10 ------------------------------------------------------------------------


def test_criterion_10_scaling(eos, state):
    t0 = time.perf_counter()
    worst = 0.0
    for fam, seed in ((ODD, 0), (MIXED, 1)):
        for h in random_generators(scaling.scale_state(state), 3, family=fam, seed=seed):
            rel = scaling.relation_checks(h, state)
            worst = max(worst, rel["bracket"], rel["delta_f"], rel["energy"])
    identity = scaling.scale_state(state, 1.0) is state and scaling.group_check(state, 1.0, 1.0) < 1e-15
    st = solve(eos, 0.01, NU_RING)
    scaled = scaling.scale_state(st)
    system = CharacteristicSystem(scaled)
    h = random_generators(scaled, 1, family=ODD, seed=5)[0]
    stab = scaling.stability_along_trajectory(system.evolve(h, system.t_dyn, keep=True))
    ok = worst < 1e-6 and identity and stab["holds"]
    record(10, ok, f"relations {worst:.1e} (< 1e-6); T^1 identity {identity}; stability max lhs/A(0) "
                   f"{stab['max_ratio']:.3f} with drift {stab['drift']:.1e}", time.perf_counter() - t0, 120.0)


# -- 11 ------------------------------------------------------------------------


def test_criterion_11_determinism(tmp_path):
    t0 = time.perf_counter()
    outs = []
    for name in ("a", "b"):
        cfg = load_config(None, [f'output.dir="{tmp_path / name}"'])
        cmd_verify(cfg)
        outs.append(tmp_path / name / "report.json")
    same = filecmp.cmp(*outs, shallow=False)
    record(11, same, "repeated verify reports are byte-identical" if same else "reports differ",
           time.perf_counter() - t0, 120.0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
