"""Compare the numba kernels with their numpy fallbacks.

Both variants are imported directly (``*_nb`` / ``*_np``), so one process
times both regardless of ``EV_LAB_NUMBA``.  Each kernel is run once to
trigger compilation, then timed as the best of ``--repeat`` runs; the
largest relative difference between the two outputs is reported too.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]
"""
import argparse
import time

import numpy as np

from evlab import kernels as K
from evlab.eos import make_eos
from evlab.evolution import CharacteristicFlow, FieldTables
from evlab.generators import ODD, random_generators
from evlab.perturbation import delta_f_from_h, quadrature_for
from evlab.quadrature import graded_unit_rule
from evlab.steady_state import solve


def best_of(fn, repeat):
    fn()                                    # warm-up / compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def rel_diff(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def cases(scale):
    st = solve(make_eos("polytrope", 2.0), 0.02, -0.2)
    flow = CharacteristicFlow(st)
    rng = np.random.default_rng(0)
    n = int(20000 * scale)
    r = rng.uniform(0.05, 0.95, n) * st.R
    V = st.vmax(r)
    w = rng.uniform(-0.6, 0.6, n) * V
    vt = rng.uniform(0.0, 0.6, n) * V
    L = (r * vt) ** 2
    s, ws, _ = graded_unit_rule(48)
    nu = np.linspace(-0.2, 0.0, int(50000 * scale))

    def densities(impl):
        return lambda: impl(nu, 0.02, 2.0, s, ws)

    def orbits(impl):
        def run():
            y = [r.copy(), np.zeros_like(r), w.copy(), vt.copy()]
            impl(*y, 2.0, 40, flow.gamma, flow.tab_a, flow.tab_b, flow.step)
            return y
        return run

    bundle = flow.bundle(r[: n // 4], w[: n // 4], L[: n // 4])

    def tangents(impl):
        def run():
            y = bundle.y.copy()
            impl(y, 2.0, 40, flow.gamma, flow.tab_a, flow.tab_b, flow.step)
            return y
        return run

    quad = quadrature_for(st)
    p = delta_f_from_h(random_generators(st, 1, family=ODD, seed=0)[0], quad)
    table = FieldTables(quad)(p)
    tstep = FieldTables(quad).step
    J = np.tile([1.0, 0.0, 0.0, 1.0], (n, 1))

    def source(impl):
        def run():
            out = np.zeros((3, n))
            impl(r, w, L, J, table, tstep, flow.tab_mu, flow.step, 0.5, flow.gamma, out)
            return out
        return run

    axes = np.array([0.05, 0.1, -1.05, 0.1, 0.0, 0.05])
    sizes = np.array([20, 22, 12])
    pts = np.column_stack([rng.uniform(0, 1.9, n), rng.uniform(-1, 1, n), rng.uniform(0, 0.5, n)])

    def stencils(impl):
        return lambda: impl(axes, sizes, pts, np.array([1, 0, 0]))[1]

    dens_np = lambda x: K.polytrope_densities_np(np.atleast_1d(x), 0.02, 2.0, s, ws)

    def tov(which):
        if which == "nb":
            return lambda: K.tov_rk4_nb(0.01, -0.2, 1e-6, 0.01, 800, 0.02, 2.0, s, ws, 1e-6, 0.5)[1]
        return lambda: K.tov_rk4_np(0.01, -0.2, 1e-6, 0.01, 800, 0.02, dens_np, 1e-6, 0.5)[1]

    return [
        ("polytrope_densities", densities(K.polytrope_densities_nb), densities(K.polytrope_densities_np)),
        ("trace_orbits", orbits(K.trace_orbits_nb), orbits(K.trace_orbits_np)),
        ("trace_tangents", tangents(K.trace_tangents_nb), tangents(K.trace_tangents_np)),
        ("accumulate_source", source(K.accumulate_source_nb), source(K.accumulate_source_np)),
        ("tricubic_stencils", stencils(K.tricubic_stencils_nb), stencils(K.tricubic_stencils_np)),
        ("tov_rk4", tov("nb"), tov("np")),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="problem-size multiplier")
    args = ap.parse_args(argv)
    print(f"{'kernel':<22}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}{'max rel diff':>14}")
    for name, nb, npy in cases(args.scale):
        diff = rel_diff(nb(), npy())
        t_nb, t_np = best_of(nb, args.repeat), best_of(npy, args.repeat)
        print(f"{name:<22}{1e3 * t_nb:>12.2f}{1e3 * t_np:>12.2f}{t_np / t_nb:>10.1f}{diff:>14.1e}")


if __name__ == "__main__":
    main()
