"""Command-line entry point ``ev-lab``.

Commands: ``steady``, ``verify``, ``perturb``, ``evolve``, ``scan`` and
``expansion-check``.  Each takes an optional JSON configuration file plus
``--set key.path=value`` overrides and writes into ``output.dir``.

Exit codes: 0 success, 2 configuration or input error, 3 physics error
(no compact support, inadmissible state), 4 numerical failure (a check
missed its tolerance, step size too large).
"""
import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import io
from .config import load_config
from .eos import ParameterError, casimir_chi_from_state, make_eos, power_casimir, sine_casimir
from .errors import (ConfigError, EVLabError, IntegrityError, NoCompactSupportError,
                     NumericalToleranceError, PhysicsError)
from .generators import Generator, ODD, random_generators

EXIT_OK, EXIT_CONFIG, EXIT_PHYSICS, EXIT_NUMERIC = 0, 2, 3, 4

# tolerances of the verification suite
TOL = {
    "field_equations": 1e-8,
    "lemma33": 1e-8,
    "lemma44_order": 3.5,
    "lemma43_margin": -1e-13,
    "prop32_dual": 1e-8,
    "casimir": 1e-6,
    "delta_mass": 1e-10,
    "splitting": 1e-6,
    "expansion_ratio": (6.0, 10.0),
    "expansion_first_order": (3.0, 5.0),
    "evolve_drift": 1e-3,
}


# -- shared helpers ----------------------------------------------------------------


def _threads():
    raw = os.environ.get("EV_LAB_THREADS")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"EV_LAB_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("EV_LAB_THREADS must be >= 1")
    return n


def _apply_threads(n):
    from ._accel import apply_threads

    apply_threads(n)


def build_state(cfg):
    from .steady_state import solve

    eos = make_eos(cfg.eos.kind, cfg.eos.k)
    st = solve(eos, cfg.gamma, cfg.nu_ring)
    if st.is_vacuum:
        raise NoCompactSupportError(f"nu_ring = {cfg.nu_ring!r} gives the vacuum: no compact support")
    st.quad_order = cfg.grid.quadrature_order
    return st


def build_generators(cfg, st, family=None, count=None):
    """The configured expression, or seeded members of the configured family."""
    if cfg.sample.expression is not None and family is None:
        return [Generator(cfg.sample.expression, label="config")]
    return random_generators(st, count or cfg.sample.count, family=family or cfg.sample.generator_family,
                             seed=cfg.sample.seed)


def _outdir(cfg):
    os.makedirs(cfg.output.dir, exist_ok=True)
    return cfg.output.dir


def _path(cfg, name):
    return os.path.join(_outdir(cfg), name)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _check(value, ok, threshold):
    return {"value": value, "threshold": threshold, "pass": bool(ok)}


# -- steady ------------------------------------------------------------------------


def cmd_steady(cfg):
    """Solve the steady state, write ``state.csv`` and the ``state.json`` sidecar."""
    from .steady_state import DEFAULT_STEPS, field_equation_residuals, write_state

    st = build_state(cfg)
    st.check_invariants()
    res = field_equation_residuals(st)
    csv_path, json_path = _path(cfg, "state.csv"), _path(cfg, "state.json")
    ok = res["max"] < TOL["field_equations"]
    write_state(st, csv_path, json_path,
                extra={"field_residual_max": res["max"], "admissibility_margin": st.admissibility_margin(),
                       "residuals_pass": ok, "solver": {"n_steps": DEFAULT_STEPS, "r_factor": 2.0}})
    with open(json_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    meta["csv_sha256"] = _sha256(csv_path)
    io.write_json(json_path, meta)
    return ok


def load_state_file(json_path):
    """Re-solve the state described by a sidecar and check it against its CSV.

    Raises :class:`IntegrityError` when the checksum, the schema or the
    values do not match.
    """
    from .steady_state import solve

    try:
        with open(json_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"cannot read state sidecar {json_path}: {exc}") from exc
    need = {"gamma", "nu_ring", "R", "z", "adm_mass", "eos", "solver", "csv_sha256"}
    if not isinstance(meta, dict) or not need <= set(meta):
        raise IntegrityError(f"state sidecar {json_path} lacks keys {sorted(need - set(meta or {}))}")
    csv_path = os.path.splitext(json_path)[0] + ".csv"
    if not os.path.exists(csv_path) or _sha256(csv_path) != meta["csv_sha256"]:
        raise IntegrityError(f"{csv_path} does not match the checksum in {json_path}")
    header, rows = io.read_csv(csv_path)
    try:
        data = np.array(rows, dtype=float)
        eos = make_eos(meta["eos"]["kind"], meta["eos"]["k"])
        st = solve(eos, meta["gamma"], meta["nu_ring"], n_steps=int(meta["solver"]["n_steps"]),
                   r_factor=float(meta["solver"]["r_factor"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise IntegrityError(f"state files are not well-formed: {exc}") from exc
    table = st.to_table()
    if header != list(table) or data.shape != (st.r.size, len(table)):
        raise IntegrityError("state CSV layout does not match the solver output")
    ref = np.column_stack([table[c] for c in header])
    scale = np.maximum(np.max(np.abs(ref), axis=0), 1e-300)
    if np.max(np.abs(data - ref) / scale) > 1e-12:
        raise IntegrityError("state CSV values do not reproduce")
    return st


# -- verify ------------------------------------------------------------------------


def verification_report(cfg, st):
    """All checks of the verification suite as a JSON-ready dict."""
    from .energy import coercivity_rhs, energy_casimir_expansion_check, free_energy, split
    from .perturbation import (check_casimir_constraint, delta_f_from_h, lemma43_margin,
                               lemma_identity_suite)
    from .steady_state import field_equation_residuals

    checks = {}
    res = field_equation_residuals(st)["max"]
    checks["field_equations"] = _check(res, res < TOL["field_equations"], TOL["field_equations"])

    gens = build_generators(cfg, st)
    suite = lemma_identity_suite(st, gens, spacings=cfg.grid.orders)
    l33 = max(suite["lemma33_first"], suite["lemma33_second"])
    checks["lemma33"] = _check(l33, l33 < TOL["lemma33"], TOL["lemma33"])
    order = min(suite["lemma44_order_first"] + suite["lemma44_order_second"])
    checks["lemma44_order"] = _check(order, order >= TOL["lemma44_order"], TOL["lemma44_order"])
    checks["lemma43_margin"] = _check(suite["lemma43_min_margin"],
                                      suite["lemma43_min_margin"] >= TOL["lemma43_margin"],
                                      TOL["lemma43_margin"])
    dual = suite["prop32_dual_route"]
    checks["prop32_dual"] = _check(dual, dual is None or dual < TOL["prop32_dual"], TOL["prop32_dual"])

    chis = [casimir_chi_from_state(st.eos, st.gamma), power_casimir(2), sine_casimir()]
    cas, mass = 0.0, 0.0
    for h in gens:
        p = delta_f_from_h(h, st, with_fields=False)
        total, scale = p.total_mass()
        mass = max(mass, abs(total) / scale)
        for chi in chis:
            cas = max(cas, check_casimir_constraint(p, chi)["relative"])
    checks["casimir"] = _check(cas, cas < TOL["casimir"], TOL["casimir"])
    checks["delta_mass"] = _check(mass, mass < TOL["delta_mass"], TOL["delta_mass"])

    odd = random_generators(st, cfg.sample.count, family=ODD, seed=cfg.sample.seed)
    split_err, uvw_err, ratios, sweep = 0.0, 0.0, [], []
    for i, h in enumerate(odd):
        p = delta_f_from_h(h, st, with_fields=False)
        rep = split(p, h=h)
        split_err = max(split_err, rep.splitting_error)
        uvw_err = max(uvw_err, rep.uvw_error)
        rhs = coercivity_rhs(h, st)["remark"]
        ratio = rep.A / rhs
        ratios.append(ratio)
        sweep.append([cfg.sample.seed + i, st.gamma, rep.A, rep.A1, rep.A2, rhs, ratio,
                      float(np.min(lemma43_margin(h, st)))])
    checks["splitting"] = _check(split_err, split_err < TOL["splitting"], TOL["splitting"])
    checks["splitting_uvw"] = _check(uvw_err, uvw_err < TOL["splitting"], TOL["splitting"])
    checks["coercivity_remark"] = _check(min(ratios), min(ratios) >= 1.0, 1.0)

    exp = energy_casimir_expansion_check(st, odd[0], chis[0], cfg.expansion.epsilons)
    lo, hi = TOL["expansion_ratio"]
    flo, fhi = TOL["expansion_first_order"]
    checks["expansion_ratio"] = _check(list(exp["ratios"]), all(lo <= r <= hi for r in exp["ratios"]),
                                       [lo, hi])
    checks["expansion_first_order"] = _check(list(exp["first_order_ratios"]),
                                             all(flo <= r <= fhi for r in exp["first_order_ratios"]),
                                             [flo, fhi])
    config = cfg.to_dict()
    config.pop("output")                 # reports compare equal across output directories
    report = {"config": config, "state": st.sidecar(), "checks": checks,
              "pass": all(c["pass"] for c in checks.values())}
    return report, sweep


SWEEP_COLUMNS = ("seed", "gamma", "A", "A1", "A2", "rhs_remark", "ratio", "margins")


def cmd_verify(cfg, state_file=None):
    """Run the verification suite; writes ``report.json`` and ``energy_sweep.csv``."""
    st = load_state_file(state_file) if state_file else build_state(cfg)
    if state_file:
        if st.is_vacuum:
            raise NoCompactSupportError("state file describes the vacuum")
        st.quad_order = cfg.grid.quadrature_order
    report, sweep = verification_report(cfg, st)
    io.write_json(_path(cfg, "report.json"), report)
    io.write_csv(_path(cfg, "energy_sweep.csv"), SWEEP_COLUMNS, sweep)
    return report["pass"]


# -- perturb -----------------------------------------------------------------------


def delta_f_at(h, st, r, w, L):
    """``delta f`` at arbitrary points (zero outside the support)."""
    from .perturbation import quadrature_for
    from .phase_space import energy_partials

    quad = quadrature_for(st)
    s = h.sample(quad, with_eta=False)
    integral = quad.velocity_integral(quad.dphi * s.h * quad.w)
    r, w, L = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r, w, L)))
    pr = st.profile(r.ravel())
    mu, lam = pr.mu.reshape(r.shape), pr.lam.reshape(r.shape)
    E, E_r, E_w = energy_partials(st, r, w, L)
    v2 = w * w + L / r**2
    dphi = st.dphi_of(mu, v2)
    _, h_r, h_w = h.partials(r, w, L)
    g = st.gamma
    I = quad.interpolate_radial(integral, r.ravel()).reshape(r.shape)
    lor = np.sqrt(1.0 + g * v2)
    nonlocal_ = 4.0 * math.pi * g**3 * r * I * np.exp(2.0 * mu + lam) * dphi * w * w / lor
    return np.exp(-lam) * dphi * (h_r * E_w - h_w * E_r) + nonlocal_


def _export_grid(st, n=(32, 33, 17)):
    from .phase_space import PhaseGrid

    V0 = float(st.vmax(np.array([0.0]))[0])
    return PhaseGrid.uniform((st.R / n[0], st.R), V0, (st.R * V0) ** 2, n)


def cmd_perturb(cfg):
    """Generator and ``delta f`` on an export grid, radial fields and the energy report."""
    from .energy import split
    from .perturbation import delta_f_from_h
    from .phase_space import KineticField, write_field

    st = build_state(cfg)
    h = build_generators(cfg, st, count=1)[0]
    grid = _export_grid(st)
    R, W, L = grid.mesh()
    meta = {"generator": str(h.expr), "gamma": st.gamma, "nu_ring": st.nu_ring}
    write_field(KineticField(grid, h(R, W, L)), _path(cfg, "generator.json"), _path(cfg, "generator.csv"),
                extra=meta)
    write_field(KineticField(grid, delta_f_at(h, st, R, W, L)), _path(cfg, "delta_f.json"),
                _path(cfg, "delta_f.csv"), extra=meta)
    p = delta_f_from_h(h, st, with_fields=True)
    quad = p.quad
    io.write_csv(_path(cfg, "fields.csv"), ("r", "delta_lambda", "delta_mu", "delta_rho", "delta_p", "delta_j"),
                 zip(quad.r, p.dlam, p.dmu, p.drho, p.dp, p.dj))
    rep = split(p, h=h)
    total, scale = p.total_mass()
    io.write_json(_path(cfg, "energy.json"),
                  {"report": json.loads(rep.to_json()), "delta_mass": abs(total) / scale if scale else 0.0,
                   "generator": str(h.expr)})
    return True


# -- evolve ------------------------------------------------------------------------


MONITOR_COLUMNS = ("t", "A", "constraint_residual", "delta_mass", "h_norm")


def cmd_evolve(cfg):
    """Linearised evolution; ``monitor.csv`` is appended row by row, ``evolve_summary.json`` at the end."""
    from .evolution import dynamical_time, make_system
    from .phase_space import KineticField, write_field

    st = build_state(cfg)
    h = build_generators(cfg, st, count=1)[0]
    kwargs = {"order": cfg.grid.quadrature_order, "inner_iters": cfg.evolve.inner_iters}
    system = make_system(st, cfg.evolve.scheme, **kwargs)
    T_end = cfg.evolve.T_end if cfg.evolve.T_end is not None else dynamical_time(st)
    path = _path(cfg, "monitor.csv")
    if os.path.exists(path):
        os.remove(path)
    dump_every = cfg.evolve.dump_every
    grid = _export_grid(st, (16, 17, 9)) if dump_every else None

    def dump(i, s):
        if dump_every and i % dump_every == 0:
            R, W, L = grid.mesh()
            write_field(KineticField(grid, s(R, W, L)), _path(cfg, f"h_{i:06d}.json"),
                        _path(cfg, f"h_{i:06d}.csv"), extra={"t": s.t, "step": i})

    with io.CsvAppender(path, MONITOR_COLUMNS) as out:
        traj = system.evolve(h, T_end, dt=cfg.evolve.dt, monitors=[out.write], on_state=dump)
    drift = traj.energy_drift
    summary = {"scheme": system.scheme, "dt": traj.dt, "steps": len(traj.t) - 1, "T_end": T_end,
               "t_dyn": system.t_dyn, "energy_drift": drift,
               "max_constraint_residual": max(traj.constraint),
               "max_delta_mass": max(traj.delta_mass), "generator": str(h.expr),
               "drift_pass": drift < TOL["evolve_drift"]}
    io.write_json(_path(cfg, "evolve_summary.json"), summary)
    return summary["drift_pass"]


# -- scan --------------------------------------------------------------------------


def cmd_scan(cfg):
    """Family scan into ``scan.csv``; rows already present are kept and skipped."""
    from .scaling import SCAN_COLUMNS, family_scan

    path = _path(cfg, "scan.csv")
    done = []
    if os.path.exists(path):
        header, rows = io.read_csv(path)
        if header and tuple(header) != SCAN_COLUMNS:
            raise IntegrityError(f"{path} has an unexpected header")
        done = [float(row[0]) for row in rows]
    eos = make_eos(cfg.eos.kind, cfg.eos.k)
    if cfg.nu_ring == 0.0 and cfg.scan.gammas:
        raise NoCompactSupportError("nu_ring = 0 gives the vacuum: no compact support")
    with io.CsvAppender(path, SCAN_COLUMNS) as out:
        family_scan(eos, cfg.nu_ring, cfg.scan.gammas, count=cfg.scan.count, seed=cfg.sample.seed,
                    family=cfg.sample.generator_family, workers=_threads(),
                    done=done, on_record=lambda rec: out.write(rec.row()))
    # keep the file ordered by gamma even when a resumed scan filled gaps
    header, rows = io.read_csv(path)
    rows.sort(key=lambda row: float(row[0]))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    return True


# -- expansion-check -----------------------------------------------------------------


def cmd_expansion_check(cfg):
    """Energy-Casimir expansion remainders for the configured generator."""
    from .energy import energy_casimir_expansion_check

    st = build_state(cfg)
    h = build_generators(cfg, st, count=1)[0]
    chi = casimir_chi_from_state(st.eos, st.gamma)
    res = energy_casimir_expansion_check(st, h, chi, cfg.expansion.epsilons)
    lo, hi = TOL["expansion_ratio"]
    flo, fhi = TOL["expansion_first_order"]
    ok = (all(lo <= r <= hi for r in res["ratios"])
          and all(flo <= r <= fhi for r in res["first_order_ratios"]))
    out = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in res.items()}
    out.update({"generator": str(h.expr), "pass": ok})
    io.write_json(_path(cfg, "expansion.json"), out)
    return ok


COMMANDS = {
    "steady": cmd_steady,
    "verify": cmd_verify,
    "perturb": cmd_perturb,
    "evolve": cmd_evolve,
    "scan": cmd_scan,
    "expansion-check": cmd_expansion_check,
}


def _parser():
    ap = argparse.ArgumentParser(prog="ev-lab", description="Einstein-Vlasov numerical laboratory")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0])
        p.add_argument("config", nargs="?", help="JSON configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key (dot path), e.g. evolve.dt=0.5")
        p.add_argument("--out", help="output directory (same as --set output.dir=...)")
        if name == "verify":
            p.add_argument("--state", help="state sidecar JSON written by 'steady' to verify against")
    return ap


def main(argv=None):
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which matches the config-error code
        return int(exc.code or 0)
    try:
        _apply_threads(_threads())
        overrides = list(args.overrides)
        if args.out:
            overrides.append(f"output.dir={json.dumps(args.out)}")
        cfg = load_config(args.config, overrides)
        fn = COMMANDS[args.command]
        ok = fn(cfg, args.state) if args.command == "verify" else fn(cfg)
    except (ConfigError, ParameterError) as exc:
        print(f"ev-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PhysicsError as exc:
        print(f"ev-lab: physics error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except NumericalToleranceError as exc:
        print(f"ev-lab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EVLabError as exc:  # pragma: no cover - every subclass is handled above
        print(f"ev-lab: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not ok:
        print(f"ev-lab {args.command}: checks failed, see {cfg.output.dir}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
