"""Command-line front end: ``netfd <kind> --config FILE --out DIR --seed N``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
import warnings

import numpy as np

from . import kinetics, renorm
from .config import KINDS, ScenarioConfig, load_config
from .errors import ConfigurationError, IntegrationError, SingularityError
from .liouville import BOSON, ModeSpec, algebra_suite, build_basis
from .output import RunSummary, write_csv, write_summary
from .perturbation import InteractionModel, ladder_vertex
from .schedule import Curve, ThermalSchedule
from .tfd import delta_kernel, propagator_delta, two_point_direct
from .unperturbed import (
    conserved_combination_residual,
    evolve_lvn,
    geometric_distribution,
    geometric_residual,
    geometric_state,
    mode_distribution,
    product_state,
    q_closed_form,
    q_norm2,
    q_vector,
)

log = logging.getLogger("netfd")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4


# -- helpers -------------------------------------------------------------


def _schedule_curve(cfg: ScenarioConfig, j: int = 0) -> Curve:
    kind = cfg.get("schedule", "kind", "static")
    t_end = cfg.number("schedule", "t_end", 5.0)
    if kind == "static":
        ns = cfg.floats("schedule", "n", (1.0,))
        return Curve.constant(ns[min(j, len(ns) - 1)])
    if kind == "relaxing":
        return Curve.relaxing(cfg.number("schedule", "final"), cfg.number("schedule", "amplitude"),
                              cfg.number("schedule", "rate"), 0.0, t_end)
    raise ConfigurationError(f"[schedule] kind: unknown schedule {kind!r}")


def _grid(cfg: ScenarioConfig) -> np.ndarray:
    steps = int(cfg.number("schedule", "steps", 11))
    if steps < 2:
        raise ConfigurationError("[schedule] steps must be >= 2")
    return np.linspace(0.0, cfg.number("schedule", "t_end", 5.0), steps)


def _single_boson(cfg: ScenarioConfig):
    m = cfg.modes[0]
    if m.sigma != BOSON:
        raise ConfigurationError("this run needs a boson as the first mode")
    return build_basis([m], cfg.max_fock_dim)


def _model(cfg: ScenarioConfig, coupling: float | None = None) -> InteractionModel:
    sigmas = tuple(m.sigma for m in cfg.modes)
    energies = tuple(m.bare_energy for m in cfg.modes)
    lam = cfg.number("interaction", "coupling", 0.1) if coupling is None else coupling
    kind = cfg.get("interaction", "model", "ladder")
    if kind == "ladder":
        if len(sigmas) != 3:
            raise ConfigurationError("[interaction] model = ladder needs exactly three modes")
        return InteractionModel(lam, ladder_vertex(3, cfg.number("interaction", "strength", 1.0)), sigmas, energies)
    if kind == "table":
        k = len(sigmas)
        v = np.zeros((k,) * 4, dtype=complex)
        for key, val in cfg.sections.get("interaction.vertex", {}).items():
            try:
                idx = tuple(int(x) for x in key.split(","))
                v[idx] = complex(val.replace(" ", ""))
            except (ValueError, IndexError) as exc:
                raise ConfigurationError(f"[interaction.vertex] {key} = {val}: {exc}") from exc
        return InteractionModel(lam, v, sigmas, energies)
    raise ConfigurationError(f"[interaction] model: unknown model {kind!r}")


def _path(out: str, name: str) -> str:
    return os.path.join(out, name)


# -- runners -------------------------------------------------------------


def run_verify_algebra(cfg: ScenarioConfig, out: str, summary: RunSummary) -> None:
    rng = np.random.default_rng(cfg.seed)
    samples = int(cfg.number("algebra", "samples", 3))
    cases = [("config", list(cfg.modes))]
    cases += [(f"boson{c}", [ModeSpec.boson(1.0, c)]) for c in cfg.ints("algebra", "boson_cutoffs", ())]
    cases.append(("fermion", [ModeSpec.fermion(1.0)]))
    rows = []
    for label, modes in cases:
        res = algebra_suite(build_basis(modes, cfg.max_fock_dim), rng, samples)
        for name, val in res.items():
            summary.add(f"{label}.{name}", val, cfg.tol_exact)
            rows.append((label, name, val))
    summary.files.append(write_csv(_path(out, "algebra.csv"), ("case", "identity", "residual"), rows,
                                   summary.config_hash))


def run_evolve(cfg: ScenarioConfig, out: str, summary: RunSummary) -> None:
    basis = _single_boson(cfg)
    curve = _schedule_curve(cfg)
    sched = ThermalSchedule((BOSON,), (curve,), (basis.modes[0].bare_energy,))
    grid = _grid(cfg)
    sched.check_occupations(grid)
    cutoff = basis.modes[0].cutoff
    with warnings.catch_warnings():
        warnings.simplefilter("error" if cfg.flag("evolve", "strict_tail", False) else "default")
        rho0 = geometric_state(basis, [curve(grid[0])])
    traj = evolve_lvn(rho0, sched, grid, rtol=cfg.rtol, atol=cfg.atol)
    rows, worst = [], 0.0
    for t, st in zip(grid, traj):
        p = mode_distribution(st, 0)
        r = geometric_residual(p, curve(t))
        worst = max(worst, r)
        rows.append((t, curve(t), float(np.arange(p.size) @ p), r, *p))
    header = ("t", "n", "n_measured", "geometric_residual", *[f"p_{m}" for m in range(cutoff + 1)])
    summary.files.append(write_csv(_path(out, "evolve.csv"), header, rows, summary.config_hash))
    summary.add("geometric_preservation", worst, cfg.tol_integrated)

    # deliberately non-geometric start
    rng = np.random.default_rng(cfg.seed)
    eps = cfg.number("evolve", "perturbation", 0.05)
    p0 = geometric_distribution(curve(grid[0]), BOSON, cutoff)
    p0 = p0 * (1 + eps * rng.standard_normal(p0.size))
    if np.any(p0 <= 0):
        raise ConfigurationError("[evolve] perturbation too large: negative probabilities")
    p0 /= p0.sum()
    traj = evolve_lvn(product_state(basis, [p0]), sched, grid, rtol=cfg.rtol, atol=cfg.atol)
    q0 = q_vector(p0, curve(grid[0]))
    _, c, lam = q_closed_form(q0, curve(grid[0]), curve(grid[0]))
    rows, law_err, last = [], 0.0, 0.0
    for t, st in zip(grid, traj):
        p = mode_distribution(st, 0)
        q = q_vector(p, curve(t))
        measured = float(q @ q)
        law = q_norm2(c, lam, curve(grid[0]), curve(t))
        law_err = max(law_err, abs(measured - law))
        last = geometric_residual(p, curve(t))
        rows.append((t, curve(t), last, measured, law))
    summary.files.append(write_csv(_path(out, "evolve_perturbed.csv"),
                                   ("t", "n", "geometric_residual", "q_norm2", "q_norm2_law"), rows,
                                   summary.config_hash))
    summary.add("perturbed_not_geometric", last, 1e-4, ">")
    summary.add("q_norm_law", law_err, cfg.tol_integrated)

    if cfg.flag("evolve", "conserved", True):
        cgrid = np.linspace(grid[0], grid[-1], int(cfg.number("evolve", "conserved_steps", 6)))
        rep = conserved_combination_residual(basis, sched, cgrid, check_propagator=False)
        gamma = cfg.number("evolve", "gamma_control", 0.3)
        ctrl = conserved_combination_residual(basis, sched.with_gamma((gamma,)), cgrid, form="general",
                                              check_propagator=False)
        rows = [(t, rep.combination[i, 0], rep.difference[i, 0], ctrl.left_vacuum[i, 0])
                for i, t in enumerate(cgrid)]
        summary.files.append(write_csv(_path(out, "conserved.csv"),
                                       ("t", "combination_rate", "difference_rate", "control_left_vacuum_rate"),
                                       rows, summary.config_hash))
        summary.add("conserved_combination", float(np.max(rep.combination)), cfg.tol_integrated)
        summary.add("conserved_difference", float(np.max(rep.difference)), cfg.tol_integrated)
        summary.add("gamma_control_violation", float(np.max(ctrl.left_vacuum)), 1e-3, ">")


def run_propagators(cfg: ScenarioConfig, out: str, summary: RunSummary) -> None:
    basis = _single_boson(cfg)
    curve = _schedule_curve(cfg)
    sched = ThermalSchedule((BOSON,), (curve,), (basis.modes[0].bare_energy,))
    grid = _grid(cfg)
    sched.check_occupations(grid)
    sandwich = delta_kernel(sched, 0, grid, grid)
    direct = two_point_direct(basis, sched, 0, 0, grid, grid)
    diff = np.abs(sandwich.values - direct.values)
    rows = []
    for a, t1 in enumerate(grid):
        for c, t2 in enumerate(grid):
            v = sandwich.values[a, c].ravel()
            rows.append((t1, t2, *[x for z in v for x in (z.real, z.imag)], float(diff[a, c].max())))
    header = ("t1", "t2", *[f"{p}_delta{mu}{nu}" for mu in (1, 2) for nu in (1, 2) for p in ("re", "im")],
              "direct_difference")
    summary.files.append(write_csv(_path(out, "propagators.csv"), header, rows, summary.config_hash))
    summary.add("sandwich_vs_direct", float(diff.max()), cfg.number("propagators", "tolerance", 1e-6))
    mismatches = 0
    for a, t1 in enumerate(grid):
        for c, t2 in enumerate(grid):
            probe = sched.perturbed_after(max(t1, t2), 0.25)
            if not np.array_equal(propagator_delta(probe, 0, t1, t2), sandwich.values[a, c]):
                mismatches += 1
    summary.add("thermal_causality_mismatches", mismatches, 0.5)


def run_transport(cfg: ScenarioConfig, out: str, summary: RunSummary) -> None:
    model = _model(cfg)
    k = model.n_modes
    mode = cfg.get("transport", "mode", "markovian")
    n0 = np.array(cfg.floats("transport", "n0", ()))
    if n0.size != k:
        raise ConfigurationError(f"[transport] n0 needs {k} values")
    om = np.array(model.energies)
    broadening = cfg.number("transport", "broadening", kinetics.default_broadening(om))
    t_mem = cfg.number("transport", "memory_window", kinetics.default_memory(broadening))
    traj = kinetics.relax(model, n0, om, t_end=cfg.number("transport", "t_end", 200.0), mode=mode,
                          dt=cfg.number("transport", "dt", 0.05), broadening=broadening, t_mem=t_mem,
                          output_every=cfg.number("transport", "output_every", 1.0),
                          prehistory=cfg.get("transport", "prehistory", "constant"))
    rows = [(t, *n, *r, g) for t, n, r, g in zip(traj.times, traj.occupations, traj.rates, traj.equilibrium_gap)]
    header = ("t", *[f"n_{j + 1}" for j in range(k)], *[f"ndot_{j + 1}" for j in range(k)], "equilibrium_gap")
    summary.files.append(write_csv(_path(out, "transport.csv"), header, rows, summary.config_hash))
    occ = traj.occupations
    summary.add("number_drift", float(np.max(np.abs(occ.sum(1) - occ[0].sum()))), cfg.tol_integrated)
    summary.add("energy_drift", float(np.max(np.abs(occ @ om - occ[0] @ om))), cfg.tol_integrated)
    fixed = 0.0
    if len(set(model.sigmas)) == 1:
        for beta in cfg.floats("transport", "fixed_point_betas", (0.5, 1.0, 2.0)):
            nb = renorm.distribution(om, beta, model.sigmas[0])
            fixed = max(fixed, float(np.max(np.abs(kinetics.markovian_collision(nb, model, om, broadening)))))
        summary.add("collision_fixed_point", fixed, cfg.tol_exact)
    summary.add("asymptote_error", traj.asymptote_error(), cfg.number("transport", "asymptote_tolerance", 1e-4))
    if traj.equilibrium is not None:
        log.info("equilibrium beta=%.12g mu=%.12g", traj.equilibrium.beta, traj.equilibrium.mu)


def run_renorm_compare(cfg: ScenarioConfig, out: str, summary: RunSummary) -> None:
    lams = np.array(cfg.floats("renorm", "lambdas", (0.0025, 0.005, 0.01, 0.02)))
    if lams.size < 2 or np.any(lams <= 0):
        raise ConfigurationError("[renorm] lambdas needs at least two positive values")
    beta = cfg.number("renorm", "beta", 1.0)
    broadening = cfg.number("renorm", "broadening", 0.05)
    base = _model(cfg, 0.0)
    om = np.array(base.energies)
    k = base.n_modes
    j = int(cfg.number("renorm", "satellite_mode", 1))
    weight = cfg.number("renorm", "satellite_weight", 0.5)
    offset = cfg.number("renorm", "satellite_offset", -0.2)
    width = cfg.number("renorm", "satellite_width", 1e-3)
    lo = max(1e-3, min(om) - 1.0)
    kgrid = np.arange(lo, max(om) + 1.0, width / 10)

    shifts, reports = [], []
    rows = []
    for lam in lams:
        w = renorm.equilibrium_shifts(base.with_coupling(lam), beta, broadening)
        sm = renorm.satellite_model(om[j], lam**2 * weight, om[j] + offset, beta, kgrid, width, base.sigmas[j])
        rep = renorm.diagonalization_inconsistency_demo(sm, half_width=0.5 * abs(offset))
        shifts.append(w - om)
        reports.append(rep)
        rows.append((lam, *w, *(w - om), rep.n_heisenberg, rep.n_onshell, rep.gap))
    shifts = np.array(shifts)
    header = ("lambda", *[f"omega_{i + 1}" for i in range(k)], *[f"shift_{i + 1}" for i in range(k)],
              "n_heisenberg", "n_onshell", "gap")
    summary.files.append(write_csv(_path(out, "renorm_sweep.csv"), header, rows, summary.config_hash))
    for i in range(k):
        if np.all(shifts[:, i] != 0):
            summary.add(f"shift_exponent_{i + 1}", abs(renorm.scaling_exponent(lams, shifts[:, i]) - 2), 0.1)
    gaps = [r.gap for r in reports]
    summary.add("gap_positive", min(gaps), 0.0, ">")
    summary.add("gap_exponent", abs(renorm.scaling_exponent(lams, gaps) - 2), 0.2)
    summary.add("onshell_s12_equilibrium", max(abs(r.s12_onshell) for r in reports), 1e-10)
    summary.add("onshell_re_s11_equilibrium", max(abs(r.re_s11_onshell) for r in reports), 1e-10)

    # time-domain conditions: thermal history on the resonant ladder, and the ndot identity
    res_model = base.with_coupling(lams[-1])
    res_model = InteractionModel(res_model.coupling, res_model.vertex, res_model.sigmas,
                                 tuple(float(x) for x in np.arange(1, k + 1) * om[0]))
    res_om = np.array(res_model.energies)
    curves = [Curve.constant(x) for x in res_om]
    t_mem = kinetics.default_memory(broadening)
    dt = cfg.number("renorm", "dt", 0.1)
    thermal = kinetics.constant_history(res_model, renorm.distribution(res_om, beta, res_model.sigmas[0]),
                                        curves, t_mem, dt)
    ndot_eq, omega_eq = 0.0, 0.0
    for i in range(k):
        r = renorm.new_renorm_step(thermal, res_model, curves, i, broadening, t_mem)
        ndot_eq = max(ndot_eq, abs(r.ndot))
        omega_eq = max(omega_eq, abs(r.omega - res_om[i]), r.re_s11_residual)
    summary.add("new_condition_equilibrium_ndot", ndot_eq, 1e-10)
    summary.add("new_condition_equilibrium_energy", omega_eq, 1e-10)
    model = base.with_coupling(lams[-1])
    curves = [Curve.constant(x) for x in om]
    n_start = renorm.distribution(om, beta, base.sigmas[0]) * np.linspace(1.5, 0.5, k)
    state = kinetics.constant_history(model, n_start, curves, t_mem, dt)
    for _ in range(int(cfg.number("renorm", "history_steps", 20))):
        rate = kinetics.transport_rhs(state, model, curves, broadening, t_mem)
        t = state.t + dt
        state.push(t, state.n + dt * rate, kinetics.phase_of(curves, t, 0.0), model)
    summary.add("ndot_identity", renorm.ndot_identity_residual(state, model, curves, broadening, t_mem), 1e-10)


RUNNERS = {
    "verify-algebra": run_verify_algebra,
    "evolve": run_evolve,
    "propagators": run_propagators,
    "transport": run_transport,
    "renorm-compare": run_renorm_compare,
}


def run(cfg: ScenarioConfig, out: str) -> RunSummary:
    summary = RunSummary(cfg.config_hash)
    start = time.perf_counter()
    os.makedirs(out, exist_ok=True)
    RUNNERS[cfg.kind](cfg, out, summary)
    summary.files.append(_path(out, "checks.jsonl"))
    write_summary(_path(out, "checks.jsonl"), summary)
    summary.wall_time = time.perf_counter() - start
    return summary


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netfd", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind)
        s.add_argument("--config", default=None, help="INI scenario file (defaults are built in)")
        s.add_argument("--out", default=os.path.join("runs", kind), help="output directory")
        s.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.kind, args.config, args.seed)
        summary = run(cfg, args.out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, SingularityError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    width = max(len(c.name) for c in summary.checks) if summary.checks else 0
    for c in summary.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.residual:.3e} {c.relation} {c.threshold:.1e}")
    print(f"config {summary.config_hash[:12]}  {len(summary.files)} files  wall {summary.wall_time:.2f} s")
    return EXIT_OK if summary.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
