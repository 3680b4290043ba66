"""Acceptance suite: the eleven primary criteria at their stated tolerances and time limits.

Each test writes one PASS/FAIL line to the terminal before asserting, so the
summary appears in ``pytest -v`` output whether or not the criterion holds.
"""
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from fsisplit import FluidLaw, Laws, ProblemSetup, ReferenceGeometry, Resolution, ThickLaw, ThinLaw
from fsisplit.cli import simulate
from fsisplit.config import parse_config
from fsisplit.constitutive import certify_constants, check_constants, monotonicity_gaps
from fsisplit.discretization.assembly import structure_constraint_basis, structure_matrices
from fsisplit.energy import check_uniform_bounds, smooth_test_triple, weak_form_residual
from fsisplit.scheme import SchemeConfig, fluid_substep, initial_state, run, structure_substep
from fsisplit.studies import (
    generator_dissipativity,
    mode_state,
    one_mode_error,
    operator_coercivity,
    operator_monotonicity,
    probe_operator,
    refinement_study,
    structure_mode,
)
from dense_reference import (
    admissible_basis,
    cubic_mode_bisection,
    dense_p2_solve,
    dense_residual,
    one_by_one_instance,
    quartic_integral,
)
from helpers import CRITERION, make_setup


def emit(request, number, title, ok, detail, seconds, limit=None):
    timing = f"{seconds:.2f} s" + (f" of {limit:g} s" if limit else "")
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {title}: {detail} ({timing})"
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None:
        reporter.write_line("")
        reporter.write_line(line)
    else:
        print(line)


# 1 -------------------------------------------------------------------------


def test_criterion_01_constitutive_certification(request):
    t0 = time.perf_counter()
    notes, ok = [], True
    for p in (2.5, 3.0, 4.0):
        law = certify_constants(FluidLaw(p=p), sample_radius=10.0, n_samples=10_000)
        bad = check_constants(law, sample_radius=10.0, n_samples=10_000)
        gaps = monotonicity_gaps(p, 1000, seed=0)
        ok &= not bad and bool(np.all(gaps > 0))
        notes.append(f"p={p:g} k=({law.kappa1:g},{law.kappa2:g},{law.kappa3:.4g}) min gap {gaps.min():.2e}")
    dt = time.perf_counter() - t0
    ok &= dt < 5.0
    emit(request, 1, "constitutive certification", ok, "; ".join(notes), dt, 5)
    assert ok


# 2 -------------------------------------------------------------------------


def test_criterion_02_structure_oracles(request):
    t0 = time.perf_counter()
    setup = make_setup()
    err_mode = max(one_mode_error(setup, dt) for dt in (0.1, 0.01))

    gamma, c0, cdot, dt = 50.0, 0.4, -0.9, 0.05
    cubic = replace(setup, laws=Laws(FluidLaw(), ThickLaw(), ThinLaw("cubic", gamma)))
    sp_ = cubic.spaces
    _, phi = structure_mode(sp_, cubic.laws)
    phi = phi / np.abs(phi).max()
    half, _ = structure_substep(mode_state(sp_, cubic.laws, phi, c0, cdot),
                                SchemeConfig(dt=dt, newton_tol=1e-14), cubic, basis=phi[:, None])
    M, K = structure_matrices(sp_, cubic.laws.thick)
    Y = structure_constraint_basis(sp_) @ phi
    q = quartic_integral(Y[: 2 * sp_.n_t].reshape(-1, 2), sp_)
    c = cubic_mode_bisection(float(Y @ (M @ Y)), float(Y @ (K @ Y)), q, gamma, c0 + dt * cdot, dt)
    ref = mode_state(sp_, cubic.laws, phi, c, (c - c0) / dt)
    err_cubic = max(float(np.abs(getattr(half, k) - getattr(ref, k)).max()) for k in ("beta", "v", "d", "V"))
    seconds = time.perf_counter() - t0
    ok = err_mode <= 1e-12 and err_cubic <= 1e-12 and seconds < 1.0
    emit(request, 2, "structure substep oracles", ok,
         f"one-mode {err_mode:.2e}, cubic one-DOF {err_cubic:.2e} (tol 1e-12)", seconds, 1)
    assert ok


# 3 -------------------------------------------------------------------------


def test_criterion_03_fluid_oracles(request):
    t0 = time.perf_counter()
    sp_, m_old, m_new, half, load = one_by_one_instance()

    def solve(p):
        setup = ProblemSetup(laws=Laws(fluid=FluidLaw(p=p, alpha=0.7, reduction=p == 2.0)))
        setup._spaces = sp_
        return fluid_substep(half, m_old, m_new, SchemeConfig(dt=0.05, picard_tol=1e-14, max_iters=100),
                             setup, load)[0]

    new4 = solve(4.0)
    x4 = np.concatenate([new4.u.ravel(), new4.v.ravel()])
    R, C = dense_residual(sp_, m_old, m_new, half, x4, new4.pi, 4.0, 0.7, 0.05, load)
    N = admissible_basis(sp_, m_new)
    res4 = max(float(np.abs(N.T @ R).max()), float(np.abs(C).max()))

    new2 = solve(2.0)
    uv, pi, _ = dense_p2_solve(sp_, m_old, m_new, half, 0.7, 0.05, load)
    diff2 = max(float(np.abs(np.concatenate([new2.u.ravel(), new2.v.ravel()]) - uv).max()),
                float(np.abs(new2.pi - pi).max()))
    seconds = time.perf_counter() - t0
    ok = res4 < 1e-10 and diff2 <= 1e-12 and seconds < 5.0
    emit(request, 3, "fluid substep oracles", ok,
         f"p=4 dense residual {res4:.2e} (tol 1e-10), p=2 vs dense LU {diff2:.2e} (tol 1e-12)", seconds, 5)
    assert ok


# 4 and 5 -------------------------------------------------------------------

ENERGY_CASES = [(0.0, 0.0), (0.0, 2.0), (10.0, 0.0), (10.0, 2.0)]


@pytest.fixture(scope="module")
def energy_runs():
    t0 = time.perf_counter()
    out = {}
    for gamma, pulse in ENERGY_CASES:
        setup = make_setup(p=3.0, cubic=gamma, pulse=pulse, res=CRITERION)
        s0 = initial_state(setup.spaces, 0.02, velocity=0.1, seed=7, perturbation=0.01)
        out[(gamma, pulse)] = run(SchemeConfig(dt=0.01, n_steps=100), setup, s0)
    return out, time.perf_counter() - t0


def test_criterion_04_energy_inequalities(request, energy_runs):
    runs, seconds = energy_runs
    ok, notes = seconds < 120.0, []
    for (gamma, pulse), res in runs.items():
        rep = res.report
        s = rep.column("struct_slack")
        f = rep.column("fluid_slack")
        good = (len(rep.steps) == 100 and res.termination == "HORIZON"
                and bool(np.all(s >= -10 * rep.newton_tol)) and bool(np.all(f >= -10 * rep.picard_tol)))
        ok &= good
        notes.append(f"f={'cubic' if gamma else '0'},P={'pulse' if pulse else '0'}: "
                     f"min slacks {s.min():.1e}/{f.min():.1e}")
    emit(request, 4, "energy inequalities", ok, "; ".join(notes), seconds, 120)
    assert ok


def test_criterion_05_uniform_bounds(request, energy_runs):
    runs, _ = energy_runs
    t0 = time.perf_counter()
    ok, notes = True, []
    for (gamma, pulse), res in runs.items():
        rep = res.report
        summary = check_uniform_bounds(rep)
        bound = rep.e0 + rep.measured_constant * (rep.forcing_l2 + 1.0)
        tol = rep.tolerance("fluid", bound) * len(rep.steps)
        prefixes = bool(np.all(rep.e_total <= bound + tol)) and bool(
            np.all(rep.cumulative_dissipation <= bound + tol))
        ok &= summary.ok and prefixes
        notes.append(f"max(E, sum D) {max(rep.e_total.max(), rep.cumulative_dissipation[-1]):.3e} "
                     f"<= {bound:.3e}")
    emit(request, 5, "uniform energy bounds", ok, "; ".join(notes), time.perf_counter() - t0)
    assert ok


# 6 -------------------------------------------------------------------------


def test_criterion_06_operator_probes(request):
    t0 = time.perf_counter()
    ok, notes = True, []
    for res in (Resolution(4, 2, 4, 2, 4), Resolution(8, 4, 8, 2, 8), CRITERION):
        setup = make_setup(p=3.0, res=res)
        op, _, _ = probe_operator(setup, 0.01, seed=11)
        gaps = operator_monotonicity(op, 100, seed=11)
        delta2 = operator_coercivity(op, 100, seed=12)
        ok &= bool(gaps.min() > 0) and delta2 > 0
        notes.append(f"{res.nz}x{res.nr}: min gap {gaps.min():.2e}, delta2 {delta2:.2e}")
    seconds = time.perf_counter() - t0
    ok &= seconds < 30.0
    emit(request, 6, "monotone operator probes", ok, "; ".join(notes), seconds, 30)
    assert ok


# 7 -------------------------------------------------------------------------


def test_criterion_07_structure_dissipativity(request):
    t0 = time.perf_counter()
    setup = make_setup(res=CRITERION)
    rel = generator_dissipativity(setup.spaces, Laws(thick=ThickLaw(1.0, 1.0)), 100, seed=0)
    seconds = time.perf_counter() - t0
    ok = rel.max() <= 1e-12 and seconds < 5.0
    emit(request, 7, "structure generator dissipativity", ok,
         f"max relative <AU,U> over 100 states {rel.max():.2e} (tol 1e-12)", seconds, 5)
    assert ok


# 8 -------------------------------------------------------------------------


def test_criterion_08_temporal_convergence(request):
    t0 = time.perf_counter()
    cfg = parse_config(
        "resolution: {nz: 16, nr: 8, nz_thick: 16, nr_thick: 4, n_thin: 8}\n"
        "fluid: {p: 2.0, reduction: true}\n"
        "scheme: {dt: 0.02, n_steps: 20}\n"
        "initial: {amplitude: 0.02, velocity: 0.0}\n"
    )
    table = refinement_study(cfg, levels=4)
    seconds = time.perf_counter() - t0
    ok = (all(0.7 <= o <= 1.3 for o in table.orders) and table.monotone
          and table.terminations == ["HORIZON"] * 4 and seconds < 300.0)
    emit(request, 8, "temporal convergence", ok,
         "differences " + ", ".join(f"{d:.3e}" for d in table.differences)
         + "; orders " + ", ".join(f"{o:.3f}" for o in table.orders) + " (band [0.7, 1.3])", seconds, 300)
    assert ok


# 9 -------------------------------------------------------------------------


def test_criterion_09_weak_form_defect(request):
    t0 = time.perf_counter()
    law = certify_constants(FluidLaw(p=3.0))
    from fsisplit.signals import Signal

    setup = ProblemSetup(ReferenceGeometry(), CRITERION, Laws(law, thin=ThinLaw("cubic", 1.0)),
                         Signal("pulse", 1.0, 0.0, 0.5))
    s0 = initial_state(setup.spaces, 0.05)
    T = 0.4
    triple = smooth_test_triple(setup.spaces, T)
    defects = []
    for k in range(4):
        dt = 0.05 / 2**k
        res = run(SchemeConfig(dt=dt, n_steps=int(round(T / dt))), setup, s0, keep_maps=True)
        defects.append(weak_form_residual(res.states, res.halves, res.maps, setup, triple, dt, res.loads))
    orders = [float(np.log2(abs(a / b))) for a, b in zip(defects, defects[1:])]
    seconds = time.perf_counter() - t0
    ok = all(0.7 <= o <= 1.3 for o in orders) and seconds < 300.0
    emit(request, 9, "weak-form defect decay", ok,
         "defects " + ", ".join(f"{d:.3e}" for d in defects)
         + "; orders " + ", ".join(f"{o:.3f}" for o in orders) + " (band [0.7, 1.3])", seconds, 300)
    assert ok


# 10 ------------------------------------------------------------------------


def test_criterion_10_degeneration(request):
    t0 = time.perf_counter()
    cfg = parse_config(
        "resolution: {nz: 8, nr: 4, nz_thick: 8, nr_thick: 2, n_thin: 8}\n"
        "boundary:\n  P_in: {kind: constant, value: 200.0}\n  P_out: {kind: constant, value: 200.0}\n"
        "scheme: {dt: 0.01, n_steps: 200, fluid_solver: auto}\n"
    )
    setup = cfg.problem_setup()
    scheme = cfg.scheme_config()
    res = run(scheme, setup, cfg.initial_state(setup))
    seconds = time.perf_counter() - t0
    failures = res.report.inequality_failures()
    ok = (res.termination == "DEGENERATE" and res.monitor.min_jacobian <= scheme.eps_j
          and not failures and seconds < 60.0)
    emit(request, 10, "degeneration handling", ok,
         f"{res.termination} after {len(res.report.steps)} completed steps, min J "
         f"{res.monitor.min_jacobian:.3e} <= {scheme.eps_j:g}, {len(failures)} prior inequality failures",
         seconds, 60)
    assert ok


# 11 ------------------------------------------------------------------------


def test_criterion_11_determinism(request, tmp_path):
    t0 = time.perf_counter()
    text = (
        "resolution: {nz: 16, nr: 8, nz_thick: 16, nr_thick: 4, n_thin: 8}\n"
        "thin: {nonlinearity: cubic, gamma: 10.0}\n"
        "boundary:\n  P_in: {kind: pulse, value: 2.0, start: 0.0, width: 0.2}\n"
        "scheme: {dt: 0.01, n_steps: 20}\n"
        "initial: {amplitude: 0.02, velocity: 0.1, perturbation: 0.01}\n"
        "seed: 7\n"
    )
    blobs = []
    for name in ("a", "b"):
        cfg = parse_config(text).with_overrides(directory=str(tmp_path / name))
        assert simulate(cfg) == 0
        blobs.append((tmp_path / name / "energy.csv").read_bytes())
    seconds = time.perf_counter() - t0
    ok = blobs[0] == blobs[1] and len(blobs[0].splitlines()) == 21
    emit(request, 11, "determinism", ok,
         f"energy CSVs {'byte-identical' if ok else 'differ'} ({len(blobs[0])} bytes each)", seconds)
    assert ok


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(pytest.main([os.path.abspath(__file__), "-v"]))
