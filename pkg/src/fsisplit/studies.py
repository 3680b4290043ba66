"""Refinement studies, operator probes and the verification suites behind ``fsisplit verify``."""
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import CertificationError, FluidLaw, ThinLaw, certify_constants, check_constants
from .constitutive import monotonicity_gaps as pointwise_gaps
from .discretization.assembly import (
    assemble_fluid_operator,
    assemble_mass,
    scatter,
    structure_constraint_basis,
    structure_matrices,
    thick_stiffness,
    thin_matrices,
    vector_dofs,
)
from .energy import check_uniform_bounds
from .geometry import harmonic_extension
from .scheme import (
    CoupledState,
    Laws,
    ProblemSetup,
    SchemeConfig,
    initial_state,
    run,
    solve_fluid,
    structure_substep,
)


def worker_count() -> int:
    """Parallel jobs for refinement levels, from FSISPLIT_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("FSISPLIT_THREADS", "1")))
    except ValueError:
        return 1


# --- state norms -----------------------------------------------------------


def state_norm(fields: dict, spaces) -> float:
    """Reference-domain norm of (u, beta, v, d, V): L2 for velocities, H2 for beta, H1 for d.

    Missing keys contribute nothing, so a subset such as ``{beta, d}`` is allowed.
    """
    tm = thin_matrices(spaces)
    q = lambda a, M: float(np.einsum("ic,ic->", a, M @ a))
    Ms = assemble_mass(spaces, "thick")
    total = 0.0
    if "u" in fields:
        total += q(fields["u"], assemble_mass(spaces, "velocity"))
    if "v" in fields:
        total += q(fields["v"], tm["mass"])
    if "V" in fields:
        total += q(fields["V"], Ms)
    if "beta" in fields:
        total += q(fields["beta"], tm["mass"] + tm["slope"] + tm["bending"])
    if "d" in fields:
        Ks = thick_stiffness(spaces, Laws().thick)
        total += q(fields["d"], Ms) + float(fields["d"].ravel() @ (Ks @ fields["d"].ravel()))
    return float(np.sqrt(max(total, 0.0)))


# --- refinement ------------------------------------------------------------


@dataclass
class RefinementTable:
    dts: list
    differences: list  # |X_{k+1} - X_k| at T, one per consecutive pair
    orders: list  # log2 of consecutive difference ratios
    seconds: float = 0.0
    terminations: list = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        d = self.differences
        return all(b < a for a, b in zip(d, d[1:])) or not any(d)

    def to_csv(self) -> str:
        lines = ["level,dt,difference,order"]
        for k, dt in enumerate(self.dts):
            diff = self.differences[k - 1] if k >= 1 else float("nan")
            order = self.orders[k - 2] if k >= 2 else float("nan")
            lines.append(f"{k},{dt:.17g},{diff:.17g},{order:.17g}")
        return "\n".join(lines) + "\n"


def _level_job(args):
    cfg, setup, state0 = args
    res = run(cfg, setup, state0)
    return res.final, res.termination


def refinement_study(config, levels: int = 4, workers: int | None = None) -> RefinementTable:
    """Run ``config`` at dt, dt/2, ..., dt/2^(levels-1) over the same horizon.

    ``config`` is a RunConfig or a (SchemeConfig, ProblemSetup, initial state) triple.
    """
    if levels < 3:
        raise ValueError("a refinement study needs at least 3 levels")
    if isinstance(config, tuple):
        cfg0, setup, state0 = config
    else:
        cfg0, setup = config.scheme_config(), config.problem_setup()
        state0 = config.initial_state(setup)
    jobs = [(replace(cfg0, dt=cfg0.dt / 2**k, n_steps=cfg0.n_steps * 2**k), setup, state0)
            for k in range(levels)]
    workers = worker_count() if workers is None else workers
    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            out = list(ex.map(_level_job, jobs))
    else:
        out = [_level_job(j) for j in jobs]
    finals = [o[0] for o in out]
    sp_ = setup.spaces
    diffs = [state_norm(b - a, sp_) for a, b in zip(finals, finals[1:])]
    orders = [float(np.log2(a / b)) if a > 0 and b > 0 else float("nan")
              for a, b in zip(diffs, diffs[1:])]
    return RefinementTable([j[0].dt for j in jobs], diffs, orders, time.perf_counter() - t0,
                           [o[1] for o in out])


def local_order(cfg: SchemeConfig, setup: ProblemSetup, state0: CoupledState, halvings: int = 3,
                fields: tuple = ("beta", "d")):
    """Richardson estimate of the one-step (local) error order from ``state0``.

    Compares one step of size dt/2^k with two steps of size dt/2^(k+1) in the
    given fields. The displacements (beta, d) have local order 2. The
    velocities are reset by the kinematic coupling in every fluid substep and
    show an O(dt) one-step discrepancy that does not accumulate.
    """
    errs = []
    for k in range(halvings):
        dt = cfg.dt / 2**k
        one = run(replace(cfg, dt=dt, n_steps=1), setup, state0).final
        two = run(replace(cfg, dt=dt / 2, n_steps=2), setup, state0).final
        diff = two - one
        errs.append(state_norm({k: diff[k] for k in fields}, setup.spaces))
    orders = [float(np.log2(a / b)) for a, b in zip(errs, errs[1:])]
    return errs, orders


# --- operator probes --------------------------------------------------------


def probe_operator(setup: ProblemSetup, dt: float = 0.01, amplitude: float = 0.02, seed: int = 0):
    """A fluid-substep operator on a curved geometry with a moving map and a random advecting field."""
    sp_ = setup.spaces
    s0 = initial_state(sp_, amplitude, velocity=0.0, seed=seed, perturbation=0.2 * amplitude)
    rng = np.random.default_rng(seed)
    s0 = replace(s0, u=0.1 * rng.standard_normal(s0.u.shape))
    amap_old = harmonic_extension(s0.beta, sp_)
    s1 = initial_state(sp_, 1.1 * amplitude, velocity=0.0, seed=seed, perturbation=0.2 * amplitude)
    amap_new = harmonic_extension(s1.beta, sp_)
    half = replace(s0, beta=s1.beta, v=(s1.beta - s0.beta) / dt)
    return assemble_fluid_operator(half, amap_old, amap_new, setup.laws.fluid, dt), amap_old, amap_new


def _random_admissible(op, rng, n: int):
    scales = 10.0 ** rng.uniform(-2, 1.5, n)
    return [op.Z @ (s * rng.standard_normal(op.n_red)) for s in scales]


def operator_monotonicity(op, n_pairs: int = 100, seed: int = 0) -> np.ndarray:
    """<A(x1) - A(x2), x1 - x2> / |x1 - x2|^2 over seeded random admissible pairs."""
    rng = np.random.default_rng(seed)
    xs = _random_admissible(op, rng, 2 * n_pairs)
    gaps = []
    for x1, x2 in zip(xs[::2], xs[1::2]):
        dx = x1 - x2
        gaps.append(float((op.apply(x1) - op.apply(x2)) @ dx) / float(dx @ dx))
    return np.asarray(gaps)


def operator_coercivity(op, n_samples: int = 100, seed: int = 1) -> float:
    """delta_2 = min <A(x), x> / (kinetic norms + 2 dt int J |D u|^p) over random admissible x."""
    rng = np.random.default_rng(seed)
    masses = op.parts["mass"] + op.parts["interface_mass"]
    ratios = []
    for x in _random_admissible(op, rng, n_samples):
        D = op.strain(x)
        DD = np.einsum("eqij,eqij->eq", D, D)
        visc = 2.0 * op.dt * float(np.sum(op.jw * DD ** (0.5 * op.law.p)))
        denom = float(x @ (masses @ x)) + visc
        ratios.append(float(op.apply(x) @ x) / denom)
    return float(min(ratios))


# --- structure generator ---------------------------------------------------


def structure_generator_terms(U: dict, spaces, laws: Laws) -> dict:
    """Individual pairings of the linear structure generator applied to U = (beta, v, d, V).

    The thick traction on the interface is the boundary reaction (K_S d) on
    the interface DOFs; the interior part of the thick operator is what
    remains of the elastic form after removing that reaction.
    """
    tm = thin_matrices(spaces)
    _, K = structure_matrices(spaces, laws.thick)
    nb = 2 * spaces.n_t
    Ks = K[nb:, nb:]
    Kb = tm["bending"]
    beta, v, d, V = (U[k] for k in ("beta", "v", "d", "V"))
    Kd = (Ks @ d.ravel()).reshape(-1, 2)
    gamma = spaces.s_gamma
    traction = np.zeros_like(Kd)
    traction[gamma] = Kd[gamma]
    v_trace = (spaces.T_s @ v)
    return {
        "thin_velocity": -float(np.einsum("ic,ic->", Kb @ v, beta)),
        "thin_elastic": float(np.einsum("ic,ic->", Kb @ beta, v)),
        "traction_thin": float(np.einsum("ic,ic->", Kd[gamma], v_trace)),
        "thick_velocity": -float(V.ravel() @ (Ks @ d.ravel())),
        "thick_interior": float(np.einsum("ic,ic->", Kd - traction, V)),
    }


def random_structure_state(spaces, rng) -> dict:
    Zs = structure_constraint_basis(spaces)
    nb = 2 * spaces.n_t
    Y = Zs @ rng.standard_normal(Zs.shape[1])
    Ydot = Zs @ rng.standard_normal(Zs.shape[1])
    return {"beta": Y[:nb].reshape(-1, 2), "d": Y[nb:].reshape(-1, 2),
            "v": Ydot[:nb].reshape(-1, 2), "V": Ydot[nb:].reshape(-1, 2)}


def generator_dissipativity(spaces, laws: Laws, n: int = 100, seed: int = 0) -> np.ndarray:
    """|<A U, U>| / sum of |pairings| on random constrained U."""
    rng = np.random.default_rng(seed)
    rel = []
    for _ in range(n):
        t = structure_generator_terms(random_structure_state(spaces, rng), spaces, laws)
        rel.append(abs(sum(t.values())) / max(sum(abs(x) for x in t.values()), 1e-300))
    return np.asarray(rel)


# --- oracles ---------------------------------------------------------------


def structure_mode(spaces, laws: Laws, k: int = 0):
    """k-th generalized eigenpair (lambda, phi) of the reduced linear structure pair (K, M)."""
    Zs = structure_constraint_basis(spaces)
    M, K = structure_matrices(spaces, laws.thick)
    Mr = (Zs.T @ M @ Zs).toarray()
    Kr = (Zs.T @ K @ Zs).toarray()
    lam, vecs = sla.eigh(Kr, Mr)
    return float(lam[k]), vecs[:, k]


def mode_state(spaces, laws: Laws, phi: np.ndarray, c: float, cdot: float) -> CoupledState:
    Zs = structure_constraint_basis(spaces)
    nb = 2 * spaces.n_t
    Y, Yd = Zs @ (c * phi), Zs @ (cdot * phi)
    s = CoupledState.zeros(spaces)
    return replace(s, beta=Y[:nb].reshape(-1, 2), d=Y[nb:].reshape(-1, 2),
                   v=Yd[:nb].reshape(-1, 2), V=Yd[nb:].reshape(-1, 2))


def one_mode_error(setup: ProblemSetup, dt: float = 0.01, c: float = 0.3, cdot: float = -0.7) -> float:
    """Max deviation of the structure substep from the closed-form one-mode update."""
    sp_ = setup.spaces
    lam, phi = structure_mode(sp_, setup.laws)
    s0 = mode_state(sp_, setup.laws, phi, c, cdot)
    cfg = SchemeConfig(dt=dt, n_steps=1, newton_tol=1e-13)
    half, _ = structure_substep(s0, cfg, setup)
    c1 = (c + dt * cdot) / (1.0 + dt**2 * lam)
    v1 = (cdot - dt * lam * c) / (1.0 + dt**2 * lam)
    ref = mode_state(sp_, setup.laws, phi, c1, v1)
    return max(float(np.abs(getattr(half, k) - getattr(ref, k)).max()) for k in ("beta", "v", "d", "V"))


def newtonian_viscous_matrix(op) -> sp.csr_matrix:
    """2 dt int J D(phi):D(psi) built from explicit basis strain tensors (no kernel code)."""
    sp_ = op.spaces
    ne, nq, nb, _ = op.bgrad.shape
    E = np.zeros((ne, nq, nb, 2, 2, 2))
    for c in range(2):
        E[:, :, :, c, c, :] += 0.5 * op.bgrad
        E[:, :, :, c, :, c] += 0.5 * op.bgrad
    emat = 2.0 * op.dt * np.einsum("eq,eqaxij,eqbyij->eaxby", op.jw, E, E)
    vd = vector_dofs(sp_.v_elems)
    return scatter(vd, vd, emat.reshape(ne, 2 * nb, 2 * nb), (op.n_uv, op.n_uv))


def reduction_error(setup: ProblemSetup, dt: float = 0.01, seed: int = 0) -> float:
    """p = 2 fluid substep (iterated from a random guess) against one Newtonian saddle solve."""
    law = FluidLaw(p=2.0, alpha=setup.laws.fluid.alpha, reduction=True)
    s2 = replace(setup, laws=replace(setup.laws, fluid=law))
    op, *_ = probe_operator(s2, dt, seed=seed)
    cfg = SchemeConfig(dt=dt, picard_tol=1e-14, max_iters=20)
    z0 = np.random.default_rng(seed).standard_normal(op.n_red + op.n_p)
    z, _ = solve_fluid(op, cfg, z0)
    K = op.Z.T @ (op.linear + newtonian_viscous_matrix(op)) @ op.Z
    BZ = -dt * (op.B @ op.Z)
    A = sp.bmat([[K, BZ.T], [BZ, None]], format="csc")
    b = np.concatenate([op.Z.T @ op.rhs, np.zeros(op.n_p)])
    z_ref = spla.splu(A).solve(b)
    return float(np.abs(z - z_ref).max() / max(1.0, np.abs(z_ref).max()))


# --- verify ----------------------------------------------------------------


@dataclass
class SuiteResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


@dataclass
class VerifyReport:
    suites: list

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.suites)

    @property
    def failures(self) -> list[str]:
        return [s.name for s in self.suites if not s.ok]

    def text(self) -> str:
        lines = [f"{'PASS' if s.ok else 'FAIL'}  {s.name:<14} {s.detail} ({s.seconds:.2f} s)"
                 for s in self.suites]
        lines.append("verify: " + ("all suites passed" if self.ok else "FAILED: " + ", ".join(self.failures)))
        return "\n".join(lines)


def _suite(name, fn):
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing suite is a failed suite
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return SuiteResult(name, bool(ok), detail, time.perf_counter() - t0)


def verify(config, quick: bool = False) -> VerifyReport:
    """Run every verification suite for a RunConfig; never raises."""
    law = config.fluid_law(certify=False)
    suites = []

    def certification():
        try:
            certified = certify_constants(replace(law, kappa1=None, kappa2=None, kappa3=None))
        except CertificationError as exc:
            return False, str(exc)
        k = {n: getattr(law, n) if getattr(law, n) is not None else getattr(certified, n)
             for n in ("kappa1", "kappa2", "kappa3")}
        bad = check_constants(replace(law, **k))
        gaps = pointwise_gaps(law.p, 1000)
        if np.any(gaps <= 0):
            bad.append("monotonicity")
        detail = ", ".join(f"{n}={v:.6g}" for n, v in k.items())
        return not bad, (f"violated: {', '.join(bad)}; " if bad else "") + detail

    suites.append(_suite("certification", certification))
    try:
        good = config.problem_setup(certify=True)
    except CertificationError:
        good = config.problem_setup(certify=False)

    def probes():
        op, *_ = probe_operator(good, config.scheme.dt, seed=config.seed)
        gaps = operator_monotonicity(op, 100, seed=config.seed)
        delta2 = operator_coercivity(op, 100, seed=config.seed + 1)
        return gaps.min() > 0 and delta2 > 0, f"min gap {gaps.min():.3e}, delta2 {delta2:.3e}"

    suites.append(_suite("operator", probes))

    def dissipativity():
        rel = generator_dissipativity(good.spaces, good.laws, 100, seed=config.seed)
        return rel.max() <= 1e-12, f"max relative <AU,U> {rel.max():.2e}"

    suites.append(_suite("dissipativity", dissipativity))

    def energy():
        cfg = config.scheme_config()
        if quick:
            cfg = replace(cfg, n_steps=min(cfg.n_steps, 5))
        state0 = config.initial_state(good)
        res = run(cfg, good, state0)
        fails = res.report.inequality_failures()
        bounds = check_uniform_bounds(res.report)
        ok = not fails and bounds.ok and res.termination == "HORIZON"
        return ok, (f"{len(res.report.steps)} steps, {len(fails)} inequality failures, "
                    f"bounds {'hold' if bounds.ok else 'violated'}, C~={res.report.measured_constant:.3e}")

    suites.append(_suite("energy", energy))

    def reduction():
        err = reduction_error(good, config.scheme.dt, seed=config.seed)
        return err <= 1e-10, f"p=2 vs Newtonian solve {err:.2e}"

    suites.append(_suite("reduction", reduction))

    def oracles():
        lin = replace(good, laws=replace(good.laws, thin=ThinLaw()))
        err = one_mode_error(lin, config.scheme.dt)
        return err <= 1e-12, f"one-mode structure oracle {err:.2e}"

    suites.append(_suite("oracles", oracles))
    return VerifyReport(suites)


__all__ = [
    "RefinementTable",
    "refinement_study",
    "local_order",
    "state_norm",
    "probe_operator",
    "operator_monotonicity",
    "operator_coercivity",
    "structure_generator_terms",
    "generator_dissipativity",
    "structure_mode",
    "one_mode_error",
    "reduction_error",
    "VerifyReport",
    "verify",
    "worker_count",
]
