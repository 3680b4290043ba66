"""Semi-discrete energies, dissipation, the per-step inequalities and the run ledger."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .constitutive import FluidLaw, nonlinearity_apply, potential, stress
from .discretization.assembly import (
    assemble_mass,
    divergence_matrix,
    fluid_constraint_basis,
    slip_operator,
    structure_constraint_basis,
    structure_matrices,
    thin_matrices,
)
from .geometry import AleMap, DegenerateMapError, reference_gradient, transformed_strain

CSV_COLUMNS = (
    "level",
    "time",
    "e_kin",
    "e_el",
    "e_total",
    "dissipation",
    "struct_slack",
    "fluid_slack",
    "forcing_norm",
    "min_jacobian",
)


def _check_map(amap: AleMap):
    if amap.jacobian.min() <= 0:
        raise DegenerateMapError(f"min Jacobian {amap.min_jacobian:.3e} <= 0")


def fluid_kinetic(u: np.ndarray, amap: AleMap) -> float:
    """int J |u|^2 for the Jacobian of ``amap``."""
    _check_map(amap)
    M = assemble_mass(amap.spaces, "velocity", amap.jacobian)
    return float(np.einsum("ic,ic->", u, M @ u))


def kinetic_energy(state, amap: AleMap) -> float:
    """1/2 (int J |u|^2 + |v|^2_Gamma + |V|^2_S), J taken from ``amap``."""
    sp_ = amap.spaces
    Mt = thin_matrices(sp_)["mass"]
    Ms = assemble_mass(sp_, "thick")
    return 0.5 * (
        fluid_kinetic(state.u, amap)
        + float(np.einsum("ic,ic->", state.v, Mt @ state.v))
        + float(np.einsum("ic,ic->", state.V, Ms @ state.V))
    )


def elastic_energy(state, laws, spaces) -> float:
    """1/2 (<L_E beta, beta> + a_S(d, d) + 2 Pi(beta))."""
    _, K = structure_matrices(spaces, laws.thick)
    Y = np.concatenate([state.beta.ravel(), state.d.ravel()])
    return 0.5 * float(Y @ (K @ Y)) + potential(state.beta, laws.thin, spaces)


def strain_power(u: np.ndarray, amap: AleMap, p: float) -> float:
    """int J |D^beta(u)|^p."""
    D = transformed_strain(reference_gradient(u, amap.spaces), amap)
    s = np.sqrt(np.einsum("eqij,eqij->eq", D, D))
    return float(np.sum(amap.jacobian * amap.spaces.qw * s**p))


def slip_mismatch(u: np.ndarray, v: np.ndarray, amap: AleMap) -> float:
    """int_Gamma |(u - v) . tau|^2 J_F."""
    G, W = slip_operator(amap)
    g = G @ np.concatenate([u.ravel(), v.ravel()])
    return float(W @ g**2)


def dissipation(state, amap: AleMap, law: FluidLaw, dt: float) -> float:
    """kappa1 dt int J |D^beta u|^p + (dt / alpha) |(v - u)_tau|^2 at the new level."""
    k1 = 1.0 if law.kappa1 is None else law.kappa1
    return k1 * dt * strain_power(state.u, amap, law.p) + dt / law.alpha * slip_mismatch(
        state.u, state.v, amap
    )


def structure_increments(old, new, laws, spaces) -> float:
    """1/2 (|dv|^2 + |dV|^2 + <L_E dbeta, dbeta> + a_S(dd, dd))."""
    diff = type(old)(
        u=np.zeros_like(old.u), pi=old.pi, beta=new.beta - old.beta, v=new.v - old.v,
        d=new.d - old.d, V=new.V - old.V,
    )
    Mt = thin_matrices(spaces)["mass"]
    Ms = assemble_mass(spaces, "thick")
    _, K = structure_matrices(spaces, laws.thick)
    Y = np.concatenate([diff.beta.ravel(), diff.d.ravel()])
    return 0.5 * (
        float(np.einsum("ic,ic->", diff.v, Mt @ diff.v))
        + float(np.einsum("ic,ic->", diff.V, Ms @ diff.V))
        + float(Y @ (K @ Y))
    )


def check_structure_inequality(e_old: float, e_half: float, old, half, laws, spaces) -> float:
    """Slack E^n - [E^{n+1/2} + increment terms]; nonnegative for an exact solve."""
    return e_old - (e_half + structure_increments(old, half, laws, spaces))


@dataclass(frozen=True)
class FluidBalance:
    """Terms of the fluid-step energy balance.

    ``slack`` is the inequality with the power-law constants made explicit:
    E_kin^{n+1/2} + dt <R, u> - kappa1 dt int J|D|^p + 2 kappa2 dt |Omega|
    minus the left side; ``constant`` is the smallest C with
    lhs <= E_kin^{n+1/2} + C dt (|R|_*^2 + 1).
    """

    lhs: float
    e_half: float
    slack: float
    constant: float
    forcing: float


def check_fluid_inequality(half, new, amap_old: AleMap, amap_new: AleMap, law: FluidLaw, dt: float,
                           load: np.ndarray | None = None, load_norm: float = 0.0,
                           e_kin_half: float | None = None, e_kin_new: float | None = None,
                           diss: float | None = None) -> FluidBalance:
    sp_ = amap_new.spaces
    k1 = 1.0 if law.kappa1 is None else law.kappa1
    k2 = 0.0 if law.kappa2 is None else law.kappa2
    e_half = kinetic_energy(half, amap_old) if e_kin_half is None else e_kin_half
    e_new = kinetic_energy(new, amap_new) if e_kin_new is None else e_kin_new
    d = dissipation(new, amap_new, law, dt) if diss is None else diss
    du = fluid_kinetic(new.u - half.u, amap_old)
    Mt = thin_matrices(sp_)["mass"]
    dv = new.v - half.v
    lhs = e_new + 0.5 * du + 0.5 * float(np.einsum("ic,ic->", dv, Mt @ dv)) + d
    work = 0.0 if load is None else dt * float(np.ravel(load) @ new.u.ravel())
    area = float(np.sum(amap_new.jacobian * sp_.qw))
    rhs = e_half + work - k1 * dt * strain_power(new.u, amap_new, law.p) + 2.0 * k2 * dt * area
    const = max(0.0, (lhs - e_half) / dt) / (load_norm**2 + 1.0)
    return FluidBalance(lhs, e_half, rhs - lhs, const, load_norm)


@dataclass
class StepRecord:
    level: int
    time: float
    e_kin: float
    e_el: float
    e_total: float
    e_half: float
    dissipation: float
    struct_slack: float
    fluid_slack: float
    forcing_norm: float
    min_jacobian: float
    fluid_constant: float
    struct_increment: float
    fluid_increment: float

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class EnergyReport:
    """Per-step ledger; ``e0`` is the initial total energy."""

    e0: float
    dt: float
    newton_tol: float = 1e-10
    picard_tol: float = 1e-10
    steps: list = field(default_factory=list)

    def append(self, rec: StepRecord):
        self.steps.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps], dtype=float)

    @property
    def e_total(self) -> np.ndarray:
        return self.column("e_total")

    @property
    def cumulative_dissipation(self) -> np.ndarray:
        return np.cumsum(self.column("dissipation"))

    @property
    def forcing_l2(self) -> float:
        """sum_n dt |R^{n+1}|_*^2, the discrete L2(0, T; (H^1)') norm squared."""
        return float(self.dt * np.sum(self.column("forcing_norm") ** 2))

    @property
    def measured_constant(self) -> float:
        """C~ such that every prefix satisfies E + sum D <= E0 + C~ (|R|^2 + 1)."""
        if not self.steps:
            return 0.0
        c = float(np.max(self.column("fluid_constant")))
        return c * max(1.0, self.dt * len(self.steps))

    def tolerance(self, kind: str, scale: float) -> float:
        tol = self.newton_tol if kind == "struct" else self.picard_tol
        return 10.0 * tol * max(1.0, scale)

    def inequality_failures(self) -> list[tuple[int, str, float]]:
        bad = []
        for s in self.steps:
            scale = max(abs(s.e_total), abs(s.e_half))
            if s.struct_slack < -self.tolerance("struct", scale):
                bad.append((s.level, "structure", s.struct_slack))
            if s.fluid_slack < -self.tolerance("fluid", scale):
                bad.append((s.level, "fluid", s.fluid_slack))
        return bad

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in self.steps:
            w.writerow([s.level] + ["%.17g" % x for x in s.row()[1:]])
        return buf.getvalue()


@dataclass(frozen=True)
class BoundSummary:
    ok: bool
    bound: float
    constant: float
    max_energy: float
    max_dissipation: float
    increments: float
    theorem_lhs: float
    failures: tuple = ()


def check_uniform_bounds(report: EnergyReport, constant: float | None = None) -> BoundSummary:
    """Prefix checks of E^{n+1} <= C, sum D <= C, summed increments <= C and E + sum D <= C,
    with C = E0 + C~ (|R|^2_{L2} + 1)."""
    c = report.measured_constant if constant is None else constant
    bound = report.e0 + c * (report.forcing_l2 + 1.0)
    if not report.steps:
        return BoundSummary(bound >= report.e0, bound, c, report.e0, 0.0, 0.0, report.e0)
    E = report.e_total
    Eh = report.column("e_half")
    D = report.cumulative_dissipation
    inc = np.cumsum(report.column("struct_increment") + report.column("fluid_increment"))
    combined = E + D + inc
    slack = report.tolerance("fluid", bound) * len(report.steps)
    failures = []
    for name, seq in (("energy", E), ("half_energy", Eh), ("dissipation", D),
                      ("increments", inc), ("combined", combined)):
        idx = np.nonzero(seq > bound + slack)[0]
        if idx.size:
            failures.append((name, int(report.steps[idx[0]].level)))
    return BoundSummary(
        not failures, bound, c, float(E.max()), float(D[-1]), float(inc[-1]),
        float(combined.max()), tuple(failures),
    )


# --- weak-form defect -------------------------------------------------------


@dataclass(frozen=True)
class TestTriple:
    """Fixed reduced coefficients of (q, phi, psi) and the time profile (1 - t/T)^2.

    ``fluid`` are the free fluid coefficients (u_z at every node, then u_r at
    the nodes off Sigma and Gamma), ``thin`` the free thin DOFs (node-major,
    two components), ``thick`` the free thick DOFs. At each level the
    interface radial velocity of q is rebuilt from the current normal so
    that q . nu = phi . nu holds on the deformed interface.
    """

    fluid: np.ndarray
    thin: np.ndarray
    thick: np.ndarray
    horizon: float

    def theta(self, t: float) -> float:
        return (1.0 - t / self.horizon) ** 2

    def at(self, amap: AleMap, t: float):
        sp_ = amap.spaces
        Zf = fluid_constraint_basis(amap)
        x = self.theta(t) * (Zf @ np.concatenate([self.fluid, self.thin]))
        q, phi = x[: 2 * sp_.n_v].reshape(-1, 2), x[2 * sp_.n_v:].reshape(-1, 2)
        y = self.theta(t) * (structure_constraint_basis(sp_) @ np.concatenate([self.thin, self.thick]))
        psi = y[2 * sp_.n_t:].reshape(-1, 2)
        return q, phi, psi


def smooth_test_triple(spaces, horizon: float, scale: float = 1.0) -> TestTriple:
    """A smooth admissible triple built from interpolated polynomial/trigonometric fields."""
    L, H = spaces.geom.L, spaces.geom.H
    xc = spaces.v_coords
    z, r = xc[:, 0] / L, xc[:, 1]
    qz = np.sin(np.pi * z) * (1.0 + r**2)
    qr = np.sin(2 * np.pi * z) * r * (1.0 - r)
    fixed_r = np.union1d(spaces.v_sigma, spaces.v_gamma_inner)
    free_r = np.setdiff1d(np.arange(spaces.n_v), fixed_r)
    fluid = np.concatenate([qz, qr[free_r]])
    tm = spaces.thin
    bump = lambda zz: (zz * (L - zz)) ** 2 * 16.0 / L**4
    dbump = lambda zz: (2 * zz * (L - zz) ** 2 - 2 * zz**2 * (L - zz)) * 16.0 / L**4
    phi = tm.interpolate(lambda zz: np.column_stack([0.3 * bump(zz), bump(zz)]),
                         lambda zz: np.column_stack([0.3 * dbump(zz), dbump(zz)]))
    thin = phi[tm.free].ravel()
    sc = spaces.s_coords[spaces.s_free]
    prof = bump(sc[:, 0]) * (1.0 + H - sc[:, 1]) / H
    thick = np.column_stack([0.3 * prof, prof]).ravel()
    return TestTriple(scale * fluid, scale * thin, scale * thick, horizon)


def _transformed_grad(field_e, dphi, amap):
    g = np.einsum("eac,qak->eqck", field_e, dphi)
    return np.einsum("eqck,eqkl->eqcl", g, amap.gradient_inverse)


def weak_form_residual(states, halves, maps, setup, triple: TestTriple, dt: float,
                       loads=None) -> float:
    """Defect of the space-time weak formulation on a computed trajectory.

    Time integrals are Riemann sums with the end-of-step values; time
    derivatives of the test functions are forward differences; d beta/dt is
    the structure velocity (beta^{n+1} - beta^n)/dt. The pressure term is
    kept because discrete test velocities are not divergence free.
    Returns the signed defect (left side minus right side).
    """
    sp_ = setup.spaces
    laws = setup.laws
    law = laws.fluid
    Mt = thin_matrices(sp_)["mass"]
    Ms = assemble_mass(sp_, "thick")
    _, K = structure_matrices(sp_, laws.thick)
    nt2 = 2 * sp_.n_t
    KE, KS = K[:nt2, :nt2], K[nt2:, nt2:]
    q0, phi0, psi0 = triple.at(maps[0], 0.0)
    s0 = states[0]
    rhs = (fluid_kinetic_pair(s0.u, q0, maps[0]) + float(np.einsum("ic,ic->", s0.v, Mt @ phi0))
           + float(np.einsum("ic,ic->", s0.V, Ms @ psi0)))
    lhs = 0.0
    prev = (q0, phi0, psi0)
    for n in range(len(states) - 1):
        S, Hh, m, m0 = states[n + 1], halves[n], maps[n + 1], maps[n]
        t1 = S.time
        q, phi, psi = triple.at(m, t1)
        qp, phip, psip = prev
        J = m.jacobian * sp_.qw
        w = (m.displacement - m0.displacement) / dt
        u_e, q_e, w_e = S.u[sp_.v_elems], q[sp_.v_elems], w[sp_.p_elems]
        uq = np.einsum("qa,eac->eqc", sp_.phi2, u_e)
        qq = np.einsum("qa,eac->eqc", sp_.phi2, q_e)
        wq = np.einsum("qa,eac->eqc", sp_.phi1, w_e)
        Gu = _transformed_grad(u_e, sp_.dphi2, m)
        Gq = _transformed_grad(q_e, sp_.dphi2, m)
        divw = np.trace(_transformed_grad(w_e, sp_.dphi1, m), axis1=-2, axis2=-1)
        a = uq - wq
        conv = (np.einsum("eqk,eqck,eqc->eq", a, Gu, qq) - np.einsum("eqk,eqck,eqc->eq", a, Gq, uq)
                - divw * np.einsum("eqc,eqc->eq", qq, uq))
        lhs += 0.5 * dt * float(np.sum(J * conv))
        lhs -= fluid_kinetic_pair(S.u, q - qp, m)
        Du, Dq = 0.5 * (Gu + np.swapaxes(Gu, -1, -2)), 0.5 * (Gq + np.swapaxes(Gq, -1, -2))
        lhs += 2.0 * dt * float(np.sum(J * np.einsum("eqij,eqij->eq", stress(Du, law.p), Dq)))
        lhs += dt * float(np.einsum("ic,ic->", nonlinearity_apply(S.beta, laws.thin, sp_), phi))
        G, W = slip_operator(m)
        gu = G @ np.concatenate([S.u.ravel(), Hh.v.ravel()])
        gq = G @ np.concatenate([q.ravel(), phi.ravel()])
        lhs += dt / law.alpha * float(W @ (gu * gq))
        lhs -= float(np.einsum("ic,ic->", Hh.v, Mt @ (phi - phip)))
        lhs += dt * float(phi.ravel() @ (KE @ S.beta.ravel()))
        lhs -= float(np.einsum("ic,ic->", Hh.V, Ms @ (psi - psip)))
        lhs += dt * float(psi.ravel() @ (KS @ S.d.ravel()))
        lhs -= dt * float(S.pi @ (divergence_matrix(m) @ q.ravel()))
        if loads is not None and loads[n] is not None:
            rhs += dt * float(np.ravel(loads[n]) @ q.ravel())
        prev = (q, phi, psi)
    return lhs - rhs


def fluid_kinetic_pair(u: np.ndarray, q: np.ndarray, amap: AleMap) -> float:
    """int J u . q."""
    M = assemble_mass(amap.spaces, "velocity", amap.jacobian)
    return float(np.einsum("ic,ic->", u, M @ q))


__all__ = [
    "TestTriple",
    "smooth_test_triple",
    "weak_form_residual",
    "kinetic_energy",
    "elastic_energy",
    "dissipation",
    "check_structure_inequality",
    "check_fluid_inequality",
    "check_uniform_bounds",
    "EnergyReport",
    "StepRecord",
    "CSV_COLUMNS",
]
