"""Lie splitting time loop: structure substep, then fluid substep, then the ALE update."""
from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla

from .constitutive import FluidLaw, ThickLaw, ThinLaw
from .discretization.assembly import (
    assemble_fluid_operator,
    assemble_pressure_load,
    assemble_structure_operator,
    divergence_matrix,
    dual_norm,
    thin_matrices,
)
from .discretization.spaces import DiscreteSpaces, Resolution, build_spaces
from .energy import (
    EnergyReport,
    StepRecord,
    check_fluid_inequality,
    check_structure_inequality,
    dissipation,
    elastic_energy,
    fluid_kinetic,
    kinetic_energy,
    structure_increments,
)
from .geometry import (
    EPS_J,
    AleMap,
    MonitorStatus,
    ReferenceGeometry,
    degeneracy_monitor,
    harmonic_extension,
)
from .signals import Signal

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
AUTO_PICARD_ITERS = 3
FLUID_SOLVERS = ("picard", "newton", "auto")


class SolverDivergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float = np.nan):
        super().__init__(msg)
        self.residual = residual


class NewtonDivergenceError(SolverDivergenceError):
    pass


class PicardDivergenceError(SolverDivergenceError):
    pass


@dataclass(frozen=True)
class Laws:
    fluid: FluidLaw = field(default_factory=FluidLaw)
    thick: ThickLaw = field(default_factory=ThickLaw)
    thin: ThinLaw = field(default_factory=ThinLaw)


@dataclass(eq=False)
class ProblemSetup:
    """Geometry, resolution, material laws and the inlet/outlet pressure signals."""

    geom: ReferenceGeometry = field(default_factory=ReferenceGeometry)
    res: Resolution = field(default_factory=Resolution)
    laws: Laws = field(default_factory=Laws)
    P_in: Signal = field(default_factory=Signal)
    P_out: Signal = field(default_factory=Signal)
    _spaces: DiscreteSpaces | None = field(default=None, repr=False)

    @property
    def spaces(self) -> DiscreteSpaces:
        if self._spaces is None:
            self._spaces = build_spaces(self.geom, self.res)
        return self._spaces

    def __getstate__(self):
        # the spaces cache holds factorizations; worker processes rebuild it
        return {**self.__dict__, "_spaces": None}

    def load(self, t0: float, t1: float) -> np.ndarray:
        """Time-averaged load R^{n+1} = (1/dt) int_{t0}^{t1} R, shape (n_v, 2)."""
        return assemble_pressure_load(self.P_in.mean(t0, t1), self.P_out.mean(t0, t1), 0.0,
                                      self.spaces)

    @property
    def unforced(self) -> bool:
        return self.P_in.is_zero and self.P_out.is_zero


@dataclass(frozen=True)
class SchemeConfig:
    dt: float = 0.01
    n_steps: int = 10
    newton_tol: float = 1e-10
    picard_tol: float = 1e-10
    max_iters: int = 60
    eps_j: float = EPS_J
    relaxation: float = 1.0
    fluid_solver: str = "picard"

    def __post_init__(self):
        bad = []
        if not self.dt > 0:
            bad.append(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            bad.append(f"n_steps must be a non-negative integer, got {self.n_steps}")
        if not (self.newton_tol > 0 and self.picard_tol > 0):
            bad.append("tolerances must be positive")
        if self.max_iters < 1:
            bad.append("max_iters must be at least 1")
        if not 0 < self.relaxation <= 1:
            bad.append("relaxation must lie in (0, 1]")
        if self.fluid_solver not in FLUID_SOLVERS:
            bad.append(f"unknown fluid solver {self.fluid_solver!r}")
        if bad:
            raise ValueError("; ".join(bad))

    @property
    def T(self) -> float:
        return self.dt * self.n_steps


@dataclass(frozen=True, eq=False)
class CoupledState:
    """Discrete fields at one (possibly half-integer) level; arrays are (n_nodes, 2)."""

    u: np.ndarray
    pi: np.ndarray
    beta: np.ndarray
    v: np.ndarray
    d: np.ndarray
    V: np.ndarray
    level: float = 0
    time: float = 0.0

    @classmethod
    def zeros(cls, spaces: DiscreteSpaces) -> "CoupledState":
        z = lambda n: np.zeros((n, 2))
        return cls(z(spaces.n_v), np.zeros(spaces.n_p), z(spaces.n_t), z(spaces.n_t),
                   z(spaces.n_s), z(spaces.n_s))

    def fields(self) -> dict:
        return {k: getattr(self, k) for k in ("u", "pi", "beta", "v", "d", "V")}

    def __sub__(self, other: "CoupledState") -> dict:
        return {k: a - other.fields()[k] for k, a in self.fields().items()}


# --- initial data ----------------------------------------------------------


def smooth_profile(spaces: DiscreteSpaces, amplitude: float, comp: int = 1) -> np.ndarray:
    """Hermite interpolant of c z^2 (L - z)^2 (normalised to max c) in component ``comp``."""
    L = spaces.geom.L
    scale = amplitude * 16.0 / L**4
    f = lambda z: np.column_stack([(c == comp) * scale * z**2 * (L - z) ** 2 for c in range(2)])
    df = lambda z: np.column_stack(
        [(c == comp) * scale * (2 * z * (L - z) ** 2 - 2 * z**2 * (L - z)) for c in range(2)]
    )
    return spaces.thin.interpolate(f, df)


def thick_lifting(trace: np.ndarray, spaces: DiscreteSpaces, law: ThickLaw | None = None) -> np.ndarray:
    """Discrete elastic lifting: d = T_s trace on Gamma, zero on the sides, K_S d = 0 elsewhere."""
    from .discretization.assembly import thick_stiffness

    d = np.zeros((spaces.n_s, 2))
    d[spaces.s_gamma] = spaces.T_s @ trace
    if not np.any(d):
        return d
    K = thick_stiffness(spaces, law or ThickLaw()).tocsr()
    free = (2 * spaces.s_free[:, None] + np.arange(2)).ravel()
    known = np.setdiff1d(np.arange(2 * spaces.n_s), free)
    flat = d.ravel()
    flat[free] = spla.spsolve(K[free][:, free].tocsc(), -(K[free][:, known] @ flat[known]))
    return flat.reshape(-1, 2)


def _extruded(trace: np.ndarray, spaces: DiscreteSpaces) -> np.ndarray:
    d = (spaces.T_s @ trace)[np.searchsorted(spaces.s_coords[spaces.s_gamma, 0],
                                            spaces.s_coords[:, 0])]
    d[spaces.s_sides] = 0.0
    return d


def initial_state(spaces: DiscreteSpaces, amplitude: float = 0.0, velocity: float = 0.0,
                  seed: int | None = None, perturbation: float = 0.0, thick: str = "lifting",
                  thick_law: ThickLaw | None = None) -> CoupledState:
    """Initial data: beta0 = smooth bump (radial), v0 = velocity * bump, fluid at rest.

    The thick layer follows the shell: ``thick="lifting"`` takes the elastic
    equilibrium with trace beta0 (and V0 the lifting of v0); ``"extruded"``
    copies the trace along r. A seeded perturbation adds a small multiple of
    a random smooth combination of interior thin modes (clamped ends kept).
    """
    if thick not in ("lifting", "extruded"):
        raise ValueError(f"unknown thick initial profile {thick!r}")
    beta = smooth_profile(spaces, amplitude)
    v = smooth_profile(spaces, velocity)
    if seed is not None and perturbation:
        rng = np.random.default_rng(seed)
        L = spaces.geom.L
        k = np.arange(1, 4)
        a = rng.standard_normal((3, 2)) / k[:, None] ** 2

        def f(z):
            b = (z * (L - z) / L**2) ** 2
            return perturbation * b[:, None] * (np.sin(np.outer(z, k) * np.pi / L) @ a)

        h = 1e-6
        df = lambda z: (f(z + h) - f(z - h)) / (2 * h)
        beta = beta + spaces.thin.interpolate(f, df)
        beta[spaces.thin.clamped] = 0.0
    state = CoupledState.zeros(spaces)
    if thick == "lifting":
        d, Vt = thick_lifting(beta, spaces, thick_law), thick_lifting(v, spaces, thick_law)
    else:
        d, Vt = _extruded(beta, spaces), _extruded(v, spaces)
    return replace(state, beta=beta, v=v, d=d, V=Vt)


@dataclass(frozen=True)
class InitialDataStatus:
    ok: bool
    violations: tuple = ()
    values: dict = field(default_factory=dict)


def h2_norm(beta: np.ndarray, spaces: DiscreteSpaces) -> float:
    m = thin_matrices(spaces)
    G = m["mass"] + m["slope"] + m["bending"]
    return float(np.sqrt(np.einsum("ic,ic->", beta, G @ beta)))


def validate_initial_data(state: CoupledState, spaces: DiscreteSpaces, amap: AleMap | None = None,
                          small_data: float = np.inf, tol: float = 1e-10,
                          eps_j: float = EPS_J) -> InitialDataStatus:
    """Discrete compatibility checks of the initial data; returns every violated clause.

    Clauses: ``divergence`` (J-weighted transformed divergence of u0),
    ``bottom_normal`` (u0 . nu on the bottom wall), ``inlet_outlet_tangential``,
    ``interface_normal`` (u0 . nu0 = v0 . nu0 on Gamma), ``positive_jacobian``
    (initial map monitor) and ``small_data`` (discrete H^2 norm of beta0).
    """
    amap = harmonic_extension(state.beta, spaces) if amap is None else amap
    vals, bad = {}, []
    scale = max(1.0, float(np.abs(state.u).max(initial=0.0)))
    status = degeneracy_monitor(amap, eps_j)
    vals["min_jacobian"] = status.min_jacobian
    if not status.ok:
        bad.append("positive_jacobian")
    else:
        div = divergence_matrix(amap) @ state.u.ravel()
        vals["divergence"] = float(np.abs(div).max(initial=0.0))
        if vals["divergence"] > tol * scale:
            bad.append("divergence")
    vals["bottom_normal"] = float(np.abs(state.u[spaces.v_bottom, 1]).max())
    if vals["bottom_normal"] > tol * scale:
        bad.append("bottom_normal")
    ends = np.concatenate([spaces.v_left, spaces.v_right])
    vals["inlet_outlet_tangential"] = float(np.abs(state.u[ends, 1]).max())
    if vals["inlet_outlet_tangential"] > tol * scale:
        bad.append("inlet_outlet_tangential")
    nu = amap.normal_nodes
    jump = np.einsum("ic,ic->i", state.u[spaces.v_top] - spaces.T_u @ state.v, nu)
    vals["interface_normal"] = float(np.abs(jump).max())
    if vals["interface_normal"] > tol * scale:
        bad.append("interface_normal")
    vals["h2_norm"] = h2_norm(state.beta, spaces)
    if vals["h2_norm"] > small_data:
        bad.append("small_data")
    return InitialDataStatus(not bad, tuple(bad), vals)


# --- substeps --------------------------------------------------------------


@dataclass(frozen=True)
class SolveInfo:
    iterations: int
    residual: float
    history: tuple = ()


def _structure_free_rows(spaces: DiscreteSpaces) -> np.ndarray:
    tf = (2 * spaces.thin.free[:, None] + np.arange(2)).ravel()
    sf = (2 * spaces.s_free[:, None] + np.arange(2)).ravel()
    return np.concatenate([tf, 2 * spaces.n_t + sf])


def structure_substep(state: CoupledState, cfg: SchemeConfig, setup: ProblemSetup,
                      basis: np.ndarray | None = None) -> tuple[CoupledState, SolveInfo]:
    """Implicit structure step: beta, d advance with v, V eliminated by the kinematic relations.

    ``basis`` (n_reduced x m) restricts the Galerkin solve to a subspace of the
    reduced structure unknowns; the initial data should lie in that subspace.
    """
    sp_ = setup.spaces
    op = assemble_structure_operator(state, setup.laws, cfg.dt, sp_)
    Y0 = np.concatenate([state.beta.ravel(), state.d.ravel()])
    x0 = Y0[_structure_free_rows(sp_)]
    Phi = None if basis is None else np.asarray(basis, dtype=float)
    c = x0 if Phi is None else np.linalg.lstsq(Phi, x0, rcond=None)[0]
    scale = max(1.0, float(np.linalg.norm(op.Z.T @ (op.M @ op.target))) / cfg.dt**2)

    def res(c):
        x = c if Phi is None else Phi @ c
        r = op.residual(x)
        return r if Phi is None else Phi.T @ r

    def solve(c, r):
        x = c if Phi is None else Phi @ c
        J = op.jacobian(x)
        if Phi is None:
            return spla.spsolve(J, r)
        return np.linalg.solve(Phi.T @ (J @ Phi), r)

    r = res(c)
    hist = [float(np.linalg.norm(r))]
    it, polish = 0, 0
    while True:
        done = hist[-1] <= cfg.newton_tol * scale
        if done and (polish >= 2 or hist[-1] == 0.0):
            break
        if it >= cfg.max_iters:
            raise NewtonDivergenceError(
                f"structure Newton did not converge in {cfg.max_iters} iterations "
                f"(last residual {hist[-1]:.3e})", hist[-1])
        dc = solve(c, -r)
        c_new = c + dc
        r_new = res(c_new)
        it += 1
        if done:
            polish += 1
            if np.linalg.norm(r_new) >= hist[-1]:
                break
        c, r = c_new, r_new
        hist.append(float(np.linalg.norm(r)))
        if not np.isfinite(hist[-1]):
            raise NewtonDivergenceError("structure Newton produced a non-finite residual", hist[-1])
    x = c if Phi is None else Phi @ c
    beta, d = op.split(op.expand(x))
    half = CoupledState(
        u=state.u.copy(), pi=state.pi.copy(), beta=beta.copy(), v=(beta - state.beta) / cfg.dt,
        d=d.copy(), V=(d - state.d) / cfg.dt, level=state.level + 0.5,
        time=state.time + 0.5 * cfg.dt,
    )
    return half, SolveInfo(it, hist[-1], tuple(hist))


def solve_fluid(op, cfg: SchemeConfig, z0: np.ndarray | None = None) -> tuple[np.ndarray, SolveInfo]:
    """Picard (lagged viscosity), Newton, or ``auto`` (Picard warm-up then Newton) iteration."""
    n = op.n_red + op.n_p
    z = np.zeros(n) if z0 is None else z0.copy()
    b = np.concatenate([op.Z.T @ op.rhs, np.zeros(op.n_p)])
    scale = max(1.0, float(np.linalg.norm(b)))
    r = op.residual(z)
    hist = [float(np.linalg.norm(r))]
    omega = cfg.relaxation
    it = 0
    while hist[-1] > cfg.picard_tol * scale:
        if it >= cfg.max_iters:
            raise PicardDivergenceError(
                f"fluid {cfg.fluid_solver} iteration did not converge in {cfg.max_iters} "
                f"iterations (last residual {hist[-1]:.3e})", hist[-1])
        kind = cfg.fluid_solver
        if kind == "auto":
            kind = "picard" if it < AUTO_PICARD_ITERS else "newton"
        J = op.jacobian(z, kind)
        dz = spla.splu(J).solve(-r)
        step = omega
        while True:
            z_new = z + step * dz
            r_new = op.residual(z_new)
            nr = float(np.linalg.norm(r_new))
            if nr <= hist[-1] or step < 1e-3:
                break
            step *= 0.5
        if not np.isfinite(nr):
            raise PicardDivergenceError("fluid iteration produced a non-finite residual", nr)
        z, r = z_new, r_new
        hist.append(nr)
        it += 1
    return z, SolveInfo(it, hist[-1], tuple(hist))


def fluid_substep(half: CoupledState, amap_old: AleMap, amap_new: AleMap, cfg: SchemeConfig,
                  setup: ProblemSetup, load: np.ndarray | None = None,
                  return_operator: bool = False):
    """Fluid step on the frozen geometry beta^{n+1} = beta^{n+1/2}; returns (state, info)."""
    op = assemble_fluid_operator(half, amap_old, amap_new, setup.laws.fluid, cfg.dt, load,
                                 eps_j=cfg.eps_j)
    z, info = solve_fluid(op, cfg)
    u, v, pi = op.expand(z)
    new = CoupledState(u=u, pi=pi, beta=half.beta.copy(), v=v, d=half.d.copy(), V=half.V.copy(),
                       level=half.level + 0.5, time=half.time + 0.5 * cfg.dt)
    if return_operator:
        return new, info, op
    return new, info


# --- one step and the run ----------------------------------------------------


@dataclass
class StepResult:
    status: str  # "OK" or "DEGENERATE"
    half: CoupledState
    new: CoupledState | None
    amap: AleMap
    monitor: MonitorStatus
    record: StepRecord | None = None
    structure_info: SolveInfo | None = None
    fluid_info: SolveInfo | None = None
    load: np.ndarray | None = None


def advance(state: CoupledState, amap: AleMap, cfg: SchemeConfig, setup: ProblemSetup,
            energy_old: tuple[float, float] | None = None) -> StepResult:
    """One Lie step. Stops before the fluid solve if the new map fails the monitor."""
    sp_ = setup.spaces
    laws = setup.laws
    half, sinfo = structure_substep(state, cfg, setup)
    amap_new = harmonic_extension(half.beta, sp_)
    status = degeneracy_monitor(amap_new, cfg.eps_j)
    if not status.ok:
        return StepResult("DEGENERATE", half, None, amap_new, status, structure_info=sinfo)
    n = int(round(state.level))
    t0, t1 = n * cfg.dt, (n + 1) * cfg.dt
    load = None if setup.unforced else setup.load(t0, t1)
    new, finfo = fluid_substep(half, amap, amap_new, cfg, setup, load)

    # energies
    if energy_old is None:
        energy_old = (kinetic_energy(state, amap), elastic_energy(state, laws, sp_))
    e_el_new = elastic_energy(half, laws, sp_)
    ek_half = kinetic_energy(half, amap)
    ek_new = kinetic_energy(new, amap_new)
    s_slack = check_structure_inequality(sum(energy_old), ek_half + e_el_new, state, half, laws, sp_)
    d = dissipation(new, amap_new, laws.fluid, cfg.dt)
    lnorm = 0.0 if load is None else dual_norm(load, sp_)
    fb = check_fluid_inequality(half, new, amap, amap_new, laws.fluid, cfg.dt, load, lnorm,
                                ek_half, ek_new, d)
    Mt = thin_matrices(sp_)["mass"]
    dv = new.v - half.v
    f_inc = 0.5 * fluid_kinetic(new.u - state.u, amap) + 0.5 * float(np.einsum("ic,ic->", dv, Mt @ dv))
    rec = StepRecord(
        level=n + 1, time=t1, e_kin=ek_new, e_el=e_el_new, e_total=ek_new + e_el_new,
        e_half=ek_half + e_el_new, dissipation=d, struct_slack=s_slack, fluid_slack=fb.slack,
        forcing_norm=lnorm, min_jacobian=status.min_jacobian, fluid_constant=fb.constant,
        struct_increment=structure_increments(state, half, laws, sp_), fluid_increment=f_inc,
    )
    return StepResult("OK", half, new, amap_new, status, rec, sinfo, finfo, load)


@dataclass
class RunResult:
    states: list
    halves: list
    maps: list
    report: EnergyReport
    termination: str  # "HORIZON" or "DEGENERATE"
    monitor: MonitorStatus | None = None
    error: str = ""
    loads: list = field(default_factory=list)

    @property
    def final(self) -> CoupledState:
        return self.states[-1]


def run(cfg: SchemeConfig, setup: ProblemSetup, state0: CoupledState | None = None,
        keep_maps: bool = False, checkpoint: str | None = None, checkpoint_stride: int = 0,
        callback=None) -> RunResult:
    """Advance ``cfg.n_steps`` steps from ``state0`` (zero data by default)."""
    sp_ = setup.spaces
    state = CoupledState.zeros(sp_) if state0 is None else state0
    amap = harmonic_extension(state.beta, sp_)
    e_old = (kinetic_energy(state, amap), elastic_energy(state, setup.laws, sp_))
    report = EnergyReport(sum(e_old), cfg.dt, cfg.newton_tol, cfg.picard_tol)
    states, halves, maps = [state], [], [amap] if keep_maps else []
    start = int(round(state.level))
    termination, monitor = "HORIZON", degeneracy_monitor(amap, cfg.eps_j)
    if not monitor.ok:
        return RunResult(states, halves, maps, report, "DEGENERATE", monitor)
    result_loads: list = []
    for n in range(start, start + cfg.n_steps):
        step = advance(state, amap, cfg, setup, e_old)
        halves.append(step.half)
        monitor = step.monitor
        if step.status != "OK":
            termination = "DEGENERATE"
            log.info("step %d: map degenerate (%s, min J %.3e)", n + 1, monitor.reason,
                     monitor.min_jacobian)
            break
        state, amap = step.new, step.amap
        e_old = (step.record.e_kin, step.record.e_el)
        report.append(step.record)
        states.append(state)
        result_loads.append(step.load)
        if keep_maps:
            maps.append(amap)
        if checkpoint and checkpoint_stride and (n + 1) % checkpoint_stride == 0:
            write_checkpoint(checkpoint, state)
        if callback is not None:
            callback(step)
    return RunResult(states, halves, maps, report, termination, monitor, loads=result_loads)


# --- checkpoints -----------------------------------------------------------


def atomic_write(path: str, data: bytes) -> None:
    """Write to a temporary file in the same directory, then rename over ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_checkpoint(path: str, state: CoupledState, meta: dict | None = None) -> None:
    """npz container: format_version, level, time, the six field arrays and optional metadata."""
    import io
    import json

    buf = io.BytesIO()
    np.savez(buf, format_version=np.int64(CHECKPOINT_VERSION), level=np.float64(state.level),
             time=np.float64(state.time), meta=np.array(json.dumps(meta or {}, sort_keys=True)),
             **state.fields())
    atomic_write(path, buf.getvalue())


def read_checkpoint(path: str) -> tuple[CoupledState, dict]:
    import json

    with np.load(path, allow_pickle=False) as f:
        version = int(f["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        fields = {k: f[k].copy() for k in ("u", "pi", "beta", "v", "d", "V")}
        lvl = float(f["level"])
        state = CoupledState(level=int(lvl) if lvl.is_integer() else lvl, time=float(f["time"]),
                             **fields)
        meta = json.loads(str(f["meta"]))
    return state, meta


__all__ = [
    "Laws",
    "ProblemSetup",
    "SchemeConfig",
    "CoupledState",
    "initial_state",
    "validate_initial_data",
    "structure_substep",
    "fluid_substep",
    "advance",
    "run",
    "write_checkpoint",
    "read_checkpoint",
]
