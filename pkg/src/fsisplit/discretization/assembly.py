"""Global assembly on the fixed reference meshes and the two substep operators.

Vector fields are flattened node-major, ``2 * node + component``; the fluid
substep works on the stacked vector ``[u, v]`` (fluid velocity, thin velocity)
and the structure substep on ``[beta, d]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .. import kernels
from ..constitutive import FluidLaw, ThickLaw, ThinLaw, thick_element_stiffness
from ..constitutive import nonlinearity_apply, nonlinearity_jacobian
from ..geometry import AleMap, DegenerateMapError
from .elements import gauss_1d, hermite_deriv, lagrange1
from .spaces import THIN_QUAD, DiscreteSpaces

I2 = sp.identity(2, format="csr")


class DegenerateWeightError(ValueError):
    pass


def vector_dofs(elems: np.ndarray) -> np.ndarray:
    """(ne, nb) node connectivity -> (ne, 2 nb) vector DOFs, node-major."""
    return (2 * elems[:, :, None] + np.arange(2)).reshape(len(elems), -1)


def scatter(rows: np.ndarray, cols: np.ndarray, emats: np.ndarray, shape) -> sp.csr_matrix:
    """Sum element matrices emats (ne, nr, nc) into a sparse matrix."""
    R = np.broadcast_to(rows[:, :, None], emats.shape)
    C = np.broadcast_to(cols[:, None, :], emats.shape)
    return sp.csr_matrix((emats.ravel(), (R.ravel(), C.ravel())), shape=shape)


def vec(M) -> sp.csr_matrix:
    """Scalar operator -> the same operator acting on each of two components."""
    return sp.kron(M, I2, format="csr")


# --- thin structure ------------------------------------------------------


def _thin_rule(spaces: DiscreteSpaces):
    tm = spaces.thin
    x, w = gauss_1d(THIN_QUAD)
    e = np.repeat(np.arange(tm.n), len(x))
    zq = (e + np.tile(x, tm.n)) * tm.h
    return x, w * tm.h, zq


def thin_matrices(spaces: DiscreteSpaces) -> dict:
    """Scalar Hermite mass, slope (int phi' psi') and bending (int phi'' psi'') matrices."""
    if "thin" in spaces.cache:
        return spaces.cache["thin"]
    tm = spaces.thin
    x, w, _ = _thin_rule(spaces)
    dofs = tm.element_dofs()
    out = {}
    for name, order in (("mass", 0), ("slope", 1), ("bending", 2)):
        B = hermite_deriv(x, tm.h, order)
        ke = np.einsum("q,qa,qb->ab", w, B, B)
        out[name] = scatter(dofs, dofs, np.broadcast_to(ke, (tm.n, 4, 4)), (tm.n_scalar,) * 2)
    spaces.cache["thin"] = out
    return out


def thin_quadrature(spaces: DiscreteSpaces):
    """Evaluation matrix at the thin Gauss points and the matching weights."""
    if "thin_q" not in spaces.cache:
        x, w, zq = _thin_rule(spaces)
        spaces.cache["thin_q"] = (spaces.thin.eval_matrix(zq), np.tile(w, spaces.thin.n))
    return spaces.cache["thin_q"]


# --- thick layer ---------------------------------------------------------


def thick_stiffness(spaces: DiscreteSpaces, law: ThickLaw) -> sp.csr_matrix:
    key = ("thick_K", law.mu_s, law.lam)
    if key not in spaces.cache:
        ke = thick_element_stiffness(spaces.s_dphi, spaces.s_qw, law)
        vd = vector_dofs(spaces.s_elems)
        n = 2 * spaces.n_s
        spaces.cache[key] = scatter(vd, vd, np.broadcast_to(ke, (len(vd),) + ke.shape), (n, n))
    return spaces.cache[key]


def thick_mass(spaces: DiscreteSpaces) -> sp.csr_matrix:
    if "thick_M" not in spaces.cache:
        me = np.einsum("q,qa,qb->ab", spaces.s_qw, spaces.s_phi, spaces.s_phi)
        el = spaces.s_elems
        spaces.cache["thick_M"] = scatter(
            el, el, np.broadcast_to(me, (len(el), 4, 4)), (spaces.n_s, spaces.n_s)
        )
    return spaces.cache["thick_M"]


# --- masses --------------------------------------------------------------


def interval_mass(h: float, n: int = 1) -> sp.csr_matrix:
    """Linear-element mass matrix on n uniform intervals of length h."""
    x, w = gauss_1d(2)
    B = lagrange1(x)
    me = h * np.einsum("q,qa,qb->ab", w, B, B)
    el = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return scatter(el, el, np.broadcast_to(me, (n, 2, 2)), (n + 1, n + 1))


def assemble_mass(spaces: DiscreteSpaces, space: str = "velocity", weight=None) -> sp.csr_matrix:
    """Scalar mass matrix of one space, optionally weighted by a quadrature field.

    ``weight`` is a scalar or an array of the fluid quadrature shape (ne, nq);
    weights are only supported on the fluid spaces.
    """
    if space == "thin":
        return thin_matrices(spaces)["mass"]
    if space == "thick":
        if weight is not None:
            raise ValueError("weighted thick mass is not supported")
        return thick_mass(spaces)
    if space == "velocity":
        phi, el, n = spaces.phi2, spaces.v_elems, spaces.n_v
    elif space == "pressure":
        phi, el, n = spaces.phi1, spaces.p_elems, spaces.n_p
    else:
        raise ValueError(f"unknown space {space!r}")
    ne, nq = len(el), len(spaces.qw)
    wgt = np.ones((ne, nq)) if weight is None else np.broadcast_to(np.asarray(weight, float), (ne, nq))
    if not np.all(wgt > 0):
        raise DegenerateWeightError("mass weight must be positive at every quadrature point")
    me = np.einsum("eq,q,qa,qb->eab", wgt, spaces.qw, phi, phi)
    return scatter(el, el, me, (n, n))


def h1_gram(spaces: DiscreteSpaces) -> sp.csr_matrix:
    """Vector H1 Gram matrix on the fluid velocity space (reference domain)."""
    if "h1" not in spaces.cache:
        el = spaces.v_elems
        ke = np.einsum("q,qak,qbk->ab", spaces.qw, spaces.dphi2, spaces.dphi2)
        K = scatter(el, el, np.broadcast_to(ke, (len(el),) + ke.shape), (spaces.n_v,) * 2)
        spaces.cache["h1"] = vec(K + assemble_mass(spaces))
    return spaces.cache["h1"]


def dual_norm(r: np.ndarray, spaces: DiscreteSpaces) -> float:
    """Discrete (H^1)' norm sqrt(r^T G^{-1} r) of a velocity load vector."""
    if "h1_lu" not in spaces.cache:
        spaces.cache["h1_lu"] = spla.splu(h1_gram(spaces).tocsc())
    r = np.ravel(r)
    if not np.any(r):
        return 0.0
    return float(np.sqrt(max(r @ spaces.cache["h1_lu"].solve(r), 0.0)))


# --- transformed fluid terms --------------------------------------------


def transformed_basis_gradients(amap: AleMap, eps_j: float | None = 0.0) -> np.ndarray:
    """F^{-T} grad(phi_a) for the Q2 basis, shape (ne, nq, nb, 2)."""
    if eps_j is not None and amap.jacobian.min() <= eps_j:
        raise DegenerateMapError(f"min Jacobian {amap.min_jacobian:.3e} <= {eps_j:.1e}")
    return np.einsum("qak,eqkl->eqal", amap.spaces.dphi2, amap.gradient_inverse)


def velocity_at_qp(u: np.ndarray, spaces: DiscreteSpaces) -> np.ndarray:
    return np.einsum("qa,eac->eqc", spaces.phi2, u[spaces.v_elems])


def convection_matrix(amap: AleMap, adv: np.ndarray, bgrad=None) -> sp.csr_matrix:
    """Scalar N_ij = int J (a . grad^beta phi_j) phi_i for an advecting field a at qp."""
    sp_ = amap.spaces
    bgrad = transformed_basis_gradients(amap) if bgrad is None else bgrad
    jw = amap.jacobian * sp_.qw
    ad = np.einsum("eqk,eqbk->eqb", adv, bgrad)
    ne = np.einsum("eq,qa,eqb->eab", jw, sp_.phi2, ad)
    return scatter(sp_.v_elems, sp_.v_elems, ne, (sp_.n_v,) * 2)


def divergence_matrix(amap: AleMap, bgrad=None) -> sp.csr_matrix:
    """B[i, 2a + c] = int J psi_i (grad^beta phi_a)_c, i.e. the J-weighted divergence."""
    sp_ = amap.spaces
    bgrad = transformed_basis_gradients(amap) if bgrad is None else bgrad
    jw = amap.jacobian * sp_.qw
    be = np.einsum("eq,qi,eqac->eiac", jw, sp_.phi1, bgrad).reshape(len(jw), 4, -1)
    return scatter(sp_.p_elems, vector_dofs(sp_.v_elems), be, (sp_.n_p, 2 * sp_.n_v))


def slip_operator(amap: AleMap):
    """G with (G [u, v])_q = (u - v) . tau at interface points, and the weights w J_F."""
    sp_ = amap.spaces
    tau = amap.interface_tangent
    Eu = sp_.E_top_q.tocoo()
    top = sp_.v_top[Eu.col]
    rows = np.concatenate([Eu.row, Eu.row])
    cols = np.concatenate([2 * top, 2 * top + 1])
    vals = np.concatenate([Eu.data * tau[Eu.row, 0], Eu.data * tau[Eu.row, 1]])
    Et = sp_.E_thin_q.tocoo()
    off = 2 * sp_.n_v
    rows = np.concatenate([rows, Et.row, Et.row])
    cols = np.concatenate([cols, off + 2 * Et.col, off + 2 * Et.col + 1])
    vals = np.concatenate([vals, -Et.data * tau[Et.row, 0], -Et.data * tau[Et.row, 1]])
    nq = len(sp_.iz)
    G = sp.csr_matrix((vals, (rows, cols)), shape=(nq, off + 2 * sp_.n_t))
    return G, sp_.iw * amap.surface_jacobian


def inlet_outlet_weights(spaces: DiscreteSpaces):
    """Exact int phi_a dr of the Q2 traces on the inlet and outlet edges."""
    fv = spaces.fluid_v
    h = fv.hy
    w = np.zeros(fv.ky)
    w[0:-1:2] += h / 6.0
    w[2::2] += h / 6.0
    w[1::2] += 2.0 * h / 3.0
    return w


def assemble_pressure_load(P_in, P_out, t: float, spaces: DiscreteSpaces) -> np.ndarray:
    """Load <R, q> = int_{in/out} P q . nu_F over velocity DOFs, shape (n_v, 2).

    ``P_in``/``P_out`` are numbers or callables of time; nu_F is the outward
    normal of the fixed inlet (-1, 0) and outlet (1, 0).
    """
    pin = P_in(t) if callable(P_in) else float(P_in)
    pout = P_out(t) if callable(P_out) else float(P_out)
    w = inlet_outlet_weights(spaces)
    r = np.zeros((spaces.n_v, 2))
    r[spaces.v_left, 0] -= pin * w
    r[spaces.v_right, 0] += pout * w
    return r


# --- constraint bases ----------------------------------------------------


def fluid_constraint_basis(amap: AleMap) -> sp.csr_matrix:
    """Basis Z of the coupled space {(q, phi): q.nu = phi.nu on Gamma, q_r = 0 on Sigma, phi clamped}.

    Rows index the stacked vector [u (2 n_v), v (2 n_t)]. The radial velocity at
    interior interface nodes is slaved to the normal trace of the thin field.
    """
    sp_ = amap.spaces
    n_v, n_t = sp_.n_v, sp_.n_t
    nu = amap.normal_nodes[1:-1]
    if np.any(nu[:, 1] <= 0):
        raise DegenerateMapError("interface normal lost its radial component")
    gamma = sp_.v_gamma_inner
    fixed_r = np.union1d(sp_.v_sigma, gamma)
    free_r = np.setdiff1d(np.arange(n_v), fixed_r)
    tfree = sp_.thin.free
    rows, cols, vals = [], [], []
    col = 0
    # u_z everywhere
    rows.append(2 * np.arange(n_v)); cols.append(col + np.arange(n_v)); vals.append(np.ones(n_v))
    uz_col = col
    col += n_v
    rows.append(2 * free_r + 1); cols.append(col + np.arange(len(free_r))); vals.append(np.ones(len(free_r)))
    col += len(free_r)
    # thin DOFs: column for scalar s, component c
    vcol = col + 2 * np.arange(len(tfree))[:, None] + np.arange(2)
    rows.append((2 * n_v + 2 * tfree[:, None] + np.arange(2)).ravel())
    cols.append(vcol.ravel()); vals.append(np.ones(vcol.size))
    col += vcol.size
    # slaved radial interface velocity
    ratio = nu / nu[:, 1:2]
    rows.append(2 * gamma + 1); cols.append(uz_col + gamma); vals.append(-ratio[:, 0])
    T = sp_.T_u[1:-1][:, tfree].tocoo()
    for c in range(2):
        rows.append(2 * gamma[T.row] + 1)
        cols.append(vcol[T.col, c])
        vals.append(T.data * ratio[T.row, c])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * n_v + 2 * n_t, col),
    )


def structure_constraint_basis(spaces: DiscreteSpaces) -> sp.csr_matrix:
    """Basis of {(beta, d): beta clamped, d = 0 on the sides, d = beta on Gamma} on [beta, d]."""
    if "Zs" in spaces.cache:
        return spaces.cache["Zs"]
    n_t, n_s = spaces.n_t, spaces.n_s
    tfree, sfree = spaces.thin.free, spaces.s_free
    nb = 2 * len(tfree)
    bcol = 2 * np.arange(len(tfree))[:, None] + np.arange(2)
    rows = [(2 * tfree[:, None] + np.arange(2)).ravel()]
    cols = [bcol.ravel()]
    vals = [np.ones(nb)]
    dcol = nb + 2 * np.arange(len(sfree))[:, None] + np.arange(2)
    rows.append((2 * n_t + 2 * sfree[:, None] + np.arange(2)).ravel())
    cols.append(dcol.ravel())
    vals.append(np.ones(dcol.size))
    T = spaces.T_s[:, tfree].tocoo()
    for c in range(2):
        rows.append(2 * n_t + 2 * spaces.s_gamma[T.row] + c)
        cols.append(bcol[T.col, c])
        vals.append(T.data)
    Z = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * n_t + 2 * n_s, nb + dcol.size),
    )
    spaces.cache["Zs"] = Z
    return Z


# --- structure operator --------------------------------------------------


@dataclass(frozen=True, eq=False)
class StructureOperator:
    """Residual of the structure substep after eliminating v, V and the traces.

    With Y = [beta, d] = Z x the residual is
    Z^T [M (Y - Y^n - dt Ydot^n) / dt^2 + K Y + F(Y)],
    i.e. the weak form tested against every admissible (phi, psi).
    """

    spaces: DiscreteSpaces
    Z: sp.csr_matrix
    M: sp.csr_matrix
    K: sp.csr_matrix
    thin_law: ThinLaw
    dt: float
    target: np.ndarray  # Y^n + dt Ydot^n

    @property
    def n_beta(self) -> int:
        return 2 * self.spaces.n_t

    def expand(self, x: np.ndarray) -> np.ndarray:
        return self.Z @ x

    def split(self, Y: np.ndarray):
        nb = self.n_beta
        return Y[:nb].reshape(-1, 2), Y[nb:].reshape(-1, 2)

    def full_residual(self, Y: np.ndarray) -> np.ndarray:
        beta, _ = self.split(Y)
        r = self.M @ (Y - self.target) / self.dt**2 + self.K @ Y
        if self.thin_law.active:
            r[: self.n_beta] += nonlinearity_apply(beta, self.thin_law, self.spaces).ravel()
        return r

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.Z.T @ self.full_residual(self.Z @ x)

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        A = self.M / self.dt**2 + self.K
        if self.thin_law.active:
            beta, _ = self.split(self.Z @ x)
            Jz, Jr = nonlinearity_jacobian(beta, self.thin_law, self.spaces)
            nf = self.n_beta
            # interleave the two component Jacobians onto node-major DOFs
            J = sp.kron(Jz, sp.csr_matrix(([1.0], ([0], [0])), shape=(2, 2)))
            J = J + sp.kron(Jr, sp.csr_matrix(([1.0], ([1], [1])), shape=(2, 2)))
            A = A + sp.block_diag([J, sp.csr_matrix((A.shape[0] - nf,) * 2)])
        return (self.Z.T @ A @ self.Z).tocsc()


def structure_matrices(spaces: DiscreteSpaces, thick_law: ThickLaw):
    key = ("struct", thick_law.mu_s, thick_law.lam)
    if key not in spaces.cache:
        tmat = thin_matrices(spaces)
        M = sp.block_diag([vec(tmat["mass"]), vec(thick_mass(spaces))], format="csr")
        K = sp.block_diag([vec(tmat["bending"]), thick_stiffness(spaces, thick_law)], format="csr")
        spaces.cache[key] = (M, K)
    return spaces.cache[key]


def assemble_structure_operator(state, laws, dt: float, spaces: DiscreteSpaces) -> StructureOperator:
    """Structure substep operator around ``state`` (needs beta, v, d, V)."""
    M, K = structure_matrices(spaces, laws.thick)
    Y = np.concatenate([state.beta.ravel(), state.d.ravel()])
    Yd = np.concatenate([state.v.ravel(), state.V.ravel()])
    return StructureOperator(
        spaces, structure_constraint_basis(spaces), M, K, laws.thin, dt, Y + dt * Yd
    )


# --- fluid operator ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FluidOperator:
    """Discrete fluid-substep operator on the stacked unknown [u, v] plus pressure.

    ``linear`` holds the weighted mass, the skew convection pair, both slip
    terms and the interface mass; the power-law term is evaluated by the
    element kernels. ``rhs`` is the right side F. ``B`` is the J-weighted
    divergence on [u, v] (zero on the thin columns). The reduced unknowns are
    z = [y, pi] with [u, v] = Z y.
    """

    spaces: DiscreteSpaces
    law: FluidLaw
    dt: float
    Z: sp.csr_matrix
    linear: sp.csr_matrix
    B: sp.csr_matrix
    rhs: np.ndarray
    bgrad: np.ndarray
    jw: np.ndarray
    parts: dict

    @property
    def n_uv(self) -> int:
        return self.Z.shape[0]

    @property
    def n_red(self) -> int:
        return self.Z.shape[1]

    @property
    def n_p(self) -> int:
        return self.B.shape[0]

    def split(self, x_uv: np.ndarray):
        nv2 = 2 * self.spaces.n_v
        return x_uv[:nv2].reshape(-1, 2), x_uv[nv2:].reshape(-1, 2)

    def strain(self, x_uv: np.ndarray) -> np.ndarray:
        u, _ = self.split(x_uv)
        ue = np.ascontiguousarray(u[self.spaces.v_elems])
        return kernels.strain_at_qp(ue, self.bgrad)

    def viscous(self, x_uv: np.ndarray, matrix: str | None = None):
        """2 dt int J S(D u):D q as a vector on [u, v]; optionally its Picard or Newton matrix."""
        D = self.strain(x_uv)
        res, mat = kernels.viscous_element(self.bgrad, self.jw, D, self.law.p, matrix == "newton")
        sp_ = self.spaces
        vd = vector_dofs(sp_.v_elems)
        r = np.zeros(self.n_uv)
        np.add.at(r, vd.ravel(), 2.0 * self.dt * res.reshape(len(vd), -1).ravel())
        if matrix is None:
            return r, None
        ne, nb = vd.shape
        A = scatter(vd, vd, 2.0 * self.dt * mat.reshape(ne, nb, nb), (self.n_uv, self.n_uv))
        return r, A

    def apply(self, x_uv: np.ndarray) -> np.ndarray:
        """A(u, v) on the full stacked space (no pressure)."""
        return self.linear @ x_uv + self.viscous(x_uv)[0]

    def residual(self, z: np.ndarray) -> np.ndarray:
        y, pi = z[: self.n_red], z[self.n_red:]
        x = self.Z @ y
        ru = self.Z.T @ (self.apply(x) - self.rhs - self.dt * (self.B.T @ pi))
        rp = -self.dt * (self.B @ x)
        return np.concatenate([ru, rp])

    def jacobian(self, z: np.ndarray, kind: str = "picard") -> sp.csc_matrix:
        x = self.Z @ z[: self.n_red]
        _, A = self.viscous(x, kind)
        K = self.Z.T @ (self.linear + A) @ self.Z
        BZ = -self.dt * (self.B @ self.Z)
        return sp.bmat([[K, BZ.T], [BZ, None]], format="csc")

    def expand(self, z: np.ndarray):
        u, v = self.split(self.Z @ z[: self.n_red])
        return u, v, z[self.n_red:].copy()


def fluid_linear_parts(amap_old: AleMap, amap_new: AleMap, u_old: np.ndarray, w: np.ndarray,
                       law: FluidLaw, dt: float, bgrad=None) -> dict:
    """Individual linear blocks of the fluid operator, each on the stacked [u, v] space."""
    sp_ = amap_new.spaces
    n_v, n_t = sp_.n_v, sp_.n_t
    nuv = 2 * (n_v + n_t)
    M_avg = assemble_mass(sp_, "velocity", 0.5 * (amap_old.jacobian + amap_new.jacobian))
    adv = velocity_at_qp(u_old, sp_) - np.einsum("qa,eac->eqc", sp_.phi1, w[sp_.p_elems])
    N = convection_matrix(amap_new, adv, bgrad)
    G, W = slip_operator(amap_new)
    pad_u = lambda A: sp.block_diag([A, sp.csr_matrix((2 * n_t, 2 * n_t))], format="csr")
    pad_v = lambda A: sp.block_diag([sp.csr_matrix((2 * n_v, 2 * n_v)), A], format="csr")
    parts = {
        "mass": pad_u(vec(M_avg)),
        "convection": pad_u(vec(0.5 * dt * (N - N.T))),
        "slip": (dt / law.alpha) * (G.T @ sp.diags(W) @ G).tocsr(),
        "interface_mass": pad_v(vec(thin_matrices(sp_)["mass"])),
    }
    assert all(P.shape == (nuv, nuv) for P in parts.values())
    return parts


def assemble_fluid_operator(state, amap_old: AleMap, amap_new: AleMap, law: FluidLaw, dt: float,
                            load: np.ndarray | None = None, eps_j: float = 0.0) -> FluidOperator:
    """Fluid substep operator from the half-step state and the maps at levels n and n+1.

    ``load`` is the time-averaged pressure load R^{n+1} on velocity DOFs (n_v, 2).
    """
    sp_ = amap_new.spaces
    bgrad = np.ascontiguousarray(transformed_basis_gradients(amap_new, eps_j))
    w = (amap_new.displacement - amap_old.displacement) / dt
    parts = fluid_linear_parts(amap_old, amap_new, state.u, w, law, dt, bgrad)
    linear = sum(parts.values())
    M_old = vec(assemble_mass(sp_, "velocity", amap_old.jacobian))
    r_u = M_old @ state.u.ravel()
    if load is not None:
        r_u = r_u + dt * np.ravel(load)
    r_v = vec(thin_matrices(sp_)["mass"]) @ state.v.ravel()
    Bu = divergence_matrix(amap_new, bgrad)
    B = sp.hstack([Bu, sp.csr_matrix((sp_.n_p, 2 * sp_.n_t))], format="csr")
    return FluidOperator(
        sp_, law, dt, fluid_constraint_basis(amap_new), linear.tocsr(), B,
        np.concatenate([r_u, r_v]), bgrad, np.ascontiguousarray(amap_new.jacobian * sp_.qw), parts,
    )


__all__ = [
    "assemble_mass",
    "assemble_fluid_operator",
    "assemble_structure_operator",
    "assemble_pressure_load",
    "FluidOperator",
    "StructureOperator",
    "thin_matrices",
    "thick_stiffness",
    "dual_norm",
]
