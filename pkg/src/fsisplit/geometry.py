"""Reference geometry, harmonic-extension ALE map and interface geometry."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

if TYPE_CHECKING:  # pragma: no cover
    from .discretization.spaces import DiscreteSpaces

EPS_J = 1e-6


class GeometryError(RuntimeError):
    pass


class SingularSystemError(GeometryError):
    pass


class DegenerateMapError(GeometryError):
    pass


class FoldOverError(GeometryError):
    pass


class MeshMismatchError(GeometryError):
    pass


@dataclass(frozen=True)
class ReferenceGeometry:
    """Fluid rectangle (0,L)x(0,1) below the interface r = 1, thick layer (0,L)x(1,1+H) above."""

    L: float = 6.0
    H: float = 0.5

    def __post_init__(self):
        if not (self.L > 0 and self.H > 0):
            raise ValueError(f"L and H must be positive, got L={self.L}, H={self.H}")

    @property
    def radius(self) -> float:
        return 1.0

    @property
    def fluid_domain(self):
        return (0.0, self.L), (0.0, 1.0)

    @property
    def thick_domain(self):
        return (0.0, self.L), (1.0, 1.0 + self.H)

    def classify_fluid_boundary(self, z: float, r: float, tol: float = 1e-12) -> str:
        """Name the boundary piece of the fluid rectangle containing (z, r).

        Corners shared with Gamma are reported as part of the rigid boundary.
        """
        if abs(z) <= tol:
            return "in"
        if abs(z - self.L) <= tol:
            return "out"
        if abs(r) <= tol:
            return "bottom"
        if abs(r - 1.0) <= tol:
            return "gamma"
        raise ValueError(f"({z}, {r}) is not on the fluid boundary")


@dataclass(frozen=True, eq=False)
class AleMap:
    """Discrete ALE map A = id + delta, delta piecewise bilinear on the fluid vertices.

    ``jacobian``, ``gradient`` and ``gradient_inverse`` live at the fluid
    quadrature points (n_elements, n_qp); interface quantities live at the
    interface quadrature points of the spaces object, and ``normal_nodes`` at
    the velocity nodes of Gamma.
    """

    spaces: "DiscreteSpaces"
    beta: np.ndarray
    displacement: np.ndarray
    gradient: np.ndarray
    jacobian: np.ndarray
    gradient_inverse: np.ndarray
    interface_normal: np.ndarray
    interface_tangent: np.ndarray
    surface_jacobian: np.ndarray
    normal_nodes: np.ndarray
    folded: bool

    @property
    def mapping(self) -> np.ndarray:
        return self.spaces.p_coords + self.displacement

    @property
    def min_jacobian(self) -> float:
        return float(self.jacobian.min())

    def displacement_at_qp(self) -> np.ndarray:
        sp_ = self.spaces
        de = self.displacement[sp_.p_elems]
        return np.einsum("qa,eac->eqc", sp_.phi1, de)


def _ale_laplacian(spaces: "DiscreteSpaces") -> sp.csr_matrix:
    """Q1 stiffness with vertex (trapezoidal) quadrature, i.e. the five-point stencil."""
    fp = spaces.fluid_p
    hz, hr = fp.hx, fp.hy
    el = spaces.p_elems
    wz, wr = 0.5 * hr / hz, 0.5 * hz / hr
    pairs = [(0, 1, wz), (2, 3, wz), (0, 2, wr), (1, 3, wr)]
    rows, cols, vals = [], [], []
    for a, b, w in pairs:
        na, nb = el[:, a], el[:, b]
        rows += [na, nb, na, nb]
        cols += [na, nb, nb, na]
        vals += [np.full(len(na), w)] * 2 + [np.full(len(na), -w)] * 2
    K = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fp.n_nodes, fp.n_nodes),
    )
    return K


def _ale_solver(spaces: "DiscreteSpaces"):
    cache = spaces.cache
    if "ale" not in cache:
        K = _ale_laplacian(spaces)
        I = spaces.p_interior
        B = np.setdiff1d(np.arange(K.shape[0]), I)
        if len(I):
            KII = K[I][:, I].tocsc()
            try:
                lu = spla.splu(KII)
            except RuntimeError as exc:  # singular factor
                raise SingularSystemError(str(exc)) from exc
        else:
            lu = None
        cache["ale"] = (K, I, B, lu, K[I][:, B].tocsr())
    return cache["ale"]


def ale_laplacian(spaces: "DiscreteSpaces") -> sp.csr_matrix:
    return _ale_solver(spaces)[0]


def interface_geometry(beta: np.ndarray, spaces: "DiscreteSpaces", z=None, strict: bool = True):
    """Unit normal, unit tangent and arc-length element of the deformed interface.

    ``z`` defaults to the interface quadrature points. Raises
    :class:`FoldOverError` when ``1 + d(beta_z)/dz <= 0`` and ``strict``.
    """
    E1 = spaces.E_thin_q1 if z is None else spaces.thin.eval_matrix(z, 1)
    slope = E1 @ beta
    t = np.column_stack([1.0 + slope[:, 0], slope[:, 1]])
    if strict and np.any(t[:, 0] <= 0.0):
        raise FoldOverError("interface folds over: 1 + d(beta_z)/dz <= 0")
    jf = np.hypot(t[:, 0], t[:, 1])
    tau = t / jf[:, None]
    nu = np.column_stack([-tau[:, 1], tau[:, 0]])
    return nu, tau, jf


def harmonic_extension(beta: np.ndarray, spaces: "DiscreteSpaces", eps_j: float | None = None) -> AleMap:
    """Discrete harmonic extension of id + beta from Gamma into the fluid rectangle.

    Dirichlet data: beta at the Gamma vertices, zero on the rigid boundary
    (which wins at the two corners).
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (spaces.n_t, 2):
        raise MeshMismatchError(f"beta has shape {beta.shape}, expected {(spaces.n_t, 2)}")
    K, I, B, lu, KIB = _ale_solver(spaces)
    delta = np.zeros((spaces.n_p, 2))
    delta[spaces.p_gamma_inner] = (spaces.T_ale @ beta)[1:-1]
    if lu is not None:
        rhs = -(KIB @ delta[B])
        delta[I] = lu.solve(np.ascontiguousarray(rhs))
    return _build_map(spaces, beta, delta, eps_j)


def _build_map(spaces, beta, delta, eps_j=None) -> AleMap:
    de = delta[spaces.p_elems]
    grad = np.einsum("eac,qak->eqck", de, spaces.dphi1) + np.eye(2)
    jac = grad[..., 0, 0] * grad[..., 1, 1] - grad[..., 0, 1] * grad[..., 1, 0]
    if eps_j is not None and jac.min() <= eps_j:
        raise DegenerateMapError(f"min Jacobian {jac.min():.3e} <= {eps_j:.1e}")
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.empty_like(grad)
        inv[..., 0, 0] = grad[..., 1, 1] / jac
        inv[..., 1, 1] = grad[..., 0, 0] / jac
        inv[..., 0, 1] = -grad[..., 0, 1] / jac
        inv[..., 1, 0] = -grad[..., 1, 0] / jac
    nu, tau, jf = interface_geometry(beta, spaces, strict=False)
    nu_nodes, _, _ = interface_geometry(beta, spaces, spaces.z_top_v, strict=False)
    slope = spaces.E_thin_q1 @ beta
    folded = bool(np.any(1.0 + slope[:, 0] <= 0.0))
    return AleMap(spaces, beta.copy(), delta, grad, jac, inv, nu, tau, jf, nu_nodes, folded)


def map_from_displacement(delta: np.ndarray, spaces: "DiscreteSpaces", beta=None) -> AleMap:
    """Wrap an arbitrary vertex displacement as an AleMap (used for affine checks)."""
    beta = np.zeros((spaces.n_t, 2)) if beta is None else beta
    return _build_map(spaces, beta, np.asarray(delta, dtype=float))


def ale_velocity(new: AleMap, old: AleMap, dt: float) -> np.ndarray:
    """Nodewise ALE velocity (A_new - A_old) / dt on the fluid vertices."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if new.spaces is not old.spaces or new.displacement.shape != old.displacement.shape:
        raise MeshMismatchError("ALE maps live on different meshes")
    return (new.displacement - old.displacement) / dt


def reference_gradient(u: np.ndarray, spaces: "DiscreteSpaces") -> np.ndarray:
    """Reference gradient of a Q2 nodal vector field at fluid quadrature points, (ne, nq, 2, 2)."""
    ue = u[spaces.v_elems]
    return np.einsum("eac,qak->eqck", ue, spaces.dphi2)


def transformed_gradient(grad: np.ndarray, amap: AleMap, eps_j: float | None = 0.0) -> np.ndarray:
    """(grad g)(grad A)^{-1}, pointwise at quadrature points."""
    if eps_j is not None and amap.jacobian.min() <= eps_j:
        raise DegenerateMapError(f"min Jacobian {amap.min_jacobian:.3e} <= {eps_j:.1e}")
    return np.einsum("eqck,eqkl->eqcl", grad, amap.gradient_inverse)


def sym(t: np.ndarray) -> np.ndarray:
    return 0.5 * (t + np.swapaxes(t, -1, -2))


def transformed_divergence(grad: np.ndarray, amap: AleMap) -> np.ndarray:
    return np.trace(transformed_gradient(grad, amap), axis1=-2, axis2=-1)


def transformed_strain(grad: np.ndarray, amap: AleMap) -> np.ndarray:
    return sym(transformed_gradient(grad, amap))


@dataclass(frozen=True)
class MonitorStatus:
    ok: bool
    min_jacobian: float
    location: tuple[float, float] | None = None
    reason: str = ""

    @property
    def label(self) -> str:
        return "OK" if self.ok else "DEGENERATE"


_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])


def _corner_jacobians(amap: AleMap) -> np.ndarray:
    from .discretization.elements import tensor_basis

    sp_ = amap.spaces
    _, dphi = tensor_basis(1, _CORNERS, sp_.fluid_p.hx, sp_.fluid_p.hy)
    de = amap.displacement[sp_.p_elems]
    g = np.einsum("eac,qak->eqck", de, dphi) + np.eye(2)
    return g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]


def _separated(P: np.ndarray, Q: np.ndarray, tol: float) -> bool:
    for poly in (P, Q):
        edges = np.roll(poly, -1, axis=0) - poly
        normals = np.column_stack([-edges[:, 1], edges[:, 0]])
        for n in normals:
            a, b = P @ n, Q @ n
            scale = np.linalg.norm(n)
            if a.max() <= b.min() + tol * scale or b.max() <= a.min() + tol * scale:
                return True
    return False


def overlapping_elements(amap: AleMap) -> list[tuple[int, int]]:
    """Pairs (top-row element, other element) whose deformed cells overlap.

    Cells sharing a vertex are skipped: a fold between neighbours already
    shows up as a non-positive Jacobian.
    """
    sp_ = amap.spaces
    fp = sp_.fluid_p
    quads = amap.mapping[sp_.p_elems[:, [0, 1, 3, 2]]]
    lo, hi = quads.min(axis=1), quads.max(axis=1)
    tol = 1e-9 * min(fp.hx, fp.hy)
    top = np.arange((fp.ny - 1) * fp.nx, fp.ny * fp.nx)
    hits = []
    for e in top:
        cand = np.nonzero(np.all(lo <= hi[e] + tol, axis=1) & np.all(hi >= lo[e] - tol, axis=1))[0]
        for f in cand:
            if f == e or np.intersect1d(sp_.p_elems[e], sp_.p_elems[f]).size:
                continue
            if not _separated(quads[e], quads[f], tol):
                hits.append((int(e), int(f)))
    return hits


def degeneracy_monitor(amap: AleMap, eps_j: float = EPS_J) -> MonitorStatus:
    """Check positivity of the Jacobian and an element-overlap injectivity screen."""
    jq = amap.jacobian
    jc = _corner_jacobians(amap)
    sp_ = amap.spaces
    eq, iq = np.unravel_index(np.argmin(jq), jq.shape)
    jmin = float(min(jq.min(), jc.min()))
    if not np.isfinite(jmin) or jmin <= eps_j:
        if jc.min() < jq.min():
            ec, ic = np.unravel_index(np.argmin(jc), jc.shape)
            loc = sp_.fluid_p.element_origins()[ec] + _CORNERS[ic] * [sp_.fluid_p.hx, sp_.fluid_p.hy]
        else:
            loc = sp_.qcoords[eq, iq]
        return MonitorStatus(False, jmin, (float(loc[0]), float(loc[1])), "jacobian")
    if amap.folded:
        return MonitorStatus(False, jmin, None, "fold")
    hits = overlapping_elements(amap)
    if hits:
        c = sp_.qcoords[hits[0][0]].mean(axis=0)
        return MonitorStatus(False, jmin, (float(c[0]), float(c[1])), "overlap")
    return MonitorStatus(True, jmin)
