"""Structured meshes, DOF numbering and trace maps on the reference domains."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..geometry import ReferenceGeometry
from .elements import gauss_1d, gauss_2d, hermite_deriv, lagrange2, tensor_basis

FLUID_QUAD = 4  # Gauss points per direction, exact to degree 2*2+2 on affine cells
THICK_QUAD = 3
THIN_QUAD = 5
IFACE_QUAD = 5


class InvalidResolution(ValueError):
    pass


@dataclass(frozen=True)
class Resolution:
    nz: int = 16
    nr: int = 8
    nz_thick: int = 16
    nr_thick: int = 4
    n_thin: int = 8

    def validate(self) -> None:
        bad = [k for k, v in self.__dict__.items() if int(v) != v or v < 1]
        if bad:
            raise InvalidResolution(f"resolutions must be positive integers: {bad}")


@dataclass(frozen=True)
class RectMesh:
    """Uniform nx x ny grid of rectangles with a Lagrange node lattice of given degree."""

    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int
    degree: int = 1

    @property
    def hx(self) -> float:
        return (self.x1 - self.x0) / self.nx

    @property
    def hy(self) -> float:
        return (self.y1 - self.y0) / self.ny

    @property
    def kx(self) -> int:
        return self.degree * self.nx + 1

    @property
    def ky(self) -> int:
        return self.degree * self.ny + 1

    @property
    def n_nodes(self) -> int:
        return self.kx * self.ky

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    def node_index(self, i, j):
        return np.asarray(j) * self.kx + np.asarray(i)

    def coords(self) -> np.ndarray:
        xs = np.linspace(self.x0, self.x1, self.kx)
        ys = np.linspace(self.y0, self.y1, self.ky)
        X, Y = np.meshgrid(xs, ys, indexing="xy")
        return np.column_stack([X.ravel(), Y.ravel()])

    def elements(self) -> np.ndarray:
        k = self.degree
        ex, ey = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="xy")
        ex, ey = ex.ravel(), ey.ravel()
        loc = [(a, b) for b in range(k + 1) for a in range(k + 1)]
        return np.column_stack([self.node_index(k * ex + a, k * ey + b) for a, b in loc])

    def element_origins(self) -> np.ndarray:
        ex, ey = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="xy")
        return np.column_stack([self.x0 + ex.ravel() * self.hx, self.y0 + ey.ravel() * self.hy])

    def boundary(self, side: str) -> np.ndarray:
        i = np.arange(self.kx)
        j = np.arange(self.ky)
        if side == "bottom":
            return self.node_index(i, 0)
        if side == "top":
            return self.node_index(i, self.ky - 1)
        if side == "left":
            return self.node_index(0, j)
        if side == "right":
            return self.node_index(self.kx - 1, j)
        raise ValueError(side)


@dataclass(frozen=True)
class ThinMesh:
    """1D mesh of Gamma carrying the clamped cubic Hermite space.

    Scalar DOF ``2 * node + k`` is the value (k = 0) or slope (k = 1); a thin
    field is stored as an array of shape (n_scalar, 2), one column per
    displacement component (z, r).
    """

    length: float
    n: int

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n + 1)

    @property
    def n_scalar(self) -> int:
        return 2 * (self.n + 1)

    @property
    def clamped(self) -> np.ndarray:
        return np.array([0, 1, 2 * self.n, 2 * self.n + 1])

    @property
    def free(self) -> np.ndarray:
        return np.arange(2, 2 * self.n)

    def element_dofs(self) -> np.ndarray:
        e = np.arange(self.n)
        return np.column_stack([2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3])

    def locate(self, z):
        z = np.clip(np.asarray(z, dtype=float), 0.0, self.length)
        e = np.minimum((z / self.h).astype(int), self.n - 1)
        return e, z / self.h - e

    def eval_matrix(self, z, deriv: int = 0) -> sp.csr_matrix:
        """Sparse map from scalar Hermite DOFs to values (or derivatives) at z."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        e, x = self.locate(z)
        basis = hermite_deriv(x, self.h, deriv)
        cols = self.element_dofs()[e]
        rows = np.repeat(np.arange(len(z)), 4)
        return sp.csr_matrix(
            (basis.ravel(), (rows, cols.ravel())), shape=(len(z), self.n_scalar)
        )

    def interpolate(self, func, dfunc) -> np.ndarray:
        """Hermite interpolant of a vector profile: func, dfunc map z -> (len(z), 2)."""
        z = self.nodes
        out = np.zeros((self.n_scalar, 2))
        out[0::2] = func(z)
        out[1::2] = dfunc(z)
        return out


def _interface_rule(length: float, n_fluid: int, n_thin: int):
    breaks = np.unique(
        np.round(
            np.concatenate(
                [np.linspace(0, length, n_fluid + 1), np.linspace(0, length, n_thin + 1)]
            ),
            14,
        )
    )
    x, w = gauss_1d(IFACE_QUAD)
    a, b = breaks[:-1], breaks[1:]
    zq = (a[:, None] + (b - a)[:, None] * x[None, :]).ravel()
    wq = ((b - a)[:, None] * w[None, :]).ravel()
    return zq, wq


@dataclass
class DiscreteSpaces:
    """Every space, numbering and trace map of one reference discretisation."""

    geom: ReferenceGeometry
    res: Resolution
    fluid_v: RectMesh = field(init=False)
    fluid_p: RectMesh = field(init=False)
    thick: RectMesh = field(init=False)
    thin: ThinMesh = field(init=False)

    def __post_init__(self) -> None:
        g, r = self.geom, self.res
        self.cache: dict = {}
        self.fluid_v = RectMesh(0.0, g.L, 0.0, 1.0, r.nz, r.nr, 2)
        self.fluid_p = RectMesh(0.0, g.L, 0.0, 1.0, r.nz, r.nr, 1)
        self.thick = RectMesh(0.0, g.L, 1.0, 1.0 + g.H, r.nz_thick, r.nr_thick, 1)
        self.thin = ThinMesh(g.L, r.n_thin)

        fv, fp = self.fluid_v, self.fluid_p
        self.v_coords = fv.coords()
        self.p_coords = fp.coords()
        self.v_elems = fv.elements()
        self.p_elems = fp.elements()
        hz, hr = fv.hx, fv.hy

        # fluid quadrature (same reference rule on every cell)
        self.qpts, qw = gauss_2d(FLUID_QUAD)
        self.qw = qw * hz * hr
        self.phi2, self.dphi2 = tensor_basis(2, self.qpts, hz, hr)
        self.phi1, self.dphi1 = tensor_basis(1, self.qpts, hz, hr)
        org = fp.element_origins()
        self.qcoords = org[:, None, :] + self.qpts[None, :, :] * np.array([hz, hr])

        # velocity boundary sets
        self.v_left = fv.boundary("left")
        self.v_right = fv.boundary("right")
        self.v_bottom = fv.boundary("bottom")
        self.v_top = fv.boundary("top")
        sigma = np.unique(np.concatenate([self.v_left, self.v_right, self.v_bottom]))
        self.v_sigma = sigma
        self.v_gamma_inner = self.v_top[1:-1]
        self.z_top_v = self.v_coords[self.v_top, 0]

        # ALE (vertex) sets
        self.p_top = fp.boundary("top")
        p_sigma = np.unique(
            np.concatenate([fp.boundary("left"), fp.boundary("right"), fp.boundary("bottom")])
        )
        self.p_sigma = p_sigma
        self.p_gamma_inner = self.p_top[1:-1]
        bnd = np.unique(np.concatenate([p_sigma, self.p_top]))
        self.p_interior = np.setdiff1d(np.arange(fp.n_nodes), bnd)

        # thick layer
        th = self.thick
        self.s_coords = th.coords()
        self.s_elems = th.elements()
        spts, sw = gauss_2d(THICK_QUAD)
        self.s_qw = sw * th.hx * th.hy
        self.s_phi, self.s_dphi = tensor_basis(1, spts, th.hx, th.hy)
        self.s_gamma = th.boundary("bottom")
        self.s_sides = np.unique(np.concatenate([th.boundary("left"), th.boundary("right")]))
        fixed = np.unique(np.concatenate([self.s_gamma, self.s_sides]))
        self.s_free = np.setdiff1d(np.arange(th.n_nodes), fixed)

        # trace maps from the thin Hermite space
        tm = self.thin
        self.T_ale = tm.eval_matrix(self.p_coords[self.p_top, 0])
        self.T_u = tm.eval_matrix(self.z_top_v)
        self.T_s = tm.eval_matrix(self.s_coords[self.s_gamma, 0])

        # interface rule on the union of fluid and thin breakpoints
        self.iz, self.iw = _interface_rule(g.L, r.nz, r.n_thin)
        e = np.minimum((self.iz / hz).astype(int), r.nz - 1)
        x = self.iz / hz - e
        vals = lagrange2(x)
        rows = np.repeat(np.arange(len(self.iz)), 3)
        cols = (2 * e[:, None] + np.arange(3)[None, :]).ravel()
        self.E_top_q = sp.csr_matrix(
            (vals.ravel(), (rows, cols)), shape=(len(self.iz), len(self.v_top))
        )
        self.E_thin_q = tm.eval_matrix(self.iz)
        self.E_thin_q1 = tm.eval_matrix(self.iz, 1)

    # sizes ---------------------------------------------------------------
    @property
    def n_v(self) -> int:
        return self.fluid_v.n_nodes

    @property
    def n_p(self) -> int:
        return self.fluid_p.n_nodes

    @property
    def n_s(self) -> int:
        return self.thick.n_nodes

    @property
    def n_t(self) -> int:
        return self.thin.n_scalar

    def velocity_dof_count(self) -> int:
        return 2 * self.n_v

    def thin_free_count(self) -> int:
        return 2 * len(self.thin.free)


def build_spaces(geom: ReferenceGeometry, res: Resolution | None = None) -> DiscreteSpaces:
    res = res or Resolution()
    res.validate()
    return DiscreteSpaces(geom, res)
