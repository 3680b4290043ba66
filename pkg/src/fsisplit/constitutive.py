"""Power-law fluid stress, thick-layer elasticity and the thin-structure laws."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla


class CertificationError(RuntimeError):
    """A sampled structural inequality of the power law is violated."""


@dataclass(frozen=True)
class FluidLaw:
    """Carreau-type power law S(D) = (1 + |D|^2)^((p-2)/2) D with slip coefficient alpha.

    ``reduction`` admits p = 2 (the Newtonian path used for comparisons).
    """

    p: float = 3.0
    alpha: float = 1.0
    kappa1: float | None = None
    kappa2: float | None = None
    kappa3: float | None = None
    reduction: bool = False

    def __post_init__(self):
        if self.reduction:
            if self.p < 2:
                raise ValueError(f"p = {self.p} < 2 is outside the supported range")
        elif not self.p > 2:
            raise ValueError(f"power-law exponent must satisfy p > 2, got p = {self.p}")
        if not self.alpha > 0:
            raise ValueError(f"slip coefficient alpha must be positive, got {self.alpha}")

    @property
    def certified(self) -> bool:
        return None not in (self.kappa1, self.kappa2, self.kappa3)


@dataclass(frozen=True)
class ThickLaw:
    mu_s: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if not self.mu_s > 0:
            raise ValueError(f"shear modulus mu_s must be positive, got {self.mu_s}")
        if self.lam < 0:
            raise ValueError(f"Lame parameter lambda must be non-negative, got {self.lam}")


@dataclass(frozen=True)
class ThinLaw:
    """Clamped bending operator plus a pluggable nonlinearity ('zero' or 'cubic')."""

    nonlinearity: str = "zero"
    gamma: float = 0.0
    operator: str = "bending"

    def __post_init__(self):
        if self.nonlinearity not in ("zero", "cubic"):
            raise ValueError(f"unknown thin nonlinearity {self.nonlinearity!r}")
        if self.operator != "bending":
            raise ValueError(f"unknown thin operator {self.operator!r}")
        if self.gamma < 0:
            raise ValueError("cubic strength gamma must be non-negative")

    @property
    def active(self) -> bool:
        return self.nonlinearity == "cubic" and self.gamma != 0.0


# --- fluid ---------------------------------------------------------------


def frobenius2(D):
    D = np.asarray(D, dtype=float)
    return np.einsum("...ij,...ij->...", D, D)


def viscosity(D, p: float):
    return (1.0 + frobenius2(D)) ** (0.5 * (p - 2.0))


def stress(D, law: FluidLaw | float):
    p = law.p if isinstance(law, FluidLaw) else float(law)
    D = np.asarray(D, dtype=float)
    return viscosity(D, p)[..., None, None] * D


def stress_derivative(D, E, p: float):
    """Directional derivative dS(D)[E]."""
    s2 = frobenius2(D)
    mu = (1.0 + s2) ** (0.5 * (p - 2.0))
    c = (p - 2.0) * (1.0 + s2) ** (0.5 * (p - 4.0))
    DE = np.einsum("...ij,...ij->...", D, E)
    return mu[..., None, None] * E + (c * DE)[..., None, None] * D


def _radial(s, p):
    """S(D):D and |S(D)| as functions of s = |D|."""
    mu = (1.0 + s * s) ** (0.5 * (p - 2.0))
    return mu * s * s, mu * s


def _sample_tensors(n: int, radius: float, seed: int):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, 3))
    D = np.empty((n, 2, 2))
    D[:, 0, 0], D[:, 1, 1] = a[:, 0], a[:, 1]
    D[:, 0, 1] = D[:, 1, 0] = a[:, 2]
    D /= np.sqrt(frobenius2(D))[:, None, None]
    D *= np.linspace(0.0, radius, n)[:, None, None]
    return D


def check_constants(law: FluidLaw, sample_radius: float = 10.0, n_samples: int = 10_000,
                    seed: int = 0) -> list[str]:
    """Return a list of violated structural inequalities for the stored constants."""
    k1, k2, k3 = law.kappa1, law.kappa2, law.kappa3
    p = law.p
    s = np.linspace(0.0, sample_radius, n_samples)
    D = _sample_tensors(n_samples, sample_radius, seed)
    SD, Snorm = _radial(s, p)
    S = stress(D, p)
    SDt = np.einsum("nij,nij->n", S, D)
    sDt = np.sqrt(frobenius2(D))
    problems = []
    slack = 1e-12 * (1.0 + s**p)
    if np.any(SD < k1 * s**p - k2 - slack) or np.any(SDt < k1 * sDt**p - k2 - 1e-12 * (1 + sDt**p)):
        problems.append("coercivity")
    # beyond the sample, S:D / |D|^p decreases to 1, so kappa1 <= 1 is necessary
    if k1 > 1.0 + 1e-12:
        problems.append("coercivity")
    if np.any(Snorm > k3 * (s ** (p - 1.0) + 1.0) * (1 + 1e-12)):
        problems.append("growth")
    if k1 <= 0 or k3 <= 0:
        problems.append("positivity")
    return sorted(set(problems))


def certify_constants(law: FluidLaw, sample_radius: float = 10.0, n_samples: int = 10_000,
                      seed: int = 0, n_pairs: int = 1000) -> FluidLaw:
    """Pin (kappa1, kappa2, kappa3) on a deterministic sample and return the certified law.

    kappa1 is the infimum of S(D):D / |D|^p, which for p >= 2 is its limit 1
    at infinity; kappa2 is the largest deficit of the radial profile; kappa3
    covers both the sampled ratio and the tail bound beyond the sample radius.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    p = law.p
    s = np.linspace(0.0, sample_radius, n_samples)
    SD, Snorm = _radial(s, p)
    k1 = 1.0 if law.kappa1 is None else law.kappa1
    k2 = float(max(0.0, np.max(k1 * s**p - SD)))
    tail = (1.0 + 1.0 / sample_radius**2) ** (0.5 * (p - 2.0))
    k3 = float(max(np.max(Snorm / (s ** (p - 1.0) + 1.0)), tail))
    out = replace(law, kappa1=k1, kappa2=k2, kappa3=k3)
    bad = check_constants(out, sample_radius, n_samples, seed)
    gaps = monotonicity_gaps(p, n_pairs, seed=seed)
    if np.any(gaps <= 0):
        bad.append("monotonicity")
    if bad:
        raise CertificationError(f"p = {p}: sampled inequalities violated: {', '.join(bad)}")
    return out


def monotonicity_gaps(p: float, n_pairs: int = 1000, seed: int = 0, scale: float = 3.0):
    """(S(D1) - S(D2)):(D1 - D2) on seeded random symmetric pairs."""
    rng = np.random.default_rng(seed + 1)
    a = rng.standard_normal((2, n_pairs, 3)) * scale
    D = np.zeros((2, n_pairs, 2, 2))
    D[..., 0, 0], D[..., 1, 1] = a[..., 0], a[..., 1]
    D[..., 0, 1] = D[..., 1, 0] = a[..., 2]
    dS = stress(D[0], p) - stress(D[1], p)
    return np.einsum("nij,nij->n", dS, D[0] - D[1])


# --- thick layer ---------------------------------------------------------


def thick_element_stiffness(dphi: np.ndarray, w: np.ndarray, law: ThickLaw) -> np.ndarray:
    """Element matrix of a_S for Q1 vectors, DOF order (node, component)."""
    nb = dphi.shape[1]
    K = np.zeros((nb, 2, nb, 2))
    eye = np.eye(2)
    # 2 mu D(e_c phi_a):D(e_d phi_b) = mu (delta_cd g_a.g_b + g_a[d] g_b[c])
    gg = np.einsum("q,qak,qbk->ab", w, dphi, dphi)
    cross = np.einsum("q,qad,qbc->adbc", w, dphi, dphi)  # g_a[d] g_b[c]
    K += law.mu_s * (np.einsum("ab,cd->acbd", gg, eye) + np.einsum("adbc->acbd", cross))
    div = np.einsum("q,qac,qbd->acbd", w, dphi, dphi)
    K += law.lam * div
    return K.reshape(2 * nb, 2 * nb)


def thick_form(d: np.ndarray, psi: np.ndarray, law: ThickLaw, spaces) -> float:
    """a_S(d, psi) for Q1 fields on the thick mesh of ``spaces``."""
    from .discretization.assembly import thick_stiffness

    if d.shape != (spaces.n_s, 2) or psi.shape != (spaces.n_s, 2):
        raise ValueError("fields do not match the thick mesh")
    K = thick_stiffness(spaces, law)
    return float(d.ravel() @ (K @ psi.ravel()))


# --- thin structure ------------------------------------------------------


def cubic_force(values, gamma: float):
    """Pointwise cubic nonlinearity gamma * (b_z^3, b_r^3)."""
    return gamma * np.asarray(values, dtype=float) ** 3


def thin_apply(beta: np.ndarray, law: ThinLaw, spaces) -> np.ndarray:
    """Discrete action of the bending operator: (K_E beta), shape (n_thin_scalar, 2)."""
    from .discretization.assembly import thin_matrices

    return thin_matrices(spaces)["bending"] @ beta


def nonlinearity_apply(beta: np.ndarray, law: ThinLaw, spaces) -> np.ndarray:
    """Load vector <f(beta), phi> over thin DOFs, integrated with the thin Gauss rule."""
    from .discretization.assembly import thin_quadrature

    if not law.active:
        return np.zeros_like(beta)
    E, w = thin_quadrature(spaces)
    vals = E @ beta
    return E.T @ (w[:, None] * cubic_force(vals, law.gamma))


def nonlinearity_jacobian(beta: np.ndarray, law: ThinLaw, spaces):
    """Per-component Jacobians of :func:`nonlinearity_apply` (two sparse matrices)."""
    import scipy.sparse as sp
    from .discretization.assembly import thin_quadrature

    E, w = thin_quadrature(spaces)
    if not law.active:
        z = sp.csr_matrix((spaces.n_t, spaces.n_t))
        return z, z
    vals = E @ beta
    return tuple(
        (E.T @ sp.diags(3.0 * law.gamma * w * vals[:, c] ** 2) @ E).tocsr() for c in range(2)
    )


def potential(beta: np.ndarray, law: ThinLaw, spaces) -> float:
    """Pi(beta) = gamma/4 * int (b_z^4 + b_r^4), same rule as the load."""
    from .discretization.assembly import thin_quadrature

    if not law.active:
        return 0.0
    E, w = thin_quadrature(spaces)
    vals = E @ beta
    return float(0.25 * law.gamma * np.sum(w[:, None] * vals**4))


def thin_coercivity_constant(spaces) -> float:
    """Smallest generalised eigenvalue of (bending, H^2 Gram) on the clamped space."""
    from .discretization.assembly import thin_matrices

    m = thin_matrices(spaces)
    f = spaces.thin.free
    if len(f) == 0:
        return np.inf
    K = m["bending"][f][:, f].toarray()
    G = (m["mass"] + m["slope"] + m["bending"])[f][:, f].toarray()
    return float(sla.eigh(K, G, eigvals_only=True)[0])


__all__ = [
    "CertificationError",
    "FluidLaw",
    "ThickLaw",
    "ThinLaw",
    "viscosity",
    "stress",
    "stress_derivative",
    "certify_constants",
    "check_constants",
    "monotonicity_gaps",
    "thick_form",
    "thin_apply",
    "nonlinearity_apply",
    "potential",
    "cubic_force",
]
