"""Pure-numpy versions of the element kernels (the import-time fallback)."""
import numpy as np

BACKEND = "python"


def strain_at_qp(ue, bgrad):
    """Symmetric transformed gradient at quadrature points.

    ue: (ne, nb, 2) element nodal velocities; bgrad: (ne, nq, nb, 2) transformed
    basis gradients. Returns (ne, nq, 2, 2).
    """
    g = np.einsum("eac,eqal->eqcl", ue, bgrad)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def viscous_element(bgrad, jw, D, p, newton):
    """Element residual and Picard/Newton matrix of int J S(D):D(phi).

    Returns ``(res (ne, nb, 2), mat (ne, nb, 2, nb, 2))``.
    """
    s2 = np.einsum("eqij,eqij->eq", D, D)
    mu = (1.0 + s2) ** (0.5 * (p - 2.0))
    S = mu[..., None, None] * D
    res = np.einsum("eq,eqcl,eqal->eac", jw, S, bgrad)
    wm = jw * mu
    bb = np.einsum("eq,eqak,eqbk->eab", wm, bgrad, bgrad)
    cross = np.einsum("eq,eqad,eqbc->eacbd", wm, bgrad, bgrad)
    mat = 0.5 * (np.einsum("eab,cd->eacbd", bb, np.eye(2)) + cross)
    if newton:
        c = (p - 2.0) * (1.0 + s2) ** (0.5 * (p - 4.0))
        Db = np.einsum("eqcl,eqal->eqac", D, bgrad)
        mat = mat + np.einsum("eq,eqac,eqbd->eacbd", jw * c, Db, Db)
    return res, mat
