"""Reference-element shape functions and Gauss rules.

All reference intervals are [0, 1]; tensor-product quantities are ordered
with the z index fastest, i.e. local node ``(i, j)`` has index ``j * k + i``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_2d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule on the unit square; points are (nq, 2) as (xi, eta)."""
    x, w = gauss_1d(n)
    xi, eta = np.meshgrid(x, x, indexing="xy")
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    wts = np.outer(w, w).ravel()
    return pts, wts


def lagrange1(x):
    x = np.asarray(x, dtype=float)
    return np.stack([1.0 - x, x], axis=-1)


def lagrange1_deriv(x):
    x = np.asarray(x, dtype=float)
    return np.stack([-np.ones_like(x), np.ones_like(x)], axis=-1)


def lagrange2(x):
    x = np.asarray(x, dtype=float)
    return np.stack(
        [2.0 * (x - 0.5) * (x - 1.0), -4.0 * x * (x - 1.0), 2.0 * x * (x - 0.5)],
        axis=-1,
    )


def lagrange2_deriv(x):
    x = np.asarray(x, dtype=float)
    return np.stack([4.0 * x - 3.0, -8.0 * x + 4.0, 4.0 * x - 1.0], axis=-1)


def hermite(x, h: float):
    """Cubic Hermite basis on an element of length h, local coordinate x in [0, 1].

    Order: value at left, slope at left, value at right, slope at right.
    """
    x = np.asarray(x, dtype=float)
    return np.stack(
        [
            1.0 - 3.0 * x**2 + 2.0 * x**3,
            h * (x - 2.0 * x**2 + x**3),
            3.0 * x**2 - 2.0 * x**3,
            h * (-(x**2) + x**3),
        ],
        axis=-1,
    )


def hermite_deriv(x, h: float, order: int = 1):
    """Derivatives of :func:`hermite` with respect to the physical coordinate."""
    x = np.asarray(x, dtype=float)
    if order == 0:
        return hermite(x, h)
    if order == 1:
        return np.stack(
            [
                (-6.0 * x + 6.0 * x**2) / h,
                1.0 - 4.0 * x + 3.0 * x**2,
                (6.0 * x - 6.0 * x**2) / h,
                -2.0 * x + 3.0 * x**2,
            ],
            axis=-1,
        )
    if order == 2:
        return np.stack(
            [
                (-6.0 + 12.0 * x) / h**2,
                (-4.0 + 6.0 * x) / h,
                (6.0 - 12.0 * x) / h**2,
                (-2.0 + 6.0 * x) / h,
            ],
            axis=-1,
        )
    raise ValueError(f"unsupported derivative order {order}")


def tensor_basis(degree: int, pts: np.ndarray, hz: float, hr: float):
    """Values and physical gradients of the tensor Lagrange basis on an hz x hr cell.

    Returns ``(values (nq, nb), grads (nq, nb, 2))``.
    """
    if degree == 1:
        f, df = lagrange1, lagrange1_deriv
    elif degree == 2:
        f, df = lagrange2, lagrange2_deriv
    else:
        raise ValueError(f"unsupported degree {degree}")
    fx, fy = f(pts[:, 0]), f(pts[:, 1])
    dfx, dfy = df(pts[:, 0]) / hz, df(pts[:, 1]) / hr
    k = degree + 1
    vals = np.einsum("qj,qi->qji", fy, fx).reshape(len(pts), k * k)
    gz = np.einsum("qj,qi->qji", fy, dfx).reshape(len(pts), k * k)
    gr = np.einsum("qj,qi->qji", dfy, fx).reshape(len(pts), k * k)
    return vals, np.stack([gz, gr], axis=-1)
