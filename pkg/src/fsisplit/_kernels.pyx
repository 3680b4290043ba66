# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled element kernels; signatures mirror fsisplit._kernels_py."""
import numpy as np
from libc.math cimport pow

BACKEND = "cython"


def strain_at_qp(double[:, :, ::1] ue, double[:, :, :, ::1] bgrad):
    cdef Py_ssize_t ne = bgrad.shape[0], nq = bgrad.shape[1], nb = bgrad.shape[2]
    out_arr = np.zeros((ne, nq, 2, 2))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t e, q, a
    cdef double g00, g01, g10, g11
    for e in range(ne):
        for q in range(nq):
            g00 = g01 = g10 = g11 = 0.0
            for a in range(nb):
                g00 += ue[e, a, 0] * bgrad[e, q, a, 0]
                g01 += ue[e, a, 0] * bgrad[e, q, a, 1]
                g10 += ue[e, a, 1] * bgrad[e, q, a, 0]
                g11 += ue[e, a, 1] * bgrad[e, q, a, 1]
            out[e, q, 0, 0] = g00
            out[e, q, 1, 1] = g11
            out[e, q, 0, 1] = 0.5 * (g01 + g10)
            out[e, q, 1, 0] = 0.5 * (g01 + g10)
    return out_arr


def viscous_element(double[:, :, :, ::1] bgrad, double[:, ::1] jw,
                    double[:, :, :, ::1] D, double p, bint newton):
    cdef Py_ssize_t ne = bgrad.shape[0], nq = bgrad.shape[1], nb = bgrad.shape[2]
    res_arr = np.zeros((ne, nb, 2))
    mat_arr = np.zeros((ne, nb, 2, nb, 2))
    cdef double[:, :, ::1] res = res_arr
    cdef double[:, :, :, :, ::1] mat = mat_arr
    cdef Py_ssize_t e, q, a, b, c, d
    cdef double s2, mu, cn, w, wm, wc, bab
    cdef double d00, d01, d11, ba0, ba1, bb0, bb1
    cdef double dba[2]
    cdef double dbb[2]
    for e in range(ne):
        for q in range(nq):
            d00 = D[e, q, 0, 0]
            d01 = D[e, q, 0, 1]
            d11 = D[e, q, 1, 1]
            s2 = d00 * d00 + 2.0 * d01 * d01 + d11 * d11
            mu = pow(1.0 + s2, 0.5 * (p - 2.0))
            w = jw[e, q]
            wm = w * mu
            cn = (p - 2.0) * pow(1.0 + s2, 0.5 * (p - 4.0)) if newton else 0.0
            wc = w * cn
            for a in range(nb):
                ba0 = bgrad[e, q, a, 0]
                ba1 = bgrad[e, q, a, 1]
                dba[0] = d00 * ba0 + d01 * ba1
                dba[1] = d01 * ba0 + d11 * ba1
                res[e, a, 0] += wm * dba[0]
                res[e, a, 1] += wm * dba[1]
                for b in range(nb):
                    bb0 = bgrad[e, q, b, 0]
                    bb1 = bgrad[e, q, b, 1]
                    bab = ba0 * bb0 + ba1 * bb1
                    # 0.5 * mu * (delta_cd b_a.b_b + b_a[d] b_b[c])
                    mat[e, a, 0, b, 0] += 0.5 * wm * (bab + ba0 * bb0)
                    mat[e, a, 0, b, 1] += 0.5 * wm * ba1 * bb0
                    mat[e, a, 1, b, 0] += 0.5 * wm * ba0 * bb1
                    mat[e, a, 1, b, 1] += 0.5 * wm * (bab + ba1 * bb1)
                    if newton:
                        dbb[0] = d00 * bb0 + d01 * bb1
                        dbb[1] = d01 * bb0 + d11 * bb1
                        for c in range(2):
                            for d in range(2):
                                mat[e, a, c, b, d] += wc * dba[c] * dbb[d]
    return res_arr, mat_arr
