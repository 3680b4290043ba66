import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from fsisplit import FluidLaw, Laws, ReferenceGeometry, Resolution, ThickLaw, ThinLaw, build_spaces
from fsisplit import _kernels_py, kernels
from fsisplit.discretization.assembly import (
    DegenerateWeightError,
    assemble_fluid_operator,
    assemble_mass,
    assemble_pressure_load,
    assemble_structure_operator,
    dual_norm,
    fluid_constraint_basis,
    interval_mass,
    structure_constraint_basis,
)
from fsisplit.discretization.spaces import InvalidResolution
from fsisplit.geometry import harmonic_extension
from fsisplit.scheme import CoupledState, smooth_profile
from dense_reference import admissible_basis, dense_residual, one_by_one_instance, pressure_load


@pytest.fixture(scope="module")
def spaces():
    return build_spaces(ReferenceGeometry(6.0, 0.5), Resolution(8, 4, 8, 2, 8))


@pytest.fixture(scope="module")
def tiny():
    """One fluid element with a curved, moving bilinear map and a two-element shell."""
    return one_by_one_instance()[:4]


# --- counts ----------------------------------------------------------------


def test_velocity_dof_count_on_2x2_grid():
    sp_ = build_spaces(ReferenceGeometry(1.0, 0.5), Resolution(2, 2, 2, 2, 2))
    # order-2 Lagrange nodes on an n x m grid: (2n + 1)(2m + 1) per component
    assert sp_.velocity_dof_count() == 2 * 5 * 5 == 50
    assert sp_.n_p == 9


def test_thin_free_counts():
    one = build_spaces(ReferenceGeometry(), Resolution(2, 2, 2, 2, 1))
    assert one.thin_free_count() == 0
    three = build_spaces(ReferenceGeometry(), Resolution(2, 2, 2, 2, 3))
    # two interior nodes, value and slope each, for both components
    enumerated = [(node, k, c) for node in (1, 2) for k in (0, 1) for c in (0, 1)]
    assert len(three.thin.free) == 4
    assert three.thin_free_count() == len(enumerated) == 8


def test_invalid_resolution():
    with pytest.raises(InvalidResolution):
        build_spaces(ReferenceGeometry(), Resolution(0, 2, 2, 2, 2))


# --- masses ----------------------------------------------------------------


def test_interval_mass_closed_form():
    h = 0.37
    np.testing.assert_allclose(interval_mass(h).toarray(), h / 6 * np.array([[2, 1], [1, 2]]),
                               atol=1e-16)


def test_weighted_mass_is_linear(spaces):
    M1 = assemble_mass(spaces, "velocity")
    M2 = assemble_mass(spaces, "velocity", 2.0)
    assert abs(M2 - 2 * M1).max() == 0.0
    with pytest.raises(DegenerateWeightError):
        assemble_mass(spaces, "pressure", 0.0)
    with pytest.raises(ValueError):
        assemble_mass(spaces, "thick", 2.0)
    with pytest.raises(ValueError):
        assemble_mass(spaces, "vorticity")


def test_bilinear_mass_on_unit_square():
    sp_ = build_spaces(ReferenceGeometry(1.0, 0.5), Resolution(1, 1, 1, 1, 1))
    M = assemble_mass(sp_, "pressure").toarray()
    c = sp_.p_coords
    # int (1-x or x)(1-y or y) products: 1/9 same vertex, 1/18 edge neighbours, 1/36 opposite
    for a in range(4):
        for b in range(4):
            shared = 2 - int(np.sum(c[a] != c[b]))
            assert M[a, b] == pytest.approx({2: 1 / 9, 1: 1 / 18, 0: 1 / 36}[shared], abs=1e-15)


def test_mass_totals(spaces):
    one_v = np.ones(spaces.n_v)
    assert one_v @ (assemble_mass(spaces, "velocity") @ one_v) == pytest.approx(6.0, rel=1e-14)
    one_s = np.ones(spaces.n_s)
    assert one_s @ (assemble_mass(spaces, "thick") @ one_s) == pytest.approx(3.0, rel=1e-14)
    one_t = spaces.thin.interpolate(lambda z: np.ones((len(z), 2)), lambda z: np.zeros((len(z), 2)))
    Mt = assemble_mass(spaces, "thin")
    assert one_t[:, 0] @ (Mt @ one_t[:, 0]) == pytest.approx(6.0, rel=1e-14)


def test_dual_norm(spaces):
    assert dual_norm(np.zeros((spaces.n_v, 2)), spaces) == 0.0
    r = np.random.default_rng(0).standard_normal((spaces.n_v, 2))
    assert dual_norm(3 * r, spaces) == pytest.approx(3 * dual_norm(r, spaces), rel=1e-12)


# --- pressure load ---------------------------------------------------------


def test_pressure_load_examples(spaces):
    assert not np.any(assemble_pressure_load(0.0, 0.0, 0.0, spaces))
    a = assemble_pressure_load(1.5, 0.0, 0.0, spaces)
    b = assemble_pressure_load(3.0, 0.0, 0.0, spaces)
    np.testing.assert_allclose(b, 2 * a, rtol=0, atol=0)
    np.testing.assert_allclose(assemble_pressure_load(lambda t: 1.0 + t, 0.0, 0.5, spaces),
                               assemble_pressure_load(1.5, 0.0, 0.0, spaces))


def test_pressure_load_unit_edge():
    sp_ = build_spaces(ReferenceGeometry(1.0, 0.5), Resolution(1, 1, 1, 1, 1))
    r = assemble_pressure_load(1.0, 0.0, 0.0, sp_)
    left = sp_.v_left[np.argsort(sp_.v_coords[sp_.v_left, 1])]
    # exact edge integrals of the quadratic traces: 1/6, 2/3, 1/6, outward normal (-1, 0)
    np.testing.assert_allclose(r[left, 0], [-1 / 6, -2 / 3, -1 / 6], atol=1e-15)
    assert not np.any(np.delete(r, left, axis=0)) and not np.any(r[:, 1])


def test_pressure_load_matches_gauss_integration(spaces):
    np.testing.assert_allclose(assemble_pressure_load(1.3, -0.4, 0.0, spaces),
                               pressure_load(spaces, 1.3, -0.4), atol=1e-14)


# --- constraint bases --------------------------------------------------------


def test_fluid_constraint_basis_spans_admissible_space(spaces):
    amap = harmonic_extension(smooth_profile(spaces, 0.1), spaces)
    Z = fluid_constraint_basis(amap).toarray()
    N = admissible_basis(spaces, amap)
    assert Z.shape[1] == N.shape[1]
    assert np.abs(Z - N @ (N.T @ Z)).max() < 1e-13
    assert np.linalg.matrix_rank(Z) == Z.shape[1]


def test_structure_constraint_basis(spaces):
    Z = structure_constraint_basis(spaces)
    Y = Z @ np.random.default_rng(1).standard_normal(Z.shape[1])
    nb = 2 * spaces.n_t
    beta, d = Y[:nb].reshape(-1, 2), Y[nb:].reshape(-1, 2)
    np.testing.assert_allclose(d[spaces.s_gamma], spaces.T_s @ beta, atol=1e-14)
    assert not np.any(d[spaces.s_sides])
    assert not np.any(beta[spaces.thin.clamped])


# --- structure operator ----------------------------------------------------


def test_structure_operator_zero_state(spaces):
    op = assemble_structure_operator(CoupledState.zeros(spaces), Laws(thin=ThinLaw("cubic", 2.0)),
                                     0.01, spaces)
    assert not np.any(op.residual(np.zeros(op.Z.shape[1])))


def test_structure_jacobian_matches_finite_differences(spaces):
    laws = Laws(thick=ThickLaw(1.0, 0.5), thin=ThinLaw("cubic", 5.0))
    rng = np.random.default_rng(2)
    s = replace(CoupledState.zeros(spaces), beta=smooth_profile(spaces, 0.1))
    op = assemble_structure_operator(s, laws, 0.01, spaces)
    x, dx = rng.standard_normal((2, op.Z.shape[1]))
    h = 1e-6
    fd = (op.residual(x + h * dx) - op.residual(x - h * dx)) / (2 * h)
    np.testing.assert_allclose(op.jacobian(x) @ dx, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


# --- fluid operator --------------------------------------------------------


def test_fluid_operator_zero_state(spaces):
    amap = harmonic_extension(np.zeros((spaces.n_t, 2)), spaces)
    op = assemble_fluid_operator(CoupledState.zeros(spaces), amap, amap, FluidLaw(), 0.01)
    assert not np.any(op.residual(np.zeros(op.n_red + op.n_p)))


def test_convection_pair_is_skew(tiny):
    sp_, m_old, m_new, half = tiny
    op = assemble_fluid_operator(half, m_old, m_new, FluidLaw(), 0.05)
    C = op.parts["convection"]
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = rng.standard_normal(op.n_uv)
        assert abs(x @ (C @ x)) < 1e-14 * (1 + abs(x) @ (abs(C) @ abs(x)))


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_fluid_residual_matches_dense_assembly(tiny, p):
    sp_, m_old, m_new, half = tiny
    law = FluidLaw(p=p, alpha=0.7, reduction=True)
    load = assemble_pressure_load(0.8, 0.3, 0.0, sp_)
    op = assemble_fluid_operator(half, m_old, m_new, law, 0.05, load)
    rng = np.random.default_rng(5)
    x = rng.standard_normal(op.n_uv)
    pi = rng.standard_normal(op.n_p)
    R, C = dense_residual(sp_, m_old, m_new, half, x, pi, p, 0.7, 0.05, load)
    full = op.apply(x) - op.rhs - op.dt * (op.B.T @ pi)
    np.testing.assert_allclose(full, R, atol=1e-12 * max(1.0, np.abs(R).max()))
    np.testing.assert_allclose(-op.dt * (op.B @ x), C, atol=1e-12)


def test_picard_matrix_reproduces_viscous_term(tiny):
    sp_, m_old, m_new, half = tiny
    op = assemble_fluid_operator(half, m_old, m_new, FluidLaw(p=3.0), 0.05)
    x = np.random.default_rng(6).standard_normal(op.n_uv)
    r, P = op.viscous(x, "picard")
    np.testing.assert_allclose(P @ x, r, atol=1e-13 * np.abs(r).max())


def test_newton_matrix_matches_finite_differences(tiny):
    sp_, m_old, m_new, half = tiny
    op = assemble_fluid_operator(half, m_old, m_new, FluidLaw(p=4.0), 0.05)
    rng = np.random.default_rng(7)
    x, dx = rng.standard_normal((2, op.n_uv))
    _, Jn = op.viscous(x, "newton")
    h = 1e-6
    fd = (op.viscous(x + h * dx)[0] - op.viscous(x - h * dx)[0]) / (2 * h)
    np.testing.assert_allclose(Jn @ dx, fd, atol=1e-6 * np.abs(fd).max())


# --- kernels ---------------------------------------------------------------


def test_backends_agree(spaces):
    if kernels.BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    from fsisplit import _kernels

    amap = harmonic_extension(smooth_profile(spaces, 0.1), spaces)
    from fsisplit.discretization.assembly import transformed_basis_gradients

    bgrad = np.ascontiguousarray(transformed_basis_gradients(amap))
    jw = np.ascontiguousarray(amap.jacobian * spaces.qw)
    ue = np.ascontiguousarray(np.random.default_rng(8).standard_normal((spaces.n_v, 2))[spaces.v_elems])
    Dp, Dc = _kernels_py.strain_at_qp(ue, bgrad), _kernels.strain_at_qp(ue, bgrad)
    np.testing.assert_allclose(Dc, Dp, rtol=1e-13, atol=1e-13)
    for newton in (False, True):
        rp, mp = _kernels_py.viscous_element(bgrad, jw, Dp, 3.0, newton)
        rc, mc = _kernels.viscous_element(bgrad, jw, Dp, 3.0, newton)
        np.testing.assert_allclose(rc, rp, rtol=1e-12, atol=1e-12 * np.abs(rp).max())
        np.testing.assert_allclose(mc, mp, rtol=1e-12, atol=1e-12 * np.abs(mp).max())


def test_pure_python_fallback_selected_by_environment():
    env = dict(os.environ, FSISPLIT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import fsisplit; print(fsisplit.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
