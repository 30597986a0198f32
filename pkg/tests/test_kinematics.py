import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from viscoslab import grid as sg
from viscoslab import kinematics as km
from viscoslab.errors import (ConfigurationError, DegeneracyError, DensityRangeError,
                              DensityRangeWarning)

small_G = arrays(np.float64, (3, 3), elements=st.floats(-0.3, 0.3, allow_nan=False))


def test_rest_state_kinematics(grid3):
    st_ = km.deformation(sg.Field.zeros(grid3, (3,)))
    assert np.all(st_.J.minus == 1.0) and np.all(st_.J.plus == 1.0)
    I = km.eye_like(np.zeros((3, 3)))
    assert np.all(st_.B.minus == I[..., None, None, None])
    assert st_.Btilde_L.max_abs() == 0.0 and st_.Btilde_N.max_abs() == 0.0


def test_uniform_dilation_example():
    G = 0.1 * np.eye(3)
    J, Jinv, A, B, BL, BN = km.kinematics_from_gradient(G)
    assert J == pytest.approx(1.331, abs=1e-14)
    assert np.allclose(B, 1.21 * np.eye(3), atol=1e-14)
    assert np.allclose(BL, 0.2 * np.eye(3), atol=1e-15)
    assert np.allclose(BN, 0.01 * np.eye(3), atol=1e-15)
    div, r2, r3 = km.determinant_expansion(G)
    assert (div, r2, r3) == pytest.approx((0.3, 0.03, 0.001), abs=1e-15)


@given(small_G)
def test_cofactor_matches_adjugate(G):
    F = np.eye(3) + G
    ref = np.linalg.det(F) * np.linalg.inv(F).T
    assert np.allclose(km.cofactor(F), ref, atol=1e-12)
    BL, BN = km.cofactor_split(G)
    assert np.allclose(np.eye(3) + BL + BN, ref, atol=1e-12)


@given(small_G)
def test_determinant_expansion(G):
    div, r2, r3 = km.determinant_expansion(G)
    assert 1 + div + r2 + r3 == pytest.approx(np.linalg.det(np.eye(3) + G), abs=1e-13)


@given(small_G, st.floats(-2, 2, allow_nan=False))
def test_cofactor_split_homogeneity(G, s):
    BL, BN = km.cofactor_split(G)
    BLs, BNs = km.cofactor_split(s * G)
    assert np.allclose(BLs, s * BL, atol=1e-14)
    assert np.allclose(BNs, s * s * BN, atol=1e-13)


def test_degeneracy_reports_location(grid2):
    eta = sg.Field.from_function(grid2, lambda y1, y2, y3, s: np.stack([-1.2 * y1, 0 * y1, 0 * y1]))
    with pytest.raises(DegeneracyError) as exc:
        km.deformation(eta)
    assert exc.value.value <= 0
    assert len(exc.value.location) == 4


def test_pressure_split_sums_to_pressure():
    fl = km.Fluid(2.0, 1.0, 0.5, km.PressureLaw(1.0, 2.0))
    G = 0.01 * np.eye(3)
    J = np.linalg.det(np.eye(3) + G)
    lin, N3, _ = km.pressure_split(np.array(1 / J), np.array(0.03), fl)
    assert lin + N3 == pytest.approx(fl.law.P(2.0 / J), rel=1e-14)


@pytest.mark.parametrize("gamma", [1.4, 2.0, 3.0])
def test_taylor_remainder_quadrature_vs_closed(gamma):
    fl = km.Fluid(1.0, 1.0, 0.0, km.PressureLaw(1.0, gamma))
    s = np.linspace(-0.5, 0.5, 11)
    quad = km.taylor_remainder(s, fl, method="quad")
    P, dP = fl.law.P, fl.law.dP
    exact = P(1.0 + s) - P(1.0) - dP(1.0) * s
    assert np.allclose(quad, exact, atol=1e-12)


def test_density_range_warning_and_error():
    with pytest.warns(DensityRangeWarning):
        km.check_density(np.array([0.2, 1.0]), 1.0)
    with pytest.raises(DensityRangeError):
        km.check_density(np.array([0.1]), 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        km.check_density(np.array([0.5, 2.0]), 1.0)


def test_material_rejects_pressure_mismatch():
    lo = km.Fluid(2.0, 1.0, law=km.PressureLaw(1.0, 2.0))
    up = km.Fluid(1.0, 1.0, law=km.PressureLaw(1.0, 2.0))
    with pytest.raises(ConfigurationError):
        km.MaterialParams(lo, up, 1.0)
    with pytest.raises(ConfigurationError):
        km.Fluid(1.0, 0.0)


def test_potential_closed_form():
    law = km.PressureLaw(4.0, 2.0)
    assert law.potential(0.25, 1.0) == pytest.approx(3.0)
    assert km.PressureLaw(1.0, 1.0).potential(1.0, np.e) == pytest.approx(1.0)


def test_affine_field_has_zero_piola_residual(grid3):
    M = np.array([[0.1, 0.02, 0.03], [-0.05, 0.04, 0.01], [0.02, -0.03, 0.06]])
    eta = sg.Field.from_function(
        grid3, lambda y1, y2, y3, s: np.einsum("ij,j...->i...", M, np.stack([0 * y1, 0 * y2, y3])))
    assert km.piola_residual(km.deformation(eta)) < 1e-10


def test_inverse_defect_small(grid3, ):
    from conftest import smooth_vector

    eta = smooth_vector(grid3, 0.1)
    st_ = km.deformation(eta)
    assert np.max(km.inverse_defect(st_.grad_eta.minus, st_.A.minus)) < 1e-13


def test_normal_cofactor_jump_vanishes_for_continuous_field(grid3):
    from conftest import smooth_vector

    assert np.max(np.abs(km.normal_cofactor_jump(smooth_vector(grid3, 0.1)))) < 1e-12


def test_reconstruct_density_and_height(grid3, params):
    from conftest import smooth_vector

    eta = smooth_vector(grid3, 0.05, seed=3)
    st_ = km.deformation(eta)
    varrho, U, d = km.reconstruct(st_, params)
    assert np.allclose(varrho.minus * st_.J.minus, params.lower.rho_bar)
    assert np.allclose(km.det3(U.plus), st_.J.plus)
    assert np.allclose(d, eta.trace_minus()[2])


def test_kappa_jump_term_for_equal_kappa(grid3):
    # J A e3 is built from horizontal derivatives only, so it has no jump
    from conftest import smooth_vector

    eta = smooth_vector(grid3, 0.1)
    d3 = sg.apply_derivative(eta, (0, 0), 1)
    ref = 3.0 * sg.interface_jump(d3)
    assert np.allclose(km.kappa_jump_term(eta, 3.0, 3.0), ref, atol=1e-13)


def test_cofactor_split_diagonal_example():
    BL, BN = km.cofactor_split(np.diag([0.1, 0.2, 0.3]))
    assert np.allclose(BL, np.diag([0.5, 0.4, 0.3]), atol=1e-15)
    assert np.allclose(BN, np.diag([0.06, 0.03, 0.02]), atol=1e-15)


def test_pressure_split_quadratic_example():
    fl = km.Fluid(1.0, 1.0, 0.0, km.PressureLaw(1.0, 2.0))
    lin, N3, R = km.pressure_split(np.array(1.1), np.array(-0.1), fl)
    assert float(R) == pytest.approx(0.01, abs=1e-15)
    assert float(N3) == pytest.approx(0.01, abs=1e-15)
    assert float(lin + N3) == pytest.approx(1.21, abs=1e-15)
    lin0, N30, R0 = km.pressure_split(np.array(1.0), np.array(0.0), fl)
    assert (float(N30), float(R0), float(lin0)) == (0.0, 0.0, fl.p_bar)


def test_reconstruct_uniform_compression_and_height(grid2, params):
    c = 0.8 ** (1 / 3) - 1.0
    # uniform compression is not periodic, so use the raw gradient
    G = np.diag([c, c, c])
    J, Jinv = km.kinematics_from_gradient(G)[:2]
    assert J == pytest.approx(0.8, rel=1e-14)
    assert params.lower.rho_bar * Jinv == pytest.approx(1.25 * params.lower.rho_bar, rel=1e-14)
    eta = sg.Field.from_function(grid2, lambda y1, y2, y3, s: np.stack(
        [0 * y1, 0 * y1, 0.01 * np.sin(y1) * np.cos(np.pi * y3 / 2)]), continuous=True)
    _, _, d = km.reconstruct(km.deformation(eta), params)
    assert np.allclose(d, 0.01 * np.sin(grid2.y1)[None, :], atol=1e-16)


def test_piola_residual_zero_for_rest(grid3):
    assert km.piola_residual(km.deformation(sg.Field.zeros(grid3, (3,)))) == 0.0


@given(arrays(np.float64, (3, 3), elements=st.floats(-0.6, 0.6, allow_nan=False)))
def test_inverse_consistency_wherever_J_reasonable(G):
    F = np.eye(3) + G
    if np.linalg.det(F) < 1e-3:
        return
    A = km.cofactor(F) / km.det3(F)
    assert km.inverse_defect(G, A) <= 1e-10
