import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from viscoslab import grid as sg
from viscoslab.errors import CapabilityError, ConfigurationError, ResolutionError


def test_build_grid_geometry(grid3):
    assert grid3.nz == 33
    assert grid3.interface_index == 16
    assert grid3.dz_minus == pytest.approx(1 / 16)
    assert np.isclose(grid3.node_weights.sum(), 2.0)


@pytest.mark.parametrize("kw, err", [
    (dict(h_minus=1.0), ConfigurationError),
    (dict(n3m=3), ResolutionError),
    (dict(L1=-1.0), ConfigurationError),
    (dict(dim_mode="4D"), ConfigurationError),
])
def test_build_grid_rejects(kw, err):
    args = dict(h_minus=-1.0, h_plus=1.0, L1=1.0, L2=1.0, n1=8, n2=8, n3m=8, n3p=8, dim_mode="3D")
    args.update(kw)
    with pytest.raises(err):
        sg.build_grid(**args)


def test_2d_grid_forces_single_y2_node():
    g = sg.build_grid(-1, 1, 1, 1, 8, 8, 8, 8, "2D")
    assert g.n2 == 1


def test_spectral_horizontal_derivative_exact(grid3):
    f = sg.Field.from_function(grid3, lambda y1, y2, y3, s: np.sin(3 * y1) * np.cos(2 * y2))
    d = sg.apply_derivative(f, (1, 1), 0)
    ref = sg.Field.from_function(grid3, lambda y1, y2, y3, s: -6 * np.cos(3 * y1) * np.sin(2 * y2))
    assert (d - ref).max_abs() < 1e-12


def test_constant_has_zero_derivatives(grid3):
    f = sg.Field.from_function(grid3, lambda y1, y2, y3, s: 0 * y1 + 2.5)
    for alpha, k3 in (((1, 0), 0), ((0, 2), 0), ((0, 0), 1), ((0, 0), 3)):
        assert sg.apply_derivative(f, alpha, k3).max_abs() < 1e-12


@pytest.mark.parametrize("k3, poly, deriv", [
    (1, lambda z: z**2 - 3 * z, lambda z: 2 * z - 3),
    (2, lambda z: z**3 + z**2, lambda z: 6 * z + 2),
])
def test_vertical_stencils_exact_on_low_polynomials(grid3, k3, poly, deriv):
    # the one-sided ends are exact for these degrees, the centered interior too
    f = sg.Field.from_function(grid3, lambda y1, y2, y3, s: poly(y3) + 0 * y1)
    ref = sg.Field.from_function(grid3, lambda y1, y2, y3, s: deriv(y3) + 0 * y1)
    if k3 == 2:
        # the four-point end formula is exact for cubics
        assert (sg.apply_derivative(f, (0, 0), 2) - ref).max_abs() < 1e-9
    else:
        assert (sg.apply_derivative(f, (0, 0), 1) - ref).max_abs() < 1e-10


def test_vertical_first_derivative_second_order():
    errs = []
    for n in (16, 32, 64):
        g = sg.build_grid(-1, 1, 1, 1, 4, 4, n, n)
        f = sg.Field.from_function(g, lambda y1, y2, y3, s: np.sin(2 * y3) + 0 * y1)
        ref = sg.Field.from_function(g, lambda y1, y2, y3, s: 2 * np.cos(2 * y3) + 0 * y1)
        errs.append((sg.apply_derivative(f, (0, 0), 1) - ref).max_abs())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)


def test_fourth_vertical_order_is_a_capability_error(grid3):
    f = sg.Field.zeros(grid3)
    with pytest.raises(CapabilityError):
        sg.apply_derivative(f, (0, 0), 4)


def test_norm_of_sin_matches_closed_form():
    g = sg.build_grid(-np.pi / 2, np.pi / 2, 2 * np.pi, 2 * np.pi, 32, 32, 64, 64)
    f = sg.Field.from_function(g, lambda y1, y2, y3, s: np.sin(y1) + 0 * y3)
    # ∫ sin^2 = π · 2π · π; the first horizontal derivative has the same norm
    ref = 2 * np.pi**3
    assert sg.norm_sq(f, sg.NormSpec(0, 0)) == pytest.approx(ref, rel=1e-12)
    assert sg.norm_sq(f, sg.NormSpec(1, 0)) == pytest.approx(ref, rel=1e-12)
    assert sg.norm_sq(f, sg.NormSpec(1, 0, True)) == pytest.approx(2 * ref, rel=1e-12)


def test_norm_spec_validates():
    with pytest.raises(ConfigurationError):
        sg.NormSpec(4, 0)


def test_interface_jump_and_global_roundtrip(grid2):
    f = sg.Field.from_function(grid2, lambda y1, y2, y3, s: np.cos(y1) * (1 + y3) + 0 * y2)
    assert np.max(np.abs(sg.interface_jump(f))) == 0.0
    back = sg.Field.from_global(grid2, f.to_global())
    assert (back - f).max_abs() == 0.0
    g = sg.Field.from_function(grid2, lambda y1, y2, y3, s: (1.0 if s == "plus" else 0.0) + 0 * y1)
    assert np.allclose(sg.interface_jump(g), 1.0)


def test_snapshot_roundtrip(tmp_path, grid2):
    f = sg.Field.from_function(grid2, lambda y1, y2, y3, s: np.stack([np.sin(y1), y3, y1 * y3]))
    path = tmp_path / "snap.csv"
    sg.export_snapshot_csv(f, path, "eta", t=0.5)
    back, meta = sg.read_snapshot_csv(path)
    assert (back - f).max_abs() == 0.0
    assert float(meta["t"]) == 0.5


coef = st.floats(-2, 2, allow_nan=False)


def _field(grid, a, b, c):
    return sg.Field.from_function(
        grid, lambda y1, y2, y3, s: a * np.sin(y1) * np.cos(y3) + b * np.cos(2 * y2) * y3 + c * y3**2)


@given(coef, coef, coef, coef, coef, coef, st.integers(0, 2), st.integers(0, 2))
def test_norm_triangle_inequality(a1, b1, c1, a2, b2, c2, i, j):
    g = sg.build_grid(-1, 1, 2 * np.pi, 2 * np.pi, 8, 8, 8, 8)
    f, h = _field(g, a1, b1, c1), _field(g, a2, b2, c2)
    spec = sg.NormSpec(i, j, underline=True)
    assert sg.norm(f + h, spec) <= sg.norm(f, spec) + sg.norm(h, spec) + 1e-10


@given(coef, coef, coef, st.floats(-5, 5, allow_nan=False), st.integers(0, 3), st.integers(0, 3))
def test_norm_homogeneity(a, b, c, s, i, j):
    g = sg.build_grid(-1, 1, 2 * np.pi, 2 * np.pi, 8, 8, 8, 8)
    f = _field(g, a, b, c)
    spec = sg.NormSpec(i, j)
    assert sg.norm(f * s, spec) == pytest.approx(abs(s) * sg.norm(f, spec), rel=1e-10, abs=1e-10)


@given(st.integers(0, 3), st.integers(0, 3))
def test_underline_norm_is_partial_sum(i, j):
    g = sg.build_grid(-1, 1, 2 * np.pi, 2 * np.pi, 8, 8, 8, 8)
    f = _field(g, 0.3, -0.7, 0.2)
    total = sum(sg.norm_sq(f, sg.NormSpec(k, j)) for k in range(i + 1))
    assert sg.norm_sq(f, sg.NormSpec(i, j, True)) == pytest.approx(total, rel=1e-12)


def test_shared_derivative_cache_matches_fresh_evaluation():
    g = sg.build_grid(-1, 1, 2 * np.pi, 2 * np.pi, 8, 8, 8, 8)
    f = _field(g, 0.4, -0.3, 0.9)
    cache = sg.DerivativeCache(f)
    for i in range(4):
        for j in range(4):
            spec = sg.NormSpec(i, j, underline=bool((i + j) % 2))
            assert sg.norm_sq(f, spec, cache) == sg.norm_sq(f, spec)


def test_norm_of_sin_on_unit_slab_is_two_pi():
    # ∫ sin² y1 over [0,2π)² × (−1,1) = π · 2π · 2, so the norm is 2π
    g = sg.build_grid(-1, 1, 2 * np.pi, 2 * np.pi, 16, 16, 8, 8)
    f = sg.Field.from_function(g, lambda y1, y2, y3, s: np.sin(y1) + 0 * y3)
    assert sg.norm(f, sg.NormSpec(0, 0)) == pytest.approx(2 * np.pi, rel=1e-12)


def test_constructor_node_layout():
    g = sg.build_grid(-1, 1, 2 * np.pi, 2 * np.pi, 16, 16, 8, 8)
    assert np.allclose(g.z, np.linspace(-1, 1, 17))
    assert g.dz_minus == g.dz_plus == 0.125
    g2 = sg.build_grid(-1, 2, 1, 1, 4, 4, 4, 8)
    assert (g2.dz_minus, g2.dz_plus) == (0.25, 0.25)
    g3 = sg.build_grid(-1, 2, 1, 1, 4, 4, 8, 4)
    assert (g3.dz_minus, g3.dz_plus) == (1 / 8, 2 / 4)


def test_single_mode_derivative_and_identity(grid3):
    f = sg.Field.from_function(grid3, lambda y1, y2, y3, s: np.sin(y1) + 0 * y3)
    ref = sg.Field.from_function(grid3, lambda y1, y2, y3, s: np.cos(y1) + 0 * y3)
    assert (sg.apply_derivative(f, (1, 0), 0) - ref).max_abs() <= 1e-12
    assert (sg.apply_derivative(f, (0, 0), 0) - f).max_abs() == 0.0


def test_norm_examples_zero_and_first_horizontal(grid3):
    z = sg.Field.zeros(grid3)
    for i in range(4):
        for j in range(4):
            assert sg.norm(z, sg.NormSpec(i, j)) == 0.0
    f = sg.Field.from_function(grid3, lambda y1, y2, y3, s: np.sin(y1) + 0 * y3)
    assert sg.norm(f, sg.NormSpec(1, 0)) == pytest.approx(2 * np.pi, rel=1e-12)


def test_interface_jump_of_kinked_ramp(grid2):
    f = sg.Field.from_function(grid2, lambda y1, y2, y3, s: y3 * (y3 > 0) + 0 * y1)
    assert np.abs(sg.interface_jump(f)).max() == 0.0
