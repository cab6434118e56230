import math

import mpmath
from scipy.integrate import trapezoid
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcreg.funcgrid import (
    CoefVector,
    CsvFormatError,
    GridFunction,
    GridMismatchError,
    cosine_basis,
    cosine_matrix,
    inner_product,
    make_uniform_grid,
    project,
    read_grid_functions,
    read_matrix_csv,
    synthesize,
    write_grid_functions,
)

# max |<phi_j, phi_k> - delta_jk| * P**2 over P in [20, 800], measured once
# (5.4e-10) and frozen with a factor 2 margin
ORTHO_C = 1e-9


@pytest.fixture
def g201():
    return make_uniform_grid(201)


def test_two_point_grid():
    g = make_uniform_grid(2)
    np.testing.assert_array_equal(g.points, [0.0, 1.0])
    np.testing.assert_array_equal(g.weights, [0.5, 0.5])


def test_three_point_grid():
    g = make_uniform_grid(3)
    np.testing.assert_allclose(g.points, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(g.weights, [0.25, 0.5, 0.25])


def test_201_point_weights(g201):
    assert g201.weights[0] == pytest.approx(0.0025)
    assert g201.weights[-1] == pytest.approx(0.0025)
    np.testing.assert_allclose(g201.weights[1:-1], 0.005)


@pytest.mark.parametrize("P", [0, 1, -3])
def test_grid_rejects_too_few_points(P):
    with pytest.raises(ValueError):
        make_uniform_grid(P)


@given(st.integers(min_value=2, max_value=5000))
def test_weights_sum_to_one(P):
    g = make_uniform_grid(P)
    assert abs(g.weights.sum() - 1.0) <= 1e-12
    assert np.all(g.weights > 0)
    assert np.all(np.diff(g.points) > 0)
    assert g.points[0] == 0.0 and g.points[-1] == 1.0


def test_inner_product_of_constants(g201):
    one = cosine_basis(0, g201)
    assert inner_product(one, one) == pytest.approx(1.0, abs=1e-14)


def test_cosines_orthonormal(g201):
    phi1, phi2 = cosine_basis(1, g201), cosine_basis(2, g201)
    assert inner_product(phi1, phi1) == pytest.approx(1.0, abs=1e-3)
    assert abs(inner_product(phi1, phi2)) < 1e-3
    assert cosine_basis(3, g201).norm() == pytest.approx(1.0, abs=1e-3)


def test_cosine_endpoints(g201):
    phi1 = cosine_basis(1, g201)
    assert phi1.values[0] == pytest.approx(math.sqrt(2))
    assert phi1.values[-1] == pytest.approx(-math.sqrt(2))


def test_inner_product_grid_mismatch():
    f = cosine_basis(1, make_uniform_grid(10))
    g = cosine_basis(1, make_uniform_grid(11))
    with pytest.raises(GridMismatchError):
        inner_product(f, g)
    with pytest.raises(ValueError):
        project(f, [g])


@pytest.mark.parametrize("P", [20, 57, 201, 500, 1001])
def test_orthonormality_error_scales_as_P_squared(P):
    g = make_uniform_grid(P)
    J = min(20, P // 10)
    B = cosine_matrix(J, g)
    G = (B * g.weights) @ B.T
    assert np.abs(G - np.eye(J)).max() <= ORTHO_C * P**-2


def test_synthesize_unit_vector(g201):
    f = synthesize(CoefVector([1.0]), g201)
    np.testing.assert_allclose(f.values, cosine_basis(1, g201).values)


def _fine_trapezoid_norm2(coeffs, P_fine=20001):
    # independent route: dense trapezoid rule evaluated term by term
    t = np.linspace(0.0, 1.0, P_fine)
    f = np.zeros_like(t)
    for j, c in enumerate(coeffs, start=1):
        f += c * math.sqrt(2) * np.cos(j * math.pi * t)
    return trapezoid(f * f, t)


@pytest.mark.parametrize("power, zeta_arg", [(2, 4), (4, 8)])
def test_synthesized_norm_matches_zeta(g201, power, zeta_arg):
    j = np.arange(1, 201, dtype=float)
    c = CoefVector(j**-power)
    norm2 = synthesize(c, g201).norm() ** 2
    assert norm2 == pytest.approx(float(mpmath.zeta(zeta_arg)), abs=2e-3)
    assert norm2 == pytest.approx(_fine_trapezoid_norm2(c.coeffs), abs=2e-3)


def test_project_recovers_basis_member(g201):
    basis = [cosine_basis(j, g201) for j in (1, 2, 3)]
    np.testing.assert_allclose(project(basis[1], basis).coeffs, [0, 1, 0], atol=1e-3)


def test_project_zero_and_linear(g201):
    basis = [cosine_basis(j, g201) for j in (1, 2, 3)]
    zero = GridFunction(g201, np.zeros(201))
    np.testing.assert_array_equal(project(zero, basis).coeffs, 0.0)
    f = 2 * basis[0] + 3 * basis[1]
    np.testing.assert_allclose(project(f, basis).coeffs, [2, 3, 0], atol=1e-12)


@settings(max_examples=50)
@given(
    P=st.integers(min_value=40, max_value=600),
    data=st.data(),
)
def test_project_synthesize_roundtrip(P, data):
    g = make_uniform_grid(P)
    J = min(20, P // 10)
    coeffs = data.draw(
        st.lists(st.floats(-10, 10, allow_nan=False), min_size=J, max_size=J)
    )
    f = synthesize(CoefVector(coeffs), g)
    basis = [cosine_basis(j, g) for j in range(1, J + 1)]
    scale = 1 + max(abs(c) for c in coeffs)
    np.testing.assert_allclose(project(f, basis).coeffs, coeffs, atol=1e-6 + ORTHO_C * P**-2 * J * scale)


@given(
    st.lists(st.floats(-1e3, 1e3), min_size=7, max_size=7),
    st.lists(st.floats(-1e3, 1e3), min_size=7, max_size=7),
    st.lists(st.floats(-1e3, 1e3), min_size=7, max_size=7),
    st.floats(-10, 10),
)
def test_inner_product_symmetric_bilinear(a, b, c, s):
    g = make_uniform_grid(7)
    f1, f2, f3 = (GridFunction(g, v) for v in (a, b, c))
    assert inner_product(f1, f2) == inner_product(f2, f1)
    lhs = inner_product(f1 * s + f3, f2)
    rhs = s * inner_product(f1, f2) + inner_product(f3, f2)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-6)


def test_grid_function_validates():
    g = make_uniform_grid(3)
    with pytest.raises(ValueError):
        GridFunction(g, [1.0, 2.0])
    with pytest.raises(ValueError):
        GridFunction(g, [1.0, np.nan, 2.0])
    with pytest.raises(ValueError):
        CoefVector([])


def test_csv_roundtrip(tmp_path, g201):
    fs = [cosine_basis(j, g201) * 0.3 for j in range(3)]
    path = tmp_path / "x.csv"
    write_grid_functions(path, fs)
    back = read_grid_functions(path)
    assert len(back) == 3 and back[0].grid == g201
    for a, b in zip(fs, back):
        np.testing.assert_array_equal(a.values, b.values)


def test_csv_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2,3\n4,five,6\n")
    with pytest.raises(CsvFormatError, match="line 2"):
        read_matrix_csv(path)
    path.write_text("1,2,3\n\n4,5\n")
    with pytest.raises(CsvFormatError, match="line 3"):
        read_matrix_csv(path)
