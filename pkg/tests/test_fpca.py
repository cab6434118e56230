import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcreg.fpca import (
    CovOperator,
    EigenSystem,
    EigenvalueTieWarning,
    eigendecompose,
    empirical_covariance,
    perturbation_report,
    population_covariance,
    read_eigen_csv,
    read_kernel_csv,
    sign_align,
    write_eigen_csv,
    write_kernel_csv,
)
from funcreg.funcgrid import GridFunction, cosine_basis, cosine_matrix, make_uniform_grid
from funcreg.simlab import sample_dataset, study1_spec

THETA = 4.0 * np.arange(1, 51, dtype=float) ** -2


@pytest.fixture(scope="module")
def grid():
    return make_uniform_grid(201)


@pytest.fixture(scope="module")
def phi1(grid):
    return cosine_basis(1, grid)


def _rank_one(f: GridFunction) -> np.ndarray:
    return np.outer(f.values, f.values)


# -- empirical_covariance ---------------------------------------------------


def test_single_sample_gives_zero_kernel(phi1):
    K = empirical_covariance([phi1]).kernel
    np.testing.assert_array_equal(K, 0.0)


def test_symmetric_pair_gives_rank_one(phi1):
    K = empirical_covariance([phi1, -phi1]).kernel
    np.testing.assert_allclose(K, _rank_one(phi1), atol=1e-14)


def test_covariance_matches_brute_force(grid):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 9))
    g = make_uniform_grid(9)
    K = empirical_covariance([GridFunction(g, r) for r in X]).kernel
    xbar = X.mean(axis=0)
    brute = np.zeros((9, 9))
    for u in range(9):
        for v in range(9):
            brute[u, v] = sum((X[i, u] - xbar[u]) * (X[i, v] - xbar[v]) for i in range(6)) / 6
    np.testing.assert_allclose(K, brute, atol=1e-13)


def test_covariance_errors(grid):
    with pytest.raises(ValueError):
        empirical_covariance([])
    with pytest.raises(ValueError):
        empirical_covariance([cosine_basis(1, grid), cosine_basis(1, make_uniform_grid(5))])


def test_large_sample_covariance_close_to_population():
    spec = study1_spec()
    n = 5000
    data = sample_dataset(spec, n, np.random.default_rng(20240101))
    Khat = empirical_covariance((spec.grid, data.X))
    K = spec.covariance
    assert Khat.hs_distance(K) < 0.15
    # entrywise: Gaussian variance of a sample covariance entry is
    # (K_uu K_vv + K_uv^2) / n; calibrated max over the grid ~3.3 sd
    sd = np.sqrt((np.outer(np.diag(K.kernel), np.diag(K.kernel)) + K.kernel**2) / n)
    assert np.max(np.abs(Khat.kernel - K.kernel) / sd) < 4.5


# -- population_covariance ----------------------------------------------------


def test_population_rank_one(grid, phi1):
    K = population_covariance([1.0, 0.0, 0.0], grid).kernel
    np.testing.assert_allclose(K, _rank_one(phi1), atol=1e-14)


def test_population_corner_value(grid):
    K = population_covariance(THETA, grid, J=50).kernel
    truncated = 8 * sum(j**-2 for j in range(1, 51))
    assert K[0, 0] == pytest.approx(truncated, abs=1e-10)
    # 8 * zeta(2) minus a tail of at most 8/J
    assert abs(K[0, 0] - 8 * math.pi**2 / 6) <= 8 / 50


def test_population_zero_and_negative(grid):
    np.testing.assert_array_equal(population_covariance(np.zeros(4), grid).kernel, 0.0)
    with pytest.raises(ValueError):
        population_covariance([1.0, -0.1], grid)


# -- eigendecompose -----------------------------------------------------------


def test_rank_one_eigenpair(grid, phi1):
    sys = eigendecompose(CovOperator(grid, _rank_one(phi1)), 3)
    assert sys.eigenvalues[0] == pytest.approx(1.0, abs=1e-3)
    aligned = sign_align(sys, [phi1])
    np.testing.assert_allclose(aligned.vectors[0], phi1.values, atol=1e-8)


def test_population_eigenvalues(grid):
    sys = eigendecompose(population_covariance(THETA, grid), 10)
    np.testing.assert_allclose(sys.eigenvalues[:5], [4, 1, 4 / 9, 1 / 4, 4 / 25], rtol=1e-2)


def test_centering_caps_rank():
    rng = np.random.default_rng(3)
    g = make_uniform_grid(51)
    X = rng.standard_normal((3, 51))
    sys = eigendecompose(empirical_covariance((g, X)))
    assert np.count_nonzero(sys.eigenvalues > 1e-10) <= 2


def _random_system(seed, n=40, P=101):
    spec = study1_spec(P=P)
    data = sample_dataset(spec, n, np.random.default_rng(seed))
    return eigendecompose(empirical_covariance((spec.grid, data.X)), P), data


@pytest.mark.parametrize("seed", range(3))
def test_eigenfunctions_orthonormal_and_sorted(seed):
    sys, _ = _random_system(seed)
    r = np.count_nonzero(sys.eigenvalues > 1e-10 * sys.eigenvalues[0])
    G = sys.gram()[:r, :r]
    np.testing.assert_allclose(G, np.eye(r), atol=1e-8)
    assert np.all(np.diff(sys.eigenvalues) <= 0)
    assert np.all(sys.eigenvalues >= 0)


@pytest.mark.parametrize("seed", range(3))
def test_full_reconstruction(seed):
    sys, data = _random_system(seed)
    K = empirical_covariance((sys.grid, data.X)).kernel
    np.testing.assert_allclose(sys.reconstruct(), K, atol=1e-6)


def test_permutation_invariance():
    sys, data = _random_system(11, n=30, P=61)
    perm = np.random.default_rng(1).permutation(data.n)
    other = eigendecompose(empirical_covariance((sys.grid, data.X[perm])), 61)
    np.testing.assert_allclose(other.eigenvalues, sys.eigenvalues, atol=1e-12)
    aligned = sign_align(other, sys.vectors[:5])
    np.testing.assert_allclose(aligned.vectors[:5], sys.vectors[:5], atol=1e-7)


def test_tie_warning(grid):
    K = population_covariance([1.0, 1.0, 0.5], grid)
    with pytest.warns(EigenvalueTieWarning):
        eigendecompose(K, 3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        eigendecompose(population_covariance([1.0, 0.9, 0.5], grid), 3)


# -- sign_align ---------------------------------------------------------------


def test_sign_align(grid, phi1):
    sys = eigendecompose(population_covariance(THETA, grid), 5)
    same = sign_align(sys, sys.eigenfunctions)
    np.testing.assert_array_equal(same.vectors, sys.vectors)
    flipped = EigenSystem(grid, sys.eigenvalues, np.vstack([-phi1.values, sys.vectors[1:]]))
    fixed = sign_align(flipped, [phi1])
    np.testing.assert_allclose(fixed.vectors[0], phi1.values, atol=1e-12)
    np.testing.assert_array_equal(fixed.eigenvalues, flipped.eigenvalues)


def test_sign_align_zero_inner_product_keeps_sign(grid, phi1):
    sys = EigenSystem(grid, [1.0], phi1.values[None, :])
    other = cosine_basis(2, grid)
    out = sign_align(sys, [other * -1.0])
    np.testing.assert_array_equal(out.vectors, sys.vectors)


# -- perturbation_report ------------------------------------------------------


def _true_pairs(grid, J=50):
    return THETA, cosine_matrix(J, grid)


def test_report_identical_operators(grid):
    K = population_covariance(THETA, grid)
    sys = eigendecompose(K, 10)
    rep = perturbation_report(K, K, sys, _true_pairs(grid), 5)
    assert rep.delta_norm == 0.0
    assert rep.eigenvalue_gaps < 1e-12
    assert max(rep.aligned_eigenfunction_errors) < 1e-9


def test_report_rank_one_shift(grid, phi1):
    K = population_covariance(THETA, grid)
    Khat = CovOperator(grid, K.kernel + 0.1 * _rank_one(phi1))
    sys = eigendecompose(Khat, 10)
    rep = perturbation_report(Khat, K, sys, _true_pairs(grid), 5)
    assert rep.delta_norm == pytest.approx(0.1, abs=1e-10)
    assert abs(sys.eigenvalues[0] - 4.0) == pytest.approx(0.1, abs=1e-10)
    assert rep.eigenvalue_gaps == pytest.approx(0.1, abs=1e-10)


def test_report_rejects_too_many_components(grid):
    K = population_covariance(THETA, grid)
    sys = eigendecompose(K, 3)
    with pytest.raises(ValueError):
        perturbation_report(K, K, sys, _true_pairs(grid), 4)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.sampled_from([5, 20, 100]))
def test_weyl_and_eigenfunction_bounds(seed, n):
    spec = study1_spec()
    data = sample_dataset(spec, n, np.random.default_rng(seed))
    Khat = empirical_covariance((spec.grid, data.X))
    sys = eigendecompose(Khat, min(n, 201))
    J = min(5, n - 1)
    rep = perturbation_report(Khat, spec.covariance, sys, (spec.theta, spec.basis), J)
    assert rep.eigenvalue_gaps <= rep.delta_norm + 1e-6
    assert max(rep.aligned_eigenfunction_errors) <= math.sqrt(8) * rep.delta_norm + 1e-6
    assert rep.eigenvalue_bound_holds and rep.eigenfunction_bound_holds


# -- CSV ----------------------------------------------------------------------


def test_kernel_and_eigen_csv_roundtrip(tmp_path):
    g = make_uniform_grid(21)
    K = population_covariance([2.0, 1.0, 0.25], g)
    write_kernel_csv(tmp_path / "k.csv", K)
    back = read_kernel_csv(tmp_path / "k.csv")
    np.testing.assert_array_equal(back.kernel, K.kernel)
    sys = eigendecompose(K, 3)
    write_eigen_csv(tmp_path / "vals.csv", tmp_path / "funcs.csv", sys)
    sys2 = read_eigen_csv(tmp_path / "vals.csv", tmp_path / "funcs.csv")
    np.testing.assert_array_equal(sys2.eigenvalues, sys.eigenvalues)
    np.testing.assert_array_equal(sys2.vectors, sys.vectors)
