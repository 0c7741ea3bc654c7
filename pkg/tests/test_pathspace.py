import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pinsupport.pathspace import (
    BesovParameterError,
    BesovParams,
    CameronMartinPath,
    GridPath,
    HaarIndex,
    dyadic_project,
    from_haar_coefficients,
    h_inner,
    haar_coefficients,
    haar_indices,
    haar_matrix,
    haar_path,
    haar_phi,
    hoelder_distance,
    hoelder_seminorm,
    read_csv,
    sup_distance,
)

finite = st.floats(-10, 10, allow_nan=False)


def grid_paths(K=4, d=2):
    return arrays(np.float64, (2**K + 1, d), elements=finite).map(GridPath)


def _brute_hoelder(v, alpha):
    n = v.shape[0]
    t = np.linspace(0, 1, n)
    best = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            best = max(best, np.linalg.norm(v[j] - v[i]) / (t[j] - t[i]) ** alpha)
    return best


def test_gridpath_validates_shape():
    with pytest.raises(ValueError):
        GridPath(np.zeros((6, 1)))
    with pytest.raises(ValueError):
        GridPath(np.full((5, 1), np.nan))
    assert GridPath(np.zeros(9)).level == 3


def test_cameron_martin_starts_at_zero():
    with pytest.raises(ValueError):
        CameronMartinPath(np.ones((3, 1)))


def test_h_inner_of_linear_paths():
    h = CameronMartinPath.linear([1.0, 2.0])
    k = CameronMartinPath.linear([3.0, -1.0], level=3)
    assert h_inner(h, k) == pytest.approx(1.0)
    assert h.norm() == pytest.approx(np.sqrt(5.0))


@given(arrays(np.float64, (8, 2), elements=finite), arrays(np.float64, (4, 2), elements=finite))
def test_h_inner_matches_slope_integral(u, v):
    h, k = CameronMartinPath.from_slopes(u), CameronMartinPath.from_slopes(v)
    expected = np.sum(u * np.repeat(v, 2, axis=0)) / 8
    assert h_inner(h, k) == pytest.approx(expected, rel=1e-12, abs=1e-12)
    assert h_inner(h, k) == pytest.approx(h_inner(k, h), rel=1e-12, abs=1e-12)


def test_hoelder_seminorm_matches_brute_force():
    rng = np.random.default_rng(3)
    v = np.cumsum(rng.standard_normal((65, 2)), axis=0)
    assert hoelder_seminorm(GridPath(v), 0.4) == pytest.approx(_brute_hoelder(v, 0.4), rel=1e-12)


@given(grid_paths(), arrays(np.float64, (2,), elements=finite), st.floats(-5, 5))
def test_hoelder_seminorm_shift_and_scale(p, c, s):
    base = hoelder_seminorm(p, 0.4)
    assert hoelder_seminorm(GridPath(p.values + c), 0.4) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert hoelder_seminorm(GridPath(s * p.values), 0.4) == pytest.approx(abs(s) * base, rel=1e-9, abs=1e-9)


@given(grid_paths(), grid_paths())
def test_distances_are_symmetric(p, q):
    assert sup_distance(p, q) == sup_distance(q, p)
    assert hoelder_distance(p, q, 0.4) == pytest.approx(hoelder_distance(q, p, 0.4), rel=1e-12, abs=1e-12)


def test_haar_phi_tent_values():
    idx = HaarIndex(2, 1)
    assert haar_phi(idx, 0.0) == 0.0
    assert haar_phi(idx, 0.25) == pytest.approx(2 ** 0.5 * 0.25)
    assert haar_phi(idx, 0.5) == pytest.approx(0.0)
    assert haar_phi(HaarIndex(0, 1), 0.3) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        HaarIndex(2, 3)


def test_haar_basis_is_orthonormal():
    paths = [haar_path(idx, 2) for idx in haar_indices(4, 2)]
    G = np.array([[h_inner(a, b) for b in paths] for a in paths])
    assert np.max(np.abs(G - np.eye(len(paths)))) < 1e-12
    Q = haar_matrix(5)
    assert np.max(np.abs(Q @ Q.T - np.eye(32))) < 1e-12


@given(arrays(np.float64, (16, 2), elements=finite))
def test_haar_coefficients_roundtrip(u):
    h = CameronMartinPath.from_slopes(u)
    c = haar_coefficients(h, 4)
    assert np.allclose(from_haar_coefficients(c, 4).knots, h.knots, atol=1e-10)
    assert np.sum(c**2) == pytest.approx(h.norm() ** 2, rel=1e-10, abs=1e-10)


def test_dyadic_project_is_h_orthogonal():
    rng = np.random.default_rng(0)
    h = CameronMartinPath.from_slopes(rng.standard_normal((32, 1)))
    p = dyadic_project(h, 2)
    r = h - p
    for idx in haar_indices(2, 1):
        assert abs(h_inner(r, haar_path(idx, 1))) < 1e-12


def test_dyadic_project_of_grid_path_interpolates():
    v = np.concatenate([[0.0], np.arange(1, 17) ** 2.0])
    p = dyadic_project(GridPath(v), 2)
    assert np.allclose(p.knots[:, 0], v[::4])


def test_csv_roundtrip(tmp_path):
    p = GridPath(np.random.default_rng(1).standard_normal((9, 3)))
    p.to_csv(tmp_path / "p.csv")
    assert np.array_equal(read_csv(tmp_path / "p.csv").values, p.values)


def _admissible(alpha, m):
    return 1 / 3 < alpha < 1 / 2 and alpha - 1 / (4 * m) > 1 / 3 and 4 * m * (0.5 - alpha) > 1


@given(st.floats(0.2, 0.6), st.integers(1, 40))
def test_besov_params_reject_exactly_the_invalid_sets(alpha, m):
    if _admissible(alpha, m):
        assert BesovParams(alpha, m).hoelder_exponent == pytest.approx(alpha - 1 / (4 * m))
    else:
        with pytest.raises(BesovParameterError, match="1/3 < alpha < 1/2"):
            BesovParams(alpha, m)


def test_default_besov_params_valid():
    p = BesovParams()
    assert (p.alpha, p.m) == (0.45, 6)
