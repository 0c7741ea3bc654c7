import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pinsupport.pathspace import BesovParams, CameronMartinPath, GridPath
from pinsupport.roughlift import (
    RoughPath,
    besov_components,
    besov_distance,
    block_size,
    brownian_increments,
    brownian_paths,
    brownian_sample,
    dilate,
    dyadic_lift,
    homogeneous_norm,
    kl_residual_norms,
    lift_grid,
    lift_pl,
    young_translate,
)

PARAMS = BesovParams(0.45, 6)
finite = st.floats(-3, 3, allow_nan=False)


def _rough(seed, K=4, d=2):
    rng = np.random.default_rng(seed)
    v = np.vstack([np.zeros((1, d)), np.cumsum(rng.standard_normal((2**K, d)), axis=0)])
    a = 0.3 * rng.standard_normal((2**K, d, d))
    return RoughPath(v, a)


def _level2_direct(rp, i, j):
    inc = rp.increments
    out = rp.area[i:j].sum(axis=0)
    for k in range(i, j):
        for l in range(k + 1, j):
            out = out + np.outer(inc[k], inc[l])
    return out


def _besov_brute(x, y, params):
    """Double sum over grid pairs s < t, written out from the definition."""
    K = x.level
    M = 2**K
    dt = 1.0 / M
    p1, p2 = 4 * params.m, 2 * params.m
    s1 = s2 = 0.0
    for i in range(M + 1):
        for j in range(i + 1, M + 1):
            w = dt * dt / ((j - i) * dt) ** (1 + 4 * params.m * params.alpha)
            d1 = x.level1(i, j) - y.level1(i, j)
            d2 = _level2_direct(x, i, j) - _level2_direct(y, i, j)
            s1 += np.linalg.norm(d1) ** p1 * w
            s2 += np.linalg.norm(d2) ** p2 * w
    return s1 ** (1 / p1), s2 ** (1 / p2)


def test_chen_level2_matches_direct_sum():
    rp = _rough(0)
    for i, j in [(0, 16), (3, 11), (5, 6), (7, 7)]:
        assert np.allclose(rp.level2(i, j), _level2_direct(rp, i, j), atol=1e-12)


@given(st.integers(0, 16), st.integers(0, 16), st.integers(0, 16), st.integers(0, 10**6))
def test_chen_identity(i, k, j, seed):
    i, k, j = sorted((i, k, j))
    rp = _rough(seed)
    lhs = rp.level2(i, j)
    rhs = rp.level2(i, k) + rp.level2(k, j) + np.outer(rp.level1(i, k), rp.level1(k, j))
    assert np.allclose(lhs, rhs, atol=1e-10)


@given(arrays(np.float64, (8, 2), elements=finite), st.integers(0, 8), st.integers(0, 8))
def test_pl_lift_is_geometric(u, i, j):
    i, j = sorted((i, j))
    rp = lift_pl(CameronMartinPath.from_slopes(u))
    x = rp.level1(i, j)
    A = rp.level2(i, j)
    assert np.allclose(A + A.T, np.outer(x, x), atol=1e-10)


def test_lift_pl_refines_exactly():
    h = CameronMartinPath.from_slopes(np.array([[1.0, 0.0], [0.0, 1.0]]))
    coarse, fine = lift_pl(h), lift_pl(h, K=5)
    assert np.allclose(fine.level2(0, 32), coarse.level2(0, 2))
    # area of the L-shaped path: integral of x dy = 1/4
    assert fine.level2(0, 32)[0, 1] == pytest.approx(0.25)


def test_dyadic_lift_uses_coarse_interpolation():
    w = brownian_sample(2, 6, 5)
    rp = dyadic_lift(w, 3)
    assert np.allclose(rp.values[::8], w.values[::8])
    assert np.allclose(rp.values[4], 0.5 * (w.values[0] + w.values[8]))


def test_brownian_increment_variance():
    inc = brownian_increments(2, 8, 11, 0, 400)
    assert inc.var() * 2**8 == pytest.approx(1.0, rel=0.02)
    assert abs(inc.mean()) < 3 * np.sqrt(1 / 2**8 / inc.size)


def test_brownian_draws_are_index_addressed():
    d, K = 2, 10
    bs = block_size(d, K)
    full = brownian_increments(d, K, 7, 0, bs + 5)
    tail = brownian_increments(d, K, 7, bs - 3, 8)
    assert np.array_equal(full[bs - 3 :], tail)
    assert np.allclose(np.diff(brownian_sample(d, K, 7, 4).values, axis=0), full[4], atol=1e-14)
    other = brownian_increments(d, K, 7, 0, 4, stream=1)
    assert not np.allclose(other, full[:4])


def test_brownian_paths_start_at_zero():
    p = brownian_paths(3, 5, 0, 0, 6)
    assert p.shape == (6, 33, 3)
    assert np.all(p[:, 0] == 0)


def test_young_translate_of_lift_is_lift_of_sum():
    rng = np.random.default_rng(2)
    k = CameronMartinPath.from_slopes(rng.standard_normal((16, 2)))
    h = CameronMartinPath.from_slopes(rng.standard_normal((4, 2)))
    lhs = young_translate(lift_pl(k), h)
    rhs = lift_pl(k + h)
    assert np.allclose(lhs.values, rhs.values, atol=1e-12)
    assert np.allclose(lhs.area, rhs.area, atol=1e-12)


def test_young_translate_group_law():
    rp = _rough(3)
    h = CameronMartinPath.from_slopes(np.array([[1.0, -2.0], [0.5, 0.0]]))
    g = CameronMartinPath.from_slopes(np.array([[0.0, 1.0]]))
    a = young_translate(young_translate(rp, h), g)
    b = young_translate(rp, h + g)
    assert np.allclose(a.area, b.area, atol=1e-12)
    back = young_translate(young_translate(rp, h), h * -1.0)
    assert np.allclose(back.area, rp.area, atol=1e-12)


def test_dilation_scales_levels():
    rp = _rough(4)
    dr = dilate(rp, -2.0)
    assert np.allclose(dr.level1(2, 9), -2 * rp.level1(2, 9))
    assert np.allclose(dr.level2(2, 9), 4 * rp.level2(2, 9))
    assert homogeneous_norm(dr, PARAMS) == pytest.approx(2 * homogeneous_norm(rp, PARAMS), rel=1e-10)


def test_besov_matches_brute_force_double_sum():
    x, y = _rough(5, K=4), _rough(6, K=4)
    n1, n2 = besov_components(x, y, PARAMS)
    b1, b2 = _besov_brute(x, y, PARAMS)
    assert n1 == pytest.approx(b1, rel=1e-10)
    assert n2 == pytest.approx(b2, rel=1e-10)
    q = BesovParams(0.4, 10)
    assert besov_components(x, y, q) == pytest.approx(_besov_brute(x, y, q), rel=1e-10)


@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_besov_distance_is_symmetric_and_vanishes_on_diagonal(s1, s2):
    x, y = _rough(s1), _rough(s2)
    assert besov_distance(x, x, PARAMS) < 1e-12
    assert besov_distance(x, y, PARAMS) == pytest.approx(besov_distance(y, x, PARAMS), rel=1e-12)


def test_besov_rejects_mismatched_grids():
    with pytest.raises(ValueError):
        besov_distance(_rough(0, K=3), _rough(0, K=4), PARAMS)


def test_homogeneous_norm_frozen_value():
    # frozen from a vectorised cumulative-integral evaluation of the double sum
    rp = lift_grid(brownian_sample(2, 12, 1))
    assert homogeneous_norm(rp, PARAMS) == pytest.approx(4.879333, abs=1e-5)


def test_kl_residual_decreases_with_level():
    r = [np.mean(kl_residual_norms(n, 10, 40, PARAMS, seed=3)) for n in (2, 4, 6)]
    assert r[0] > r[1] > r[2]


def test_rough_path_json_roundtrip(tmp_path):
    rp = _rough(8, K=3, d=3)
    rp.save(tmp_path / "rp.json")
    back = RoughPath.load(tmp_path / "rp.json")
    assert np.array_equal(back.values, rp.values) and np.array_equal(back.area, rp.area)


def test_rough_path_validation():
    with pytest.raises(ValueError):
        RoughPath(np.zeros((5, 2)), np.zeros((4, 3, 3)))
    with pytest.raises(ValueError):
        RoughPath(np.zeros((4, 2)), np.zeros((3, 2, 2)))
    assert GridPath(RoughPath.zero(2, 3).values).level == 3
