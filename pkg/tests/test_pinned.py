import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pinsupport.errors import NumericalGuardError
from pinsupport.pathspace import BesovParams, CameronMartinPath
from pinsupport.pinned import (
    BridgeEnsemble,
    BumpWeight,
    density_estimate,
    fdd_check,
    gaussian_kernel,
    require_positive_density,
    sample_bridge,
    smooth_cutoff,
    weighted_density_sandwich,
)
from pinsupport.rde import step2_paths
from pinsupport.roughlift import lift_pl
from pinsupport.vectorfields import get_system

PARAMS = BesovParams(0.45, 6)


@given(st.floats(0, 1e30), st.floats(0, 1e30), st.integers(1, 10))
def test_smooth_cutoff_is_a_monotone_bump(u, v, m):
    cu, cv = smooth_cutoff(u, m), smooth_cutoff(v, m)
    assert 0.0 <= cu <= 1.0
    if u <= v:
        assert cu >= cv
    if u <= 1.0:
        assert cu == 1.0
    if u >= 2.0 ** (4 * m):
        assert cu == 0.0


def test_smooth_cutoff_is_continuous_at_the_ends():
    m = 6
    top = 2.0 ** (4 * m)
    assert smooth_cutoff(1.0 + 1e-9, m) > 1 - 1e-6
    assert smooth_cutoff(top * (1 - 1e-9), m) < 1e-6
    assert 0.0 < smooth_cutoff(2.0 ** (2 * m), m) < 1.0


def test_gaussian_kernel_normalised_and_truncated():
    bw = 0.1
    y = np.linspace(-1, 1, 20001)[:, None]
    assert np.trapezoid(gaussian_kernel(y, bw), y[:, 0]) == pytest.approx(1.0, abs=1e-6)
    assert gaussian_kernel(np.array([[0.81]]), bw)[0] == 0.0


def test_brownian_density_at_zero():
    vf = get_system("brownian")
    bw = 0.1
    est = density_estimate(vf, [0.0], [0.0], n_samples=20000, bandwidth=bw, K=4, seed=1)
    exact = 1 / np.sqrt(2 * np.pi * (1 + bw**2))
    assert abs(est.value - exact) < 4 * est.stderr
    assert est.lower99 < est.value < est.upper99


def test_density_is_worker_independent():
    vf = get_system("smooth")
    kw = dict(n_samples=3000, bandwidth=0.2, K=5, seed=3)
    a = density_estimate(vf, vf.default_a, vf.default_b, workers=1, **kw)
    b = density_estimate(vf, vf.default_a, vf.default_b, workers=4, **kw)
    assert a == b


def test_guard_rejects_unreachable_target():
    vf = get_system("brownian")
    est = density_estimate(vf, [0.0], [30.0], n_samples=500, bandwidth=0.05, K=4)
    assert est.value == 0.0
    with pytest.raises(NumericalGuardError, match="not significantly positive"):
        require_positive_density(est)
    with pytest.raises(NumericalGuardError):
        sample_bridge(vf, [0.0], [30.0], eps=0.05, n_target=5, K=4, guard_samples=500)


def test_bump_weight_between_ball_indicators():
    z = lift_pl(CameronMartinPath.linear([0.0]), K=5)
    rng = np.random.default_rng(0)
    dw = rng.standard_normal((50, 32, 1)) * np.sqrt(1 / 32) * rng.uniform(0.1, 3, (50, 1, 1))
    r = 1.5
    inner = BumpWeight(z, r, PARAMS, "ball")(dw)
    bump = BumpWeight(z, r, PARAMS)(dw)
    outer = BumpWeight(z, r, PARAMS, "ball2")(dw)
    assert np.all(inner <= bump) and np.all(bump <= outer)
    assert inner.sum() < outer.sum()


def test_weighted_density_sandwich_is_ordered():
    vf = get_system("brownian")
    z = lift_pl(CameronMartinPath.linear([0.0]), K=5)
    out = weighted_density_sandwich(vf, [0.0], [0.0], None, z, 2.0, PARAMS, 4000, 0.2, 5, 2)
    assert out["inner"].value <= out["bump"].value <= out["outer"].value
    assert out["kernel_hits"] > 0
    with pytest.raises(ValueError):
        weighted_density_sandwich(vf, [0.0], [0.0], None, z, 2.0, PARAMS, 10, 0.2, 6, 2)


@pytest.fixture(scope="module")
def bridge():
    vf = get_system("brownian")
    return sample_bridge(vf, [0.0], [0.0], eps=0.05, n_target=600, K=6, seed=5, guard_samples=2000)


def test_bridge_ensemble_invariants(bridge):
    assert len(bridge) == 600 and bridge.complete
    assert np.all(bridge.paths[:, 0] == 0.0)
    assert np.all(np.abs(bridge.paths[:, -1, 0]) <= 0.05)
    assert bridge.weights.sum() == pytest.approx(1.0)
    assert np.all(np.diff(bridge.indices) > 0)
    assert 0 < bridge.acceptance_rate < 0.2
    assert bridge.effective_size() <= len(bridge)


def test_bridge_drivers_regenerate_paths(bridge):
    vf = get_system("brownian")
    for k in (0, 17, 599):
        x = step2_paths(vf, [0.0], bridge.driver(k)[None])[0]
        assert np.allclose(x, bridge.paths[k], atol=1e-13)


def test_bridge_marginal_variance(bridge):
    # Brownian bridge: Var X_t = t (1 - t)
    x = bridge.marginal(0.5)[:, 0]
    v = np.sum(bridge.weights * x**2)
    assert v == pytest.approx(0.25, abs=0.04)
    with pytest.raises(ValueError):
        bridge.marginal(0.3)


def test_bridge_is_worker_independent():
    vf = get_system("smooth")
    kw = dict(eps=0.2, n_target=50, K=5, seed=9, guard_samples=500)
    a = sample_bridge(vf, vf.default_a, vf.default_b, workers=1, **kw)
    b = sample_bridge(vf, vf.default_a, vf.default_b, workers=3, **kw)
    assert np.array_equal(a.indices, b.indices) and np.array_equal(a.paths, b.paths)
    assert a.n_drawn == b.n_drawn


def test_bridge_save_load_roundtrip(bridge, tmp_path):
    bridge.save(tmp_path / "ens")
    back = BridgeEnsemble.load(tmp_path / "ens")
    assert np.array_equal(back.paths, bridge.paths)
    assert np.array_equal(back.indices, bridge.indices)
    assert np.allclose(back.weights, bridge.weights, rtol=0, atol=0)
    assert back.manifest() == bridge.manifest()


def test_fdd_check_agrees_with_chain(bridge):
    vf = get_system("brownian")
    rep = fdd_check(bridge, [0.25, 0.5], [lambda m: m[:, 0, 0] ** 2, lambda m: m[:, 1, 0] ** 2], vf, n_chain=20000)
    assert rep.chain_hits > 0
    assert all(abs(z) < 4 for z in rep.z)
    with pytest.raises(ValueError):
        fdd_check(bridge, [0.5, 0.25], [lambda m: m[:, 0, 0]], vf, n_chain=10)
