import numpy as np
import pytest

from pinsupport.malliavin import Projection
from pinsupport.pathspace import CameronMartinPath, GridPath
from pinsupport.pinned import BridgeEnsemble
from pinsupport.rde import solve_skeleton
from pinsupport.roughlift import brownian_sample
from pinsupport.support import (
    AdmissibilityError,
    admissible_set_probe,
    fit_admissible_skeleton,
    fit_admissible_skeletons,
    support_coverage_test,
    tube_mass_test,
    weighted_lower_bound,
)
from pinsupport.vectorfields import get_system


def _bridge_path(K, seed, b=0.0):
    w = brownian_sample(1, K, seed).values
    t = np.linspace(0, 1, 2**K + 1)[:, None]
    return w - t * w[-1] + t * b


def _interp_residual(x, N):
    """sup distance from x to its piecewise-linear interpolation at the level-N knots."""
    K = int(np.log2(x.shape[0] - 1))
    t = np.linspace(0, 1, x.shape[0])
    knots = x[:: 2 ** (K - N), 0]
    return float(np.max(np.abs(x[:, 0] - np.interp(t, t[:: 2 ** (K - N)], knots))))


def _ensemble(system, a, b, proj, paths, eps):
    n = len(paths)
    return BridgeEnsemble(system, a, b, proj, eps, int(np.log2(paths.shape[1] - 1)), 0, paths,
                          np.arange(n), np.full(n, 1.0 / n), n, eps)


def test_brownian_fit_equals_dyadic_interpolation():
    vf = get_system("brownian")
    for seed in range(3):
        x = _bridge_path(12, seed, b=0.3)
        fit = fit_admissible_skeleton(vf, [0.0], [0.3], None, GridPath(x), 8, seed=seed)
        assert fit.status == "admissible-fit"
        assert fit.endpoint_gap < 1e-8
        assert abs(fit.residual_sup - _interp_residual(x, 8)) < 1e-6


def test_planted_skeleton_is_recovered():
    vf = get_system("smooth")
    a = np.array(vf.default_a)
    h = CameronMartinPath.from_slopes(np.random.default_rng(4).standard_normal((8, 2)))
    paths = solve_skeleton(vf, h, a, K=8).values[None]
    b = paths[0, -1]
    fit = fit_admissible_skeleton(vf, a, b, None, GridPath(paths[0]), 3, seed=1)
    assert fit.residual_sup < 1e-6 and fit.endpoint_gap < 1e-8
    ens = _ensemble("smooth", a, b, Projection.identity(2), paths.repeat(4, axis=0), 0.05)
    rep = support_coverage_test(vf, a, b, None, ens, N=3, delta=1e-4, refine_levels=1)
    assert rep.coverage == pytest.approx(1.0)
    assert rep.medians[4] <= rep.medians[3] + 1e-12


def test_degenerate_system_has_no_admissible_control():
    vf = get_system("degenerate")
    probe = admissible_set_probe(vf, [0.0], [1.0], None, seed=0)
    assert probe.admissible_set_empty
    assert probe.tube["min_gap_over_starts"] >= 0.9
    assert probe.tube["status"] != "admissible-fit"


def test_random_starts_are_deterministic():
    vf = get_system("smooth")
    a = np.array(vf.default_a)
    x = solve_skeleton(vf, CameronMartinPath.linear([0.5, -0.5]), a, K=8).values
    f1 = fit_admissible_skeleton(vf, a, x[-1] + 0.05, None, GridPath(x), 3, seed=7)
    f2 = fit_admissible_skeleton(vf, a, x[-1] + 0.05, None, GridPath(x), 3, seed=7)
    assert np.array_equal(f1.haar, f2.haar)
    assert f1.to_json() == f2.to_json()


def test_refinement_never_increases_residual():
    vf = get_system("brownian")
    paths = np.array([_bridge_path(10, s) for s in range(6)])
    ens = _ensemble("brownian", [0.0], [0.0], Projection.identity(1), paths, 0.05)
    rep = support_coverage_test(vf, [0.0], [0.0], None, ens, N=4, delta=0.2, refine_levels=2)
    assert np.all(np.array(rep.residuals[6]) <= np.array(rep.residuals[4]) + 1e-12)
    assert rep.medians[6] < rep.medians[4]


def test_kolmogorov_fit_is_surjective():
    vf = get_system("kolmogorov")
    P = Projection([[0.0, 1.0]])
    target = GridPath(0.1 * np.sin(np.pi * np.linspace(0, 1, 2**8 + 1))[:, None])
    fits = fit_admissible_skeletons(vf, [0.0, 0.0], [0.0], P, [target], 4, seed=0)
    assert fits[0].surjectivity.surjective
    assert fits[0].endpoint_gap < 1e-8
    assert fits[0].residual_sup < 0.05


def test_coverage_csv_and_json(tmp_path):
    vf = get_system("brownian")
    paths = np.array([_bridge_path(8, s) for s in range(3)])
    ens = _ensemble("brownian", [0.0], [0.0], Projection.identity(1), paths, 0.05)
    rep = support_coverage_test(vf, [0.0], [0.0], None, ens, N=4, refine_levels=1)
    rep.write_csv(tmp_path / "res.csv")
    rows = (tmp_path / "res.csv").read_text().splitlines()
    assert rows[0].startswith("sample,sup_residual_N4,sup_residual_N5")
    assert len(rows) == 4
    rep.save(tmp_path / "rep.json")
    assert "residual_summary" in (tmp_path / "rep.json").read_text()


def test_clopper_pearson_lower_bound():
    w = np.full(400, 1 / 400)
    lb, n = weighted_lower_bound(0.5, w)
    assert n == pytest.approx(400)
    assert 0.43 < lb < 0.5
    assert weighted_lower_bound(0.0, w)[0] == 0.0
    # coverage of the bound on simulated binomial data
    rng = np.random.default_rng(0)
    p = 0.3
    misses = sum(weighted_lower_bound(rng.binomial(200, p) / 200, np.full(200, 1 / 200))[0] > p for _ in range(2000))
    assert misses / 2000 <= 0.015


def test_tube_mass_requires_admissible_center():
    vf = get_system("brownian")
    paths = np.array([_bridge_path(6, s) for s in range(20)])
    ens = _ensemble("brownian", [0.0], [0.0], Projection.identity(1), paths, 0.05)
    with pytest.raises(AdmissibilityError, match="misses b"):
        tube_mass_test(vf, [0.0], [0.0], None, CameronMartinPath.linear([1.0]), 0.5, ens)
    rep = tube_mass_test(vf, [0.0], [0.0], None, CameronMartinPath.zero(1), 10.0, ens)
    assert rep.tube["mass"] == pytest.approx(1.0)
    assert rep.tube["positive"]
    surj = get_system("degenerate")
    with pytest.raises(AdmissibilityError, match="not onto"):
        tube_mass_test(surj, [0.0], [0.0], None, CameronMartinPath.zero(1), 0.5,
                       _ensemble("degenerate", [0.0], [0.0], Projection.identity(1), np.zeros((2, 65, 1)), 0.05))
