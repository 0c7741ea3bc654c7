"""The twelve acceptance criteria as runnable checks with a JSON scoreboard.

Each criterion returns a :class:`CriterionResult` made of named checks with
their measured value and threshold.  Results depend only on the seed; the
wall-clock time of each criterion is kept apart so the scoreboard stays
byte-identical across runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kstwobign

from .errors import NumericalGuardError
from .malliavin import Projection, gram_deterministic, gram_stochastic, hormander_check
from .pathspace import BesovParams, CameronMartinPath, GridPath
from .pinned import density_estimate, fdd_check, require_positive_density, sample_bridge, weighted_density_sandwich
from .rde import solve_rde, solve_skeleton, solve_variational, solve_variational_rough, step2_paths
from .roughlift import (
    _pl_lift,
    besov_distance,
    brownian_increments,
    brownian_sample,
    dilate,
    kl_residual_stats,
    lift_grid,
    lift_pl,
    young_translate,
)
from .support import admissible_set_probe, support_coverage_test, tube_mass_test
from .vectorfields import get_system

PARAMS = BesovParams(0.45, 6)
# zeta(1/2) / sqrt(2 pi): barrier shift for a Brownian maximum observed on a grid
MONITORING_BETA = 0.5826


@dataclass
class Check:
    name: str
    value: object
    threshold: str
    passed: bool

    def to_json(self) -> dict:
        return {"name": self.name, "value": _plain(self.value), "threshold": self.threshold, "passed": bool(self.passed)}


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


@dataclass
class CriterionResult:
    number: int
    title: str
    budget_s: float
    checks: list = field(default_factory=list)
    seconds: float = 0.0
    note: str = ""

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, value, threshold, passed):
        self.checks.append(Check(name, value, threshold, bool(passed)))

    def to_json(self) -> dict:
        out = {
            "criterion": self.number,
            "title": self.title,
            "passed": self.passed,
            "budget_s": self.budget_s,
            "checks": [c.to_json() for c in self.checks],
        }
        if self.note:
            out["note"] = self.note
        return out

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        failed = [c.name for c in self.checks if not c.passed]
        tail = f" (failed: {', '.join(failed)})" if failed else ""
        return f"[{status}] criterion {self.number:2d}: {self.title} [{self.seconds:.1f}s / {self.budget_s:.0f}s]{tail}"


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), 1e-300))


# -- 1 ------------------------------------------------------------------------


def criterion_1(seed: int = 42) -> CriterionResult:
    r = CriterionResult(1, "Chen and shuffle identities of piecewise-linear lifts", 5)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    chen, shuffle = 0.0, 0.0
    M = 2**8
    for _ in range(100):
        rp = lift_grid(GridPath(np.vstack([np.zeros((1, 2)), np.cumsum(rng.standard_normal((M, 2)) / 16, axis=0)])))
        for _ in range(5):
            i, j, k = np.sort(rng.choice(M + 1, 3, replace=False))
            x_ij, x_jk = rp.level1(i, j), rp.level1(j, k)
            lhs = rp.level2(i, k)
            rhs = rp.level2(i, j) + rp.level2(j, k) + np.outer(x_ij, x_jk)
            scale = max(1.0, float(np.sum(rp.level1(i, k) ** 2)))
            chen = max(chen, float(np.max(np.abs(lhs - rhs))) / scale)
            s = rp.level2(i, k)
            x = rp.level1(i, k)
            shuffle = max(shuffle, float(np.max(np.abs(0.5 * (s + s.T) - 0.5 * np.outer(x, x)))) / scale)
    r.add("max relative Chen defect", chen, "<= 1e-12", chen <= 1e-12)
    r.add("max relative shuffle defect", shuffle, "<= 1e-12", shuffle <= 1e-12)
    return r


# -- 2 ------------------------------------------------------------------------


def criterion_2(seed: int = 42) -> CriterionResult:
    r = CriterionResult(2, "Young translation and dilation identities", 10)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    K = 8
    worst_t, worst_d = 0.0, 0.0
    for _ in range(50):
        h = CameronMartinPath.from_slopes(rng.standard_normal((2**5, 2)))
        k = CameronMartinPath.from_slopes(rng.standard_normal((2**6, 2)))
        worst_t = max(worst_t, besov_distance(young_translate(lift_pl(k, K), h), lift_pl(k + h, K), PARAMS))
        c = float(rng.uniform(-3, 3))
        a, b = dilate(lift_pl(h, K), c), lift_pl(h * c, K)
        worst_d = max(worst_d, float(np.max(np.abs(a.values - b.values))), float(np.max(np.abs(a.area - b.area))))
    r.add("max d(T_h L(k), L(k+h))", worst_t, "<= 1e-10", worst_t <= 1e-10)
    r.add("max |dilate(L(h), c) - L(ch)|", worst_d, "<= 1e-12", worst_d <= 1e-12)
    return r


# -- 3 ------------------------------------------------------------------------


def criterion_3(seed: int = 42) -> CriterionResult:
    r = CriterionResult(3, "Karhunen-Loeve residual norms decrease in n", 60)
    stats = [kl_residual_stats(n, 12, 100, PARAMS, seed) for n in (2, 4, 6)]
    means = [s["mean"] for s in stats]
    r.add("mean |||T_{-w(n)} L(w(12))||| for n = 2, 4, 6", means, "strictly decreasing",
          means[0] > means[1] > means[2])
    return r


# -- 4 ------------------------------------------------------------------------


def criterion_4(seed: int = 42) -> CriterionResult:
    r = CriterionResult(4, "skeleton solver on the exponential system", 5)
    vf = get_system("geometric")
    h = CameronMartinPath.linear([1.0])
    end = solve_skeleton(vf, h, [1.0], 10).values[-1, 0]
    r.add("|Psi(h)_1 - e| at K = 10", abs(end - np.e), "<= 1e-6", abs(end - np.e) <= 1e-6)
    errs = [abs(solve_skeleton(vf, h, [1.0], K).values[-1, 0] - np.e) for K in range(1, 7)]
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    r.add("RK4 error ratio per halving, K = 1..6", ratios, "in [12, 20]", all(12 <= q <= 20 for q in ratios))
    return r


# -- 5 ------------------------------------------------------------------------


def criterion_5(seed: int = 42) -> CriterionResult:
    r = CriterionResult(5, "step-2 scheme strong order and exactness", 60)
    vf = get_system("geometric")
    Kmax = 11
    dw = brownian_increments(1, Kmax, seed, 0, 200)
    exact = np.exp(dw.sum(axis=1)[:, 0])
    levels = list(range(6, 12))
    errs = []
    for K in levels:
        coarse = dw.reshape(200, 2**K, 2 ** (Kmax - K), 1).sum(axis=2)
        x1 = step2_paths(vf, [1.0], coarse, keep_path=False)[:, 0]
        errs.append(float(np.mean(np.abs(x1 - exact))))
    slope = -float(np.polyfit(levels, np.log2(errs), 1)[0])
    r.add("strong-error log2 slope over K = 6..11", slope, "in [0.7, 1.3]", 0.7 <= slope <= 1.3)
    add = get_system("additive")
    w = brownian_sample(2, 10, seed)
    a = np.array([0.3, -0.2])
    x = solve_rde(add, lift_grid(w), a).values
    err = float(np.max(np.abs(x - (a + w.values))))
    r.add("constant-field system vs a + w", err, "<= 1e-12 (rounding)", err <= 1e-12)
    return r


# -- 6 ------------------------------------------------------------------------


def criterion_6(seed: int = 42) -> CriterionResult:
    r = CriterionResult(6, "first and second variations", 10)
    vf = get_system("smooth")
    a = np.array(vf.default_a)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(6,)))
    h = CameronMartinPath.from_slopes(rng.standard_normal((8, 2)))
    dirs = [CameronMartinPath.from_slopes(rng.standard_normal((4, 2))) for _ in range(2)]
    K = 10
    B = solve_variational(vf, h, a, dirs, pairs=[(0, 1), (1, 0), (0, 0)], K=K)

    def end(hh):
        return solve_skeleton(vf, hh, a, K).values[-1]

    e1 = 1e-3
    fd1 = [(end(h + l * e1) - end(h - l * e1)) / (2 * e1) for l in dirs]
    err1 = max(_rel(B.xi1[i].values[-1], fd1[i]) for i in range(2))
    e2 = 1e-2
    p, q = dirs
    fd2 = (end(h + (p + q) * e2) - end(h + (p - q) * e2) - end(h + (q - p) * e2) + end(h - (p + q) * e2)) / (4 * e2**2)
    err2 = _rel(B.xi2[(0, 1)].values[-1], fd2)
    sym = float(np.max(np.abs(B.xi2[(0, 1)].values - B.xi2[(1, 0)].values)))

    # rough version along a Brownian driver
    rp = lift_grid(brownian_sample(2, 8, seed))
    R = solve_variational_rough(vf, rp, a, dirs, pairs=[(0, 1), (1, 0)])

    def rend(l, c):
        return solve_rde(vf, young_translate(rp, l * c), a).values[-1]

    fdr1 = [(rend(l, e1) - rend(l, -e1)) / (2 * e1) for l in dirs]
    errr1 = max(_rel(R.xi1[i].values[-1], fdr1[i]) for i in range(2))
    fdr2 = (rend(p + q, e2) - rend(p - q, e2) - rend(q - p, e2) + rend(p + q, -e2)) / (4 * e2**2)
    errr2 = _rel(R.xi2[(0, 1)].values[-1], fdr2)
    symr = float(np.max(np.abs(R.xi2[(0, 1)].values - R.xi2[(1, 0)].values)))

    r.add("xi1 vs central differences (skeleton)", err1, "<= 1e-4", err1 <= 1e-4)
    r.add("xi1 vs central differences (rough)", errr1, "<= 1e-4", errr1 <= 1e-4)
    r.add("xi2 vs second differences (skeleton)", err2, "<= 1e-3", err2 <= 1e-3)
    r.add("xi2 vs second differences (rough)", errr2, "<= 1e-3", errr2 <= 1e-3)
    r.add("xi2 symmetry", max(sym, symr), "<= 1e-10", max(sym, symr) <= 1e-10)

    geo = get_system("geometric")
    t = CameronMartinPath.linear([1.0])
    G = solve_variational(geo, t, [1.0], [t], pairs=[(0, 0)], K=K)
    g1, g2 = G.xi1[0].values[-1, 0], G.xi2[(0, 0)].values[-1, 0]
    r.add("exponential system xi1_1 - e", abs(g1 - np.e), "<= 1e-4", abs(g1 - np.e) <= 1e-4)
    r.add("exponential system xi2_1 - e", abs(g2 - np.e), "<= 1e-4", abs(g2 - np.e) <= 1e-4)
    return r


# -- 7 ------------------------------------------------------------------------


KOLMOGOROV_GRAM = np.array([[1.0, 0.5], [0.5, 1.0 / 3.0]])


def criterion_7(seed: int = 42) -> CriterionResult:
    r = CriterionResult(7, "Malliavin covariance and bracket condition", 30)
    add = get_system("additive")
    Cadd = gram_deterministic(add, CameronMartinPath.zero(2), [0.0, 0.0], None, 8).matrix
    err_add = float(np.max(np.abs(Cadd - np.eye(2))))
    r.add("additive Gram - I", err_add, "<= 1e-12 (exact)", err_add <= 1e-12)
    kol = get_system("kolmogorov")
    h = CameronMartinPath.zero(1)
    Ck = gram_deterministic(kol, h, [0.0, 0.0], None, 8).matrix
    err_k = float(np.max(np.abs(Ck - KOLMOGOROV_GRAM)))
    r.add("Kolmogorov deterministic Gram at N = 8", err_k, "<= 1e-4 entrywise", err_k <= 1e-4)
    rp = lift_grid(brownian_sample(1, 10, seed))
    Cs = gram_stochastic(kol, rp, [0.0, 0.0]).matrix
    err_s = float(np.max(np.abs(Cs - KOLMOGOROV_GRAM)))
    r.add("Kolmogorov stochastic Gram", err_s, "<= 1e-8", err_s <= 1e-8)
    lams = [gram_deterministic(kol, h, [0.0, 0.0], None, N).lambda_min for N in range(1, 9)]
    mono = all(lams[i + 1] >= lams[i] - 1e-14 for i in range(len(lams) - 1))
    r.add("lambda_min over N = 1..8", lams, "non-decreasing", mono)
    l1 = hormander_check(kol, [0.0, 0.0], 1)
    l2 = hormander_check(kol, [0.0, 0.0], 2)
    r.add("Hormander statistic at L = 1", l1.lambda_min, "fails (<= tol)", not l1.spans)
    r.add("Hormander statistic at L = 2", l2.lambda_min, "passes (> tol)", l2.spans)
    return r


# -- 8 ------------------------------------------------------------------------


def criterion_8(seed: int = 42, workers: int = 1) -> CriterionResult:
    r = CriterionResult(8, "endpoint density estimation", 120)
    bm = get_system("brownian")
    p_bm = density_estimate(bm, [0.0], [0.0], None, 1_000_000, 0.05, 6, seed, workers=workers)
    r.add("p(1, 0, 0) for X = w", p_bm.value, "0.39894 +- 0.01", abs(p_bm.value - 0.39894) <= 0.01)
    kol = get_system("kolmogorov")
    p_k = density_estimate(kol, [0.0, 0.0], [0.0, 0.0], None, 4_000_000, 0.03, 6, seed, workers=workers)
    r.add("p(1, 0, 0) for Kolmogorov", p_k.value, "0.5513 +- 0.02", abs(p_k.value - 0.5513) <= 0.02)
    deg = get_system("degenerate")
    p_d = density_estimate(deg, [0.0], [1.0], None, 100_000, 0.05, 6, seed, workers=workers)
    r.add("degenerate upper 99% bound", p_d.upper99, "< 1e-3", p_d.upper99 < 1e-3)
    try:
        require_positive_density(p_d)
        tripped = False
    except NumericalGuardError:
        tripped = True
    r.add("degenerate density guard trips", tripped, "trips", tripped)
    return r


# -- 9 ------------------------------------------------------------------------


def _fdd_functions():
    return [
        lambda m: m[:, 0, 0] ** 2,
        lambda m: m[:, 1, 0] ** 2,
        lambda m: m[:, 2, 0] ** 2,
        lambda m: m[:, 0, 0] * m[:, 2, 0],
        lambda m: np.ones(len(m)),
    ]


def criterion_9(seed: int = 42, workers: int = 1) -> CriterionResult:
    r = CriterionResult(9, "bridge sampling of X = w pinned 0 -> 0", 180)
    bm = get_system("brownian")
    ens = sample_bridge(bm, [0.0], [0.0], None, 0.05, 100_000, K=6, seed=seed, workers=workers)
    m = ens.marginal(0.5)[:, 0]
    mean = np.sum(ens.weights * m)
    var = float(np.sum(ens.weights * (m - mean) ** 2))
    r.add("accepted paths", len(ens), "= 100000", len(ens) == 100_000)
    r.add("marginal variance at t = 1/2", var, "0.25 +- 0.01", abs(var - 0.25) <= 0.01)
    rep = fdd_check(ens, [0.25, 0.5, 0.75], _fdd_functions(), bm, n_chain=2_000_000, workers=workers)
    z = np.array(rep.z)
    r.add("fdd z-scores at {1/4, 1/2, 3/4}", z, "|z| <= 3", bool(np.all(np.abs(z) <= 3)))
    gap = float(np.max(np.abs(ens.paths[:, -1, 0])))
    r.add("max endpoint gap", gap, "<= eps = 0.05", gap <= 0.05)
    return r


# -- 10 -----------------------------------------------------------------------

SUPPORT_PATHS = 120


def criterion_10(seed: int = 42, workers: int = 1) -> CriterionResult:
    r = CriterionResult(10, "support, forward inclusion", 180)
    bm = get_system("brownian")
    ens = sample_bridge(bm, [0.0], [0.0], None, 0.05, SUPPORT_PATHS, K=12, seed=seed, workers=workers)
    rep = support_coverage_test(bm, [0.0], [0.0], None, ens, N=8, delta=0.2, tau=1e-6, seed=seed)
    r.add("coverage, X = w (N = 8, delta = 0.2)", rep.coverage, ">= 0.99", rep.coverage >= 0.99)
    r.add("median residual N = 8 -> 10, X = w", [rep.medians[8], rep.medians[10]], "decreasing",
          rep.medians[10] < rep.medians[8])
    kol = get_system("kolmogorov")
    P = Projection([[0.0, 1.0]])
    ensk = sample_bridge(kol, [0.0, 0.0], [0.0], P, 0.05, SUPPORT_PATHS, K=12, seed=seed, workers=workers)
    repk = support_coverage_test(kol, [0.0, 0.0], [0.0], P, ensk, N=8, delta=0.3, tau=1e-6, seed=seed)
    r.add("coverage, Kolmogorov second coordinate (N = 8, delta = 0.3)", repk.coverage, ">= 0.95", repk.coverage >= 0.95)
    r.add("every Kolmogorov fit surjective", all(repk.surjective), "all", all(repk.surjective))
    viol = max(
        float(np.max(np.array(rp.residuals[10]) - np.array(rp.residuals[8]))) for rp in (rep, repk)
    )
    r.add("monotone truncation, max(res_10 - res_8)", viol, "<= 1e-9", viol <= 1e-9)
    return r


# -- 11 -----------------------------------------------------------------------


def criterion_11(seed: int = 42, workers: int = 1) -> CriterionResult:
    r = CriterionResult(11, "support, reverse inclusion (tube mass)", 30)
    bm = get_system("brownian")
    K = 10
    ens = sample_bridge(bm, [0.0], [0.0], None, 0.05, 2000, K=K, seed=seed, workers=workers)
    h0 = CameronMartinPath.zero(1)
    big = tube_mass_test(bm, [0.0], [0.0], None, h0, 0.5, ens)
    small = tube_mass_test(bm, [0.0], [0.0], None, h0, 0.1, ens)
    # sup over the level-K grid: shift the barrier by the discrete-monitoring correction
    oracle = float(kstwobign.cdf(0.5 + MONITORING_BETA * 2.0 ** (-K / 2)))
    mass = big.tube["mass"]
    r.add("tube mass at eta = 0.5 vs boundary-crossing oracle", [mass, oracle], "+- 0.02", abs(mass - oracle) <= 0.02)
    r.add("tube mass at eta = 0.5", mass, ">= 0.9", mass >= 0.9)
    r.add("99% lower bound of tube mass at eta = 0.1", small.tube["lower99"], "> 0", small.tube["positive"])
    deg = get_system("degenerate")
    probe = admissible_set_probe(deg, [0.0], [1.0], None, seed=seed)
    r.add("degenerate system admissible set", "empty" if probe.admissible_set_empty else "nonempty", "empty",
          probe.admissible_set_empty)
    r.note = (
        "for the Brownian bridge P(sup |B| < eta) is the Kolmogorov distribution function: "
        f"{kstwobign.cdf(0.5):.4f} at eta = 0.5 and {kstwobign.cdf(0.1):.1e} at eta = 0.1, so the mass thresholds "
        "cannot be met by a correct sampler"
    )
    return r


# -- 12 -----------------------------------------------------------------------


SANDWICH_RADIUS = 2.8


def criterion_12(seed: int = 42, workers: int = 1) -> CriterionResult:
    r = CriterionResult(12, "bump-weighted density sandwich", 60)
    bm = get_system("brownian")
    K = 6
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(12,)))
    for c in range(3):
        inc = rng.standard_normal((2**K, 1)) / 2 ** (K / 2)
        z = _pl_lift(np.vstack([np.zeros((1, 1)), np.cumsum(inc, axis=0)]))
        s = weighted_density_sandwich(bm, [0.0], [0.0], None, z, SANDWICH_RADIUS, PARAMS, 100_000, 0.1, K, seed + c, workers)
        lo = s["inner"].value - 3 * s["inner"].stderr
        hi = s["outer"].value + 3 * s["outer"].stderr
        v = s["bump"].value
        r.add(f"center {c}: [inner, bump, outer]", [s["inner"].value, v, s["outer"].value],
              "inner - 3 se <= bump <= outer + 3 se", lo <= v <= hi)
    return r


CRITERIA = [
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
    criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12,
]
_PARALLEL = {8, 9, 10, 11, 12}


def run_criterion(i: int, seed: int = 42, workers: int = 1) -> CriterionResult:
    fn = CRITERIA[i - 1]
    t0 = time.perf_counter()
    res = fn(seed, workers) if i in _PARALLEL else fn(seed)
    res.seconds = time.perf_counter() - t0
    return res


def run_all(seed: int = 42, workers: int = 1, only=None, echo=print) -> list[CriterionResult]:
    out = []
    for i in range(1, len(CRITERIA) + 1):
        if only and i not in only:
            continue
        res = run_criterion(i, seed, workers)
        if echo:
            echo(res.line())
        out.append(res)
    return out


def scoreboard(results: list[CriterionResult], seed: int) -> dict:
    return {
        "seed": seed,
        "criteria": [r.to_json() for r in results],
        "passed": sum(r.passed for r in results),
        "failed": sum(not r.passed for r in results),
        "all_passed": all(r.passed for r in results),
    }
