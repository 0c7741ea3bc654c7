"""Endpoint densities, bump-weighted laws and epsilon-tube bridge ensembles.

Monte Carlo here follows the block seeding contract of
:func:`pinsupport.roughlift.brownian_increments`: sample ``j`` is drawn from
block ``j // block_size`` of a ``(seed, stream)`` family, blocks are
processed in index order and accepted samples are kept sorted by index,
so ``workers`` never changes a result.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import NumericalGuardError
from .malliavin import Projection, as_projection
from .pathspace import BesovParams, GridPath, read_csv, write_csv
from .rde import step2_paths
from .roughlift import RoughPath, _pl_lift, ball_ratio, block_rng, block_size, brownian_increments
from .vectorfields import VectorFieldSystem

# independent random streams for the different estimators
STREAM_DENSITY = 1
STREAM_BRIDGE = 2
STREAM_GUARD = 3
STREAM_CHAIN = 100

KERNEL_CUTOFF = 8.0
Z99 = float(norm.ppf(0.99))


# samples are processed in chunks of whole seeding blocks holding about this many normals
_CHUNK_NORMALS = 2**22


def _blocks(n: int, d: int, K: int, start: int = 0):
    bs = block_size(d, K)
    chunk = bs * max(1, _CHUNK_NORMALS // (bs * 2**K * d))
    j = start
    while j < start + n:
        hi = min((j // chunk + 1) * chunk, start + n)
        yield j, hi - j
        j = hi


def _map_blocks(fn, n, d, K, workers=1, start=0):
    spans = list(_blocks(n, d, K, start))
    if workers <= 1 or len(spans) == 1:
        return [fn(s, c) for s, c in spans]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda sc: fn(*sc), spans))


def gaussian_kernel(y: np.ndarray, bandwidth: float) -> np.ndarray:
    """Product Gaussian kernel on the last axis, set to zero beyond ``8`` bandwidths in any coordinate."""
    u = np.asarray(y, dtype=float) / bandwidth
    k = np.prod(np.exp(-0.5 * u * u) / (np.sqrt(2 * np.pi) * bandwidth), axis=-1)
    return np.where(np.all(np.abs(u) <= KERNEL_CUTOFF, axis=-1), k, 0.0)


@dataclass(frozen=True)
class DensityEstimate:
    value: float
    stderr: float
    bandwidth: float
    n_samples: int
    weight: str = "1"

    @property
    def lower99(self) -> float:
        return self.value - Z99 * self.stderr

    @property
    def upper99(self) -> float:
        return self.value + Z99 * self.stderr

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "lower99": self.lower99,
            "upper99": self.upper99,
            "bandwidth": self.bandwidth,
            "n_samples": self.n_samples,
            "weight": self.weight,
        }


def _estimate(terms: np.ndarray, bandwidth: float, weight: str) -> DensityEstimate:
    n = terms.size
    if n == 0:
        raise NumericalGuardError("density estimate needs at least one sample")
    mean = float(np.mean(terms))
    se = float(np.std(terms, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return DensityEstimate(mean, se, float(bandwidth), int(n), weight)


def _kernel_terms(vf, a, b, P, n, bandwidth, K, seed, stream, weights, workers):
    """Per-sample kernel values and, for each named weight, weight values where the kernel is nonzero."""
    b = np.atleast_1d(np.asarray(b, dtype=float))

    def run(start, count):
        dw = brownian_increments(vf.d, K, seed, start, count, stream)
        y = P(step2_paths(vf, a, dw, keep_path=False)) - b
        kern = gaussian_kernel(y, bandwidth)
        live = np.nonzero(kern > 0)[0]
        ws = {}
        for name, g in weights.items():
            col = np.zeros(count)
            if live.size:
                col[live] = g(dw[live])
            ws[name] = col
        return kern, ws

    parts = _map_blocks(run, n, vf.d, K, workers)
    kern = np.concatenate([p[0] for p in parts])
    ws = {name: np.concatenate([p[1][name] for p in parts]) for name in weights}
    return kern, ws


def density_estimate(
    vf: VectorFieldSystem,
    a,
    b,
    proj=None,
    n_samples: int = 100_000,
    bandwidth: float = 0.05,
    K: int = 8,
    seed: int = 42,
    weight=None,
    workers: int = 1,
    stream: int = STREAM_DENSITY,
) -> DensityEstimate:
    """Kernel estimate of the (optionally weighted) density of ``Pi X_1`` at ``b``.

    ``p = (1/n) sum_j G(w_j) kappa(Pi Y_1^(j) - b)`` with ``Y`` the step-2
    solution driven by ``L(w(K))``.  ``weight`` maps driver increments
    ``(n, 2^K, d)`` to values in ``[0, 1]``.
    """
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    P = as_projection(proj, vf.e)
    weights = {"w": weight} if weight is not None else {}
    kern, ws = _kernel_terms(vf, a, b, P, n_samples, bandwidth, K, seed, stream, weights, workers)
    terms = kern * ws["w"] if weight is not None else kern
    return _estimate(terms, bandwidth, getattr(weight, "label", "G") if weight is not None else "1")


def require_positive_density(est: DensityEstimate, what: str = "target") -> None:
    """Guard: the one-sided 99% lower confidence bound must be positive."""
    if not est.lower99 > 0:
        raise NumericalGuardError(
            f"density at the {what} is not significantly positive (estimate {est.value:.3e}, "
            f"99% lower bound {est.lower99:.3e}); the pinned measure is undefined there"
        )


# -- bump functionals ---------------------------------------------------------


def _f(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_cutoff(u, m: int):
    """Non-increasing smooth cutoff, ``1`` on ``[0, 1]`` and ``0`` on ``[2^{4m}, inf)``."""
    top = 2.0 ** (4 * m)
    u = np.asarray(u, dtype=float)
    # rescale so the transition is not numerically flat over the long interval
    s = np.log(np.maximum(u, 1e-300)) / np.log(top)
    num = _f(1.0 - s)
    den = num + _f(s)
    return np.where(u <= 1.0, 1.0, np.where(u >= top, 0.0, num / np.where(den > 0, den, 1.0)))


@dataclass(eq=False)
class BumpWeight:
    """``G_{z,r}(w) = chi(ratio)`` with ``ratio = (|w1 - z1|^{4m} + |w2 - z2|^{2m}) / r^{4m}``.

    Called on driver increments ``(n, 2^K, d)``; the driver lift is the
    piecewise-linear lift on the same grid as ``z``.
    """

    z: RoughPath
    r: float
    params: BesovParams
    mode: str = "smooth"  # "smooth", "ball" (indicator of B(z, r)) or "ball2" (of B(z, 2r))
    label: str = field(init=False)

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("radius must be positive")
        self.label = {"smooth": "bump", "ball": "1_B(z,r)", "ball2": "1_B(z,2r)"}[self.mode]

    def ratio(self, rp: RoughPath) -> float:
        return ball_ratio(rp, self.z, self.r, self.params)

    def of_ratio(self, u):
        u = np.asarray(u, dtype=float)
        if self.mode == "smooth":
            return smooth_cutoff(u, self.params.m)
        if self.mode == "ball":
            return (u < 1.0).astype(float)
        return (u < 2.0 ** (4 * self.params.m)).astype(float)

    def on_rough_path(self, rp: RoughPath) -> float:
        return float(self.of_ratio(self.ratio(rp)))

    def ratios(self, dw: np.ndarray) -> np.ndarray:
        x0 = self.z.values[0]
        out = np.empty(len(dw))
        for j, inc in enumerate(dw):
            vals = np.vstack([x0[None], x0 + np.cumsum(inc, axis=0)])
            out[j] = self.ratio(_pl_lift(vals))
        return out

    def __call__(self, dw: np.ndarray) -> np.ndarray:
        return self.of_ratio(self.ratios(dw))


def bump_weight(z: RoughPath, r: float, params: BesovParams) -> BumpWeight:
    return BumpWeight(z, r, params)


def weighted_density_sandwich(
    vf, a, b, proj, z: RoughPath, r: float, params: BesovParams, n_samples, bandwidth, K, seed, workers=1
) -> dict:
    """Bump-weighted density with the two ball-indicator estimates on the same samples.

    Since ``1_B(z,r) <= G_{z,r} <= 1_B(z,2r)`` pointwise, the three
    estimates are ordered sample by sample.
    """
    if z.level != K or z.dim != vf.d:
        raise ValueError("center must live on the driver grid")
    P = as_projection(proj, vf.e)
    smooth = BumpWeight(z, r, params)

    cache = {}

    def ratio_of(dw):
        key = dw.tobytes()
        if key not in cache:
            cache[key] = smooth.ratios(dw)
        return cache[key]

    def make(mode):
        w = BumpWeight(z, r, params, mode)
        return lambda dw: w.of_ratio(ratio_of(dw))

    weights = {m: make(m) for m in ("ball", "smooth", "ball2")}
    kern, ws = _kernel_terms(vf, a, b, P, n_samples, bandwidth, K, seed, STREAM_DENSITY, weights, workers)
    return {
        "inner": _estimate(kern * ws["ball"], bandwidth, "1_B(z,r)"),
        "bump": _estimate(kern * ws["smooth"], bandwidth, "bump"),
        "outer": _estimate(kern * ws["ball2"], bandwidth, "1_B(z,2r)"),
        "kernel_hits": int(np.sum(kern > 0)),
    }


# -- bridge ensembles -----------------------------------------------------------


@dataclass(eq=False)
class BridgeEnsemble:
    """Accepted paths of the epsilon-tube approximation to the pinned law.

    ``paths`` has shape ``(n, 2^K + 1, e)``; ``indices`` are the global
    sample counters of the accepted drivers, which regenerate them.
    """

    system: str
    a: np.ndarray
    b: np.ndarray
    proj: Projection
    eps: float
    K: int
    seed: int
    paths: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    n_drawn: int
    bandwidth: float
    stream: int = STREAM_BRIDGE
    complete: bool = True

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.paths = np.asarray(self.paths, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if len(self.paths):
            gap = np.linalg.norm(self.proj(self.paths[:, -1]) - self.b, axis=1)
            if np.any(gap > self.eps):
                raise AssertionError("accepted path outside the epsilon tube")
            if abs(self.weights.sum() - 1.0) > 1e-12 or np.any(self.weights < 0):
                raise AssertionError("ensemble weights must be nonnegative and sum to 1")

    def __len__(self):
        return len(self.paths)

    @property
    def acceptance_rate(self) -> float:
        return len(self.paths) / self.n_drawn if self.n_drawn else 0.0

    @property
    def d(self) -> int:
        from .vectorfields import get_system

        return get_system(self.system).d

    def projected(self) -> np.ndarray:
        return self.proj(self.paths)

    def effective_size(self) -> float:
        return float(1.0 / np.sum(self.weights**2)) if len(self) else 0.0

    def driver(self, k: int) -> np.ndarray:
        """Grid increments of the ``k``-th accepted driver."""
        return brownian_increments(self.d, self.K, self.seed, int(self.indices[k]), 1, self.stream)[0]

    def marginal(self, t: float) -> np.ndarray:
        i = int(round(t * 2**self.K))
        if abs(i - t * 2**self.K) > 1e-9:
            raise ValueError(f"time {t} is not a level-{self.K} grid point")
        return self.projected()[:, i]

    def manifest(self) -> dict:
        return {
            "system": self.system,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "projection": self.proj.rows.tolist(),
            "eps": self.eps,
            "K": self.K,
            "seed": self.seed,
            "stream": self.stream,
            "bandwidth": self.bandwidth,
            "n_drawn": self.n_drawn,
            "acceptance_rate": self.acceptance_rate,
            "complete": self.complete,
            "indices": self.indices.tolist(),
            "weights": self.weights.tolist(),
        }

    def save(self, directory) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(self.manifest(), indent=1))
        for k, p in enumerate(self.paths):
            write_csv(GridPath(p), out / f"path_{k:06d}.csv")

    @classmethod
    def load(cls, directory) -> BridgeEnsemble:
        src = Path(directory)
        man = json.loads((src / "manifest.json").read_text())
        n = len(man["indices"])
        paths = np.array([read_csv(src / f"path_{k:06d}.csv").values for k in range(n)])
        e = len(man["a"])
        return cls(
            man["system"], man["a"], man["b"], Projection(man["projection"]), man["eps"], man["K"], man["seed"],
            paths.reshape(n, 2 ** man["K"] + 1, e), man["indices"], man["weights"], man["n_drawn"],
            man["bandwidth"], man["stream"], man["complete"],
        )


def sample_bridge(
    vf: VectorFieldSystem,
    a,
    b,
    proj=None,
    eps: float = 0.05,
    n_target: int = 1000,
    K: int = 8,
    seed: int = 42,
    workers: int = 1,
    max_samples: int | None = None,
    guard_samples: int = 20_000,
    bandwidth: float | None = None,
    stream: int = STREAM_BRIDGE,
) -> BridgeEnsemble:
    """Epsilon-tube rejection sampling of the pinned law with Gaussian-kernel reweighting.

    A driver is accepted iff ``|Pi X_1 - b| <= eps``; accepted paths carry
    weights ``kappa_bw(Pi X_1 - b)`` (``bw = eps`` by default) normalised to one.
    Before sampling, the endpoint density at ``b`` must be significantly
    positive.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    P = as_projection(proj, vf.e)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    bw = eps if bandwidth is None else bandwidth
    if guard_samples:
        est = density_estimate(vf, a, b, P, guard_samples, eps, K, seed, workers=workers, stream=STREAM_GUARD)
        require_positive_density(est, "bridge endpoint")
    budget = max_samples if max_samples is not None else max(1_000_000, 200 * n_target)
    bs = block_size(vf.d, K) * max(1, _CHUNK_NORMALS // (block_size(vf.d, K) * 2**K * vf.d))

    def run(start, count):
        dw = brownian_increments(vf.d, K, seed, start, count, stream)
        x = step2_paths(vf, a, dw)
        ok = np.linalg.norm(P(x[:, -1]) - b, axis=1) <= eps
        idx = np.nonzero(ok)[0]
        return start + idx, x[idx]

    got_idx, got_paths = [], []
    n_acc = 0
    drawn = 0
    batch = max(1, workers)
    while n_acc < n_target and drawn < budget:
        count = min(batch * bs, budget - drawn)
        for idx, paths in _map_blocks(run, count, vf.d, K, workers, start=drawn):
            got_idx.append(idx)
            got_paths.append(paths)
            n_acc += len(idx)
        drawn += count
    idx = np.concatenate(got_idx) if got_idx else np.zeros(0, dtype=np.int64)
    paths = np.concatenate(got_paths) if got_paths else np.zeros((0, 2**K + 1, vf.e))
    if len(idx) > n_target:
        # drawn count is the index just past the last kept sample
        drawn = int(idx[n_target - 1]) + 1
        idx, paths = idx[:n_target], paths[:n_target]
    rate = len(idx) / drawn if drawn else 0.0
    if rate < 1e-6 or len(idx) == 0:
        raise NumericalGuardError(
            f"acceptance rate {rate:.2e} after {drawn} samples; enlarge eps (currently {eps})"
        )
    w = gaussian_kernel(P(paths[:, -1]) - b, bw)
    w = w / w.sum()
    return BridgeEnsemble(vf.name, np.atleast_1d(a), b, P, float(eps), K, int(seed), paths, idx, w, drawn,
                          float(bw), stream, len(idx) >= n_target)


# -- finite-dimensional distributions ---------------------------------------------


@dataclass
class FddReport:
    times: list
    ensemble_mean: list
    ensemble_se: list
    chain_mean: list
    chain_se: list
    z: list
    ratio: list
    n_chain: int
    chain_hits: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _segment_increments(d, K, seed, stream, segment, start, count, steps):
    bs = block_size(d, K)
    sd = np.sqrt(1.0 / 2**K)
    out = np.empty((count, steps, d))
    j = start
    while j < start + count:
        blk = j // bs
        rng = block_rng(seed, blk, stream + segment)
        draws = rng.standard_normal((bs, steps, d))
        lo = j - blk * bs
        hi = min(bs, start + count - blk * bs)
        out[j - start : j - start + hi - lo] = draws[lo:hi] * sd
        j += hi - lo
    return out


def _ratio_stats(g, w):
    """Weighted mean of ``g`` with delta-method standard error; ``w`` need not be normalised."""
    s = w.sum()
    if s <= 0:
        return np.nan, np.inf
    mean = float(np.sum(w * g) / s)
    se = float(np.sqrt(np.sum(w**2 * (g - mean) ** 2)) / s)
    return mean, se


def fdd_check(
    ensemble: BridgeEnsemble,
    times,
    test_functions,
    vf: VectorFieldSystem,
    n_chain: int = 200_000,
    bandwidth: float | None = None,
    seed: int | None = None,
    workers: int = 1,
) -> FddReport:
    """Compare ensemble averages of marginal test functions with an independent chain estimate.

    The chain estimate simulates fresh paths restarted at every requested
    time with a new random stream per segment, and weights them by a
    Gaussian kernel ``psi`` of the projected endpoint around ``b``:
    ``E[g(Pi X_t1..tk) psi(Pi X_1 - b)] / E[psi(Pi X_1 - b)]``.
    Test functions act on arrays ``(n, k, e')`` of projected marginals.
    """
    times = [float(t) for t in times]
    M = 2**ensemble.K
    grid_idx = []
    for t in times:
        if not 0.0 < t < 1.0:
            raise ValueError("fdd times must lie strictly inside (0, 1)")
        i = round(t * M)
        if abs(i - t * M) > 1e-9:
            raise ValueError(f"time {t} is not a grid point of level {ensemble.K}")
        grid_idx.append(i)
    if sorted(grid_idx) != grid_idx or len(set(grid_idx)) != len(grid_idx):
        raise ValueError("fdd times must be strictly increasing")
    P = ensemble.proj
    bw = ensemble.eps if bandwidth is None else bandwidth
    seed = ensemble.seed if seed is None else seed
    marg = P(ensemble.paths[:, grid_idx])
    bounds = [0] + grid_idx + [M]

    def run(start, count):
        x = np.broadcast_to(ensemble.a, (count, vf.e)).copy()
        snaps = []
        for s in range(len(bounds) - 1):
            steps = bounds[s + 1] - bounds[s]
            dw = _segment_increments(vf.d, ensemble.K, seed, STREAM_CHAIN, s, start, count, steps)
            x = step2_paths(vf, x, dw, keep_path=False, dt=1.0 / M)
            if s < len(grid_idx):
                snaps.append(P(x))
        psi = gaussian_kernel(P(x) - ensemble.b, bw)
        live = psi > 0
        return np.stack(snaps, axis=1)[live], psi[live]

    parts = _map_blocks(run, n_chain, vf.d, ensemble.K, workers)
    cm = np.concatenate([p[0] for p in parts])
    psi = np.concatenate([p[1] for p in parts])
    out = {k: [] for k in ("em", "es", "cm", "cs", "z", "ratio")}
    for g in test_functions:
        ge = np.asarray(g(marg), dtype=float)
        gc = np.asarray(g(cm), dtype=float) if len(cm) else np.zeros(0)
        em, es = _ratio_stats(ge, ensemble.weights)
        c_mean, c_se = _ratio_stats(gc, psi) if len(cm) else (np.nan, np.inf)
        den = np.hypot(es, c_se)
        z = (em - c_mean) / den if den > 0 else (0.0 if em == c_mean else np.inf)
        out["em"].append(em)
        out["es"].append(es)
        out["cm"].append(c_mean)
        out["cs"].append(c_se)
        out["z"].append(float(z))
        out["ratio"].append(float(em / c_mean) if c_mean != 0 else np.nan)
    return FddReport(times, out["em"], out["es"], out["cm"], out["cs"], out["z"], out["ratio"], int(n_chain), int(len(psi)))
