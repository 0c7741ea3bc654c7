"""Level-2 geometric rough paths on dyadic grids.

A :class:`RoughPath` stores its first level as grid values and its second
level only on adjacent grid intervals; the second level over any pair of
grid points is rebuilt from Chen's identity.  The Brownian rough path is
never available exactly; its stand-in is the lift of the finest dyadic
piecewise-linear approximation ``L(w(K))``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import besov_pair_sums, chen_level2
from .pathspace import BesovParams, CameronMartinPath, GridPath, _refine_knots

# Brownian draws are made in blocks of about this many normals; see block_rng.
_BLOCK_NORMALS = 2**20


@dataclass(frozen=True, eq=False)
class RoughPath:
    """Rough path over ``R^dim`` on the level-``K`` grid.

    ``values`` has shape ``(2^K + 1, dim)`` and carries the first level as
    increments; ``area`` has shape ``(2^K, dim, dim)`` and holds
    ``w^2_{t_k, t_{k+1}}`` for each adjacent interval.
    """

    values: np.ndarray
    area: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        a = np.array(self.area, dtype=float)
        if v.ndim != 2 or a.shape != (v.shape[0] - 1, v.shape[1], v.shape[1]):
            raise ValueError("inconsistent level-1 / level-2 shapes")
        n = v.shape[0] - 1
        if n < 1 or n & (n - 1):
            raise ValueError("rough path needs 2^K+1 grid points")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(a))):
            raise ValueError("rough path entries must be finite")
        v.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "area", a)

    @classmethod
    def zero(cls, d: int, K: int) -> RoughPath:
        return cls(np.zeros((2**K + 1, d)), np.zeros((2**K, d, d)))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def level(self) -> int:
        return int(self.values.shape[0] - 1).bit_length() - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def level1(self, i: int, j: int) -> np.ndarray:
        return self.values[j] - self.values[i]

    def level2(self, i: int, j: int) -> np.ndarray:
        """``w^2`` between grid indices ``i <= j`` via Chen's identity."""
        if not 0 <= i <= j < self.values.shape[0]:
            raise IndexError("need 0 <= i <= j <= 2^K")
        return chen_level2(self.values, self.area, i, j)

    def first_level_path(self) -> GridPath:
        return GridPath(self.values)

    def to_json(self) -> dict:
        d = self.dim
        return {
            "dim": d,
            "K": self.level,
            "level1": self.values.tolist(),
            "level2_adjacent": self.area.reshape(-1, d * d).tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> RoughPath:
        d = int(doc["dim"])
        K = int(doc["K"])
        values = np.asarray(doc["level1"], dtype=float).reshape(2**K + 1, d)
        area = np.asarray(doc["level2_adjacent"], dtype=float).reshape(2**K, d, d)
        return cls(values, area)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> RoughPath:
        return cls.from_json(json.loads(Path(path).read_text()))


def _pl_lift(values: np.ndarray) -> RoughPath:
    inc = np.diff(values, axis=0)
    return RoughPath(values, 0.5 * inc[:, :, None] * inc[:, None, :])


def lift_pl(h: CameronMartinPath, K: int | None = None) -> RoughPath:
    """Natural lift of a piecewise-linear path, represented on the level-``K`` grid."""
    K = h.level if K is None else K
    if K < h.level:
        raise ValueError(f"grid level {K} cannot resolve a level-{h.level} path")
    return _pl_lift(h.values_at_level(K))


def lift_grid(p: GridPath) -> RoughPath:
    """Lift of the piecewise-linear interpolation of a grid path."""
    return _pl_lift(p.values)


def dyadic_lift(w: GridPath, n: int) -> RoughPath:
    """``L(w(n))`` on ``w``'s own grid."""
    K = w.level
    if n > K:
        raise ValueError(f"dyadic level {n} exceeds grid level {K}")
    coarse = w.values[:: 2 ** (K - n)]
    return _pl_lift(_refine_knots(coarse, n, K))


# -- Brownian sampling -----------------------------------------------------


def block_size(d: int, K: int) -> int:
    return max(1, _BLOCK_NORMALS // (2**K * d))


def block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(block))))


def brownian_increments(d: int, K: int, seed: int, start: int, count: int, stream: int = 0) -> np.ndarray:
    """Increments ``(count, 2^K, d)`` of samples ``start .. start+count-1``.

    Sample ``j`` always comes from block ``j // block_size(d, K)`` of the
    ``(seed, stream)`` family, so any split of the index range across calls or
    workers reproduces the same draws.
    """
    bs = block_size(d, K)
    M = 2**K
    sd = np.sqrt(1.0 / M)
    out = np.empty((count, M, d))
    j = start
    while j < start + count:
        b = j // bs
        block = block_rng(seed, b, stream).standard_normal((bs, M, d))
        lo = j - b * bs
        hi = min(bs, start + count - b * bs)
        out[j - start : j - start + hi - lo] = block[lo:hi] * sd
        j += hi - lo
    return out


def brownian_sample(d: int, K: int, seed: int, index: int = 0) -> GridPath:
    """Standard Brownian motion on the level-``K`` grid, ``w_0 = 0``."""
    inc = brownian_increments(d, K, seed, index, 1)[0]
    return GridPath(np.vstack([np.zeros((1, d)), np.cumsum(inc, axis=0)]))


def brownian_paths(d: int, K: int, seed: int, start: int, count: int, stream: int = 0) -> np.ndarray:
    inc = brownian_increments(d, K, seed, start, count, stream)
    out = np.zeros((count, 2**K + 1, d))
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out


# -- translations and dilations --------------------------------------------


def young_translate(rp: RoughPath, h: CameronMartinPath) -> RoughPath:
    """Young translation ``T_h(w)``.

    The cross integrals are taken with the first level linear on each grid
    interval, so ``T_h(L(k)) = L(k + h)`` holds to rounding.
    """
    if h.dim != rp.dim:
        raise ValueError("dimension mismatch")
    if h.level > rp.level:
        raise ValueError("translation path not resolvable on the rough path's grid")
    hv = h.values_at_level(rp.level)
    dh = np.diff(hv, axis=0)
    dw = rp.increments
    cross = 0.5 * (dw[:, :, None] * dh[:, None, :] + dh[:, :, None] * dw[:, None, :])
    area = rp.area + 0.5 * dh[:, :, None] * dh[:, None, :] + cross
    return RoughPath(rp.values + hv, area)


def dilate(rp: RoughPath, c: float) -> RoughPath:
    v0 = rp.values[:1]
    return RoughPath(v0 + c * (rp.values - v0), c * c * rp.area)


# -- Besov norms -----------------------------------------------------------


def _lag_weights(K: int, params: BesovParams):
    M = 2**K
    dt = 1.0 / M
    p1, p2 = 4 * params.m, 2 * params.m
    lag = np.arange(M + 1, dtype=float)
    lag[0] = 1.0
    # log of dt^2 / (r dt)^(1 + 4 m alpha)
    logw = 2 * np.log(dt) - (1 + 4 * params.m * params.alpha) * np.log(lag * dt)
    return np.exp(logw / p1), np.exp(logw / p2), p1, p2


def besov_components(rp1: RoughPath, rp2: RoughPath, params: BesovParams) -> tuple[float, float]:
    """``(||w1 - v1||_{alpha,4m-B}, ||w2 - v2||_{2alpha,2m-B})`` on the grid."""
    if rp1.values.shape != rp2.values.shape:
        raise ValueError("rough paths live on different grids")
    c1, c2, p1, p2 = _lag_weights(rp1.level, params)
    n1, n2 = besov_pair_sums(rp1.values, rp1.area, rp2.values, rp2.area, c1, c2, p1, p2)
    return float(n1), float(n2)


def besov_distance(rp1: RoughPath, rp2: RoughPath, params: BesovParams) -> float:
    n1, n2 = besov_components(rp1, rp2, params)
    return n1 + n2


def homogeneous_norm(rp: RoughPath, params: BesovParams) -> float:
    n1, n2 = besov_components(rp, RoughPath.zero(rp.dim, rp.level), params)
    return n1 + np.sqrt(n2)


def ball_ratio(rp: RoughPath, center: RoughPath, r: float, params: BesovParams) -> float:
    """``(||w1 - z1||^{4m} + ||w2 - z2||^{2m}) / r^{4m}``; the ball ``B(z, r)`` is where this is < 1."""
    n1, n2 = besov_components(rp, center, params)
    p = 4 * params.m
    return (n1 / r) ** p + (np.sqrt(n2) / r) ** p


# -- Karhunen-Loeve diagnostics --------------------------------------------


def kl_residual_norms(n: int, K: int, n_samples: int, params: BesovParams, seed: int, d: int = 2) -> np.ndarray:
    """``|||T_{-w(n)} L(w(K))|||`` for ``n_samples`` Brownian samples."""
    if n > K:
        raise ValueError("n must not exceed K")
    out = np.empty(n_samples)
    paths = brownian_paths(d, K, seed, 0, n_samples)
    for j in range(n_samples):
        w = GridPath(paths[j])
        skeleton = CameronMartinPath(w.values[:: 2 ** (K - n)])
        out[j] = homogeneous_norm(young_translate(dyadic_lift(w, K), -skeleton), params)
    return out


def kl_residual_stats(n: int, K: int, n_samples: int, params: BesovParams, seed: int, d: int = 2) -> dict:
    vals = kl_residual_norms(n, K, n_samples, params, seed, d)
    return {
        "n": n,
        "K": K,
        "samples": n_samples,
        "mean": float(vals.mean()),
        "stderr": float(vals.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0,
        "max": float(vals.max()),
    }


def fernique_moment(eta: float, K: int, n_samples: int, params: BesovParams, seed: int, d: int = 2) -> float:
    """Empirical ``E exp(eta |||L(w(K))|||^2)``."""
    paths = brownian_paths(d, K, seed, 0, n_samples)
    vals = np.array([homogeneous_norm(lift_grid(GridPath(p)), params) for p in paths])
    return float(np.mean(np.exp(eta * vals**2)))
