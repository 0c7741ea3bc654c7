"""Paths on uniform dyadic grids, Cameron-Martin paths and the Haar exhaustion.

Every path lives on the grid ``{j 2^-K : 0 <= j <= 2^K}`` of ``[0, 1]``.
Cameron-Martin paths are stored by their knot values at some dyadic level
and interpreted as piecewise-linear interpolants, so inner products,
Haar coefficients and dyadic projections are exact.

Hölder suprema are taken over grid pairs only and therefore under-estimate
the continuum seminorm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from ._kernels import hoelder_max


def grid_times(K: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, 2**K + 1)


def _refine_knots(knots: np.ndarray, from_level: int, to_level: int) -> np.ndarray:
    """Values of the piecewise-linear interpolant of ``knots`` on a finer grid."""
    if to_level < from_level:
        raise ValueError("cannot refine to a coarser level")
    if to_level == from_level:
        return knots.copy()
    r = 2 ** (to_level - from_level)
    frac = np.arange(r) / r
    left = knots[:-1]
    incr = np.diff(knots, axis=0)
    fine = left[:, None, :] + frac[None, :, None] * incr[:, None, :]
    fine = fine.reshape(-1, knots.shape[1])
    return np.vstack([fine, knots[-1:]])


@dataclass(frozen=True, eq=False)
class GridPath:
    """Path sampled at the ``2^K + 1`` points of the level-``K`` dyadic grid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("values must be a (2^K+1, dim) array")
        n = v.shape[0] - 1
        if n < 1 or n & (n - 1):
            raise ValueError(f"grid path needs 2^K+1 points, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid path values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def level(self) -> int:
        return int(self.values.shape[0] - 1).bit_length() - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return grid_times(self.level)

    def __sub__(self, other: GridPath) -> GridPath:
        return GridPath(self.values - other.values)

    def to_csv(self, path) -> None:
        write_csv(self, path)


@dataclass(frozen=True, eq=False)
class CameronMartinPath:
    """Piecewise-linear finite-energy path from zero with knots at level ``N``."""

    knots: np.ndarray

    def __post_init__(self):
        k = np.array(self.knots, dtype=float)
        if k.ndim == 1:
            k = k[:, None]
        n = k.shape[0] - 1
        if k.ndim != 2 or n < 1 or n & (n - 1):
            raise ValueError("knots must be a (2^N+1, d) array")
        if not np.all(np.isfinite(k)):
            raise ValueError("knot values must be finite")
        if np.any(k[0] != 0.0):
            raise ValueError("a Cameron-Martin path starts at zero")
        k.setflags(write=False)
        object.__setattr__(self, "knots", k)

    @classmethod
    def zero(cls, d: int, level: int = 0) -> CameronMartinPath:
        return cls(np.zeros((2**level + 1, d)))

    @classmethod
    def linear(cls, v, level: int = 0) -> CameronMartinPath:
        """The path ``t -> t v``."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return cls(grid_times(level)[:, None] * v[None, :])

    @classmethod
    def from_slopes(cls, slopes) -> CameronMartinPath:
        slopes = np.asarray(slopes, dtype=float)
        if slopes.ndim == 1:
            slopes = slopes[:, None]
        dt = 1.0 / slopes.shape[0]
        knots = np.vstack([np.zeros((1, slopes.shape[1])), np.cumsum(slopes * dt, axis=0)])
        return cls(knots)

    @property
    def level(self) -> int:
        return int(self.knots.shape[0] - 1).bit_length() - 1

    @property
    def dim(self) -> int:
        return self.knots.shape[1]

    def slopes(self, level: int | None = None) -> np.ndarray:
        """Derivative on each interval of the level-``level`` grid."""
        level = self.level if level is None else level
        return np.diff(self.values_at_level(level), axis=0) * 2**level

    def values_at_level(self, level: int) -> np.ndarray:
        return _refine_knots(self.knots, self.level, level)

    def on_grid(self, K: int) -> GridPath:
        return GridPath(self.values_at_level(K))

    def refined(self, level: int) -> CameronMartinPath:
        return CameronMartinPath(self.values_at_level(level))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        grid = grid_times(self.level)
        out = np.stack([np.interp(t, grid, self.knots[:, i]) for i in range(self.dim)], axis=-1)
        return out

    def _aligned(self, other: CameronMartinPath):
        if self.dim != other.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
        lev = max(self.level, other.level)
        return self.values_at_level(lev), other.values_at_level(lev)

    def __add__(self, other: CameronMartinPath) -> CameronMartinPath:
        a, b = self._aligned(other)
        return CameronMartinPath(a + b)

    def __sub__(self, other: CameronMartinPath) -> CameronMartinPath:
        a, b = self._aligned(other)
        return CameronMartinPath(a - b)

    def __neg__(self) -> CameronMartinPath:
        return CameronMartinPath(-self.knots)

    def __mul__(self, c: float) -> CameronMartinPath:
        return CameronMartinPath(float(c) * self.knots)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.sqrt(h_inner(self, self)))


def h_inner(h: CameronMartinPath, k: CameronMartinPath) -> float:
    """Cameron-Martin inner product ``int_0^1 <h', k'> dt``, exact for piecewise-linear paths."""
    if h.dim != k.dim:
        raise ValueError(f"dimension mismatch: {h.dim} vs {k.dim}")
    lev = max(h.level, k.level)
    sh = h.slopes(lev)
    sk = k.slopes(lev)
    return float(np.sum(sh * sk) / 2**lev)


def sup_distance(p: GridPath, q: GridPath) -> float:
    if p.values.shape != q.values.shape:
        raise ValueError("grid mismatch")
    return float(np.max(np.linalg.norm(p.values - q.values, axis=1)))


def hoelder_seminorm(p: GridPath, alpha: float) -> float:
    """Grid restriction of ``sup_{s<t} |p_t - p_s| / (t - s)^alpha``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    return float(hoelder_max(np.ascontiguousarray(p.values), float(alpha)))


def hoelder_distance(p: GridPath, q: GridPath, beta: float) -> float:
    return hoelder_seminorm(p - q, beta)


# -- Haar exhaustion -------------------------------------------------------


@dataclass(frozen=True)
class HaarIndex:
    """Index ``(n, m, i)`` of the Schauder function ``phi^{n,m} e_i``; ``m`` and ``i`` are 1-based."""

    n: int
    m: int
    i: int = 1

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if not 1 <= self.m <= max(2 ** (self.n - 1), 1):
            raise ValueError(f"m={self.m} out of range for n={self.n}")
        if self.i < 1:
            raise ValueError("coordinate index is 1-based")


def haar_psi(n: int, m: int, t):
    """Haar function ``psi^{n,m}`` evaluated at ``t`` (right-open pieces)."""
    t = np.asarray(t, dtype=float)
    if n == 0:
        return np.ones_like(t)
    lo = (2 * m - 2) / 2**n
    mid = (2 * m - 1) / 2**n
    hi = (2 * m) / 2**n
    amp = 2 ** ((n - 1) / 2)
    return np.where((t >= lo) & (t < mid), amp, 0.0) - np.where((t >= mid) & (t < hi), amp, 0.0)


def haar_phi(idx: HaarIndex, t):
    """``phi^{n,m}_t = int_0^t psi^{n,m}_s ds``."""
    t = np.asarray(t, dtype=float)
    if np.any((t < 0.0) | (t > 1.0)):
        raise ValueError("t must lie in [0, 1]")
    n, m = idx.n, idx.m
    if n == 0:
        return t.copy() if t.ndim else float(t)
    lo = (2 * m - 2) / 2**n
    mid = (2 * m - 1) / 2**n
    hi = (2 * m) / 2**n
    amp = 2 ** ((n - 1) / 2)
    out = amp * (np.clip(t, lo, mid) - lo) - amp * (np.clip(t, mid, hi) - mid)
    return out if out.ndim else float(out)


def haar_path(idx: HaarIndex, d: int) -> CameronMartinPath:
    if idx.i > d:
        raise ValueError("coordinate index exceeds dimension")
    level = max(idx.n, 0)
    knots = np.zeros((2**level + 1, d))
    knots[:, idx.i - 1] = haar_phi(idx, grid_times(level))
    return CameronMartinPath(knots)


def haar_indices(N: int, d: int) -> list[HaarIndex]:
    """Basis of the level-``N`` piecewise-linear space, ordered by (n, m, i)."""
    out = []
    for n in range(N + 1):
        for m in range(1, max(2 ** (n - 1), 1) + 1):
            for i in range(1, d + 1):
                out.append(HaarIndex(n, m, i))
    return out


@lru_cache(maxsize=16)
def haar_matrix(N: int) -> np.ndarray:
    """Orthogonal ``2^N x 2^N`` matrix mapping scaled slopes to Haar coefficients.

    Row order is (n, m) as in :func:`haar_indices`; column ``k`` is the
    ``k``-th level-``N`` interval. With ``u`` the interval slopes,
    coefficients are ``Q @ (u * 2^(-N/2))``.
    """
    M = 2**N
    mids = (np.arange(M) + 0.5) / M
    rows = []
    for n in range(N + 1):
        for m in range(1, max(2 ** (n - 1), 1) + 1):
            rows.append(haar_psi(n, m, mids))
    Q = np.array(rows) / np.sqrt(M)
    Q.setflags(write=False)
    return Q


def haar_coefficients(h: CameronMartinPath, N: int) -> np.ndarray:
    """Coefficients ``<h, phi^{n,m} e_i>_H`` of ``P_N h``; shape ``(2^N, d)``."""
    u = h.slopes(max(N, h.level))
    if h.level > N:
        # average slopes onto the coarser intervals: this is the H-orthogonal projection
        r = 2 ** (h.level - N)
        u = u.reshape(2**N, r, h.dim).mean(axis=1)
    return haar_matrix(N) @ (u / np.sqrt(2**N))


def from_haar_coefficients(c: np.ndarray, N: int) -> CameronMartinPath:
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    u = (haar_matrix(N).T @ c) * np.sqrt(2**N)
    return CameronMartinPath.from_slopes(u)


def dyadic_project(p: GridPath | CameronMartinPath, n: int) -> CameronMartinPath:
    """Dyadic piecewise-linear interpolation ``p(n)`` at the knots ``j 2^-n``.

    For a Cameron-Martin path this is the H-orthogonal projection onto the
    level-``n`` Schauder span.
    """
    if isinstance(p, CameronMartinPath):
        if n >= p.level:
            return p.refined(n)
        vals = p.knots
        level = p.level
    else:
        vals = p.values
        level = p.level
        if np.any(vals[0] != 0.0):
            raise ValueError("projection onto Cameron-Martin space needs a path starting at 0")
    if n > level:
        raise ValueError(f"grid level {level} does not resolve dyadic level {n}")
    return CameronMartinPath(vals[:: 2 ** (level - n)])


def write_csv(p: GridPath, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(p.dim)])
        for t, row in zip(p.times, p.values):
            w.writerow([format(t, ".17g")] + [format(x, ".17g") for x in row])


def read_csv(path) -> GridPath:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    return GridPath(data[:, 1:])


class BesovParameterError(ValueError):
    pass


@dataclass(frozen=True)
class BesovParams:
    """Besov exponents ``(alpha, 4m)``; ``m`` is the integer with ``4m`` the integrability index."""

    alpha: float = 0.45
    m: int = 6

    def __post_init__(self):
        a, m = self.alpha, self.m
        problems = []
        if not isinstance(m, (int, np.integer)) or m < 1:
            problems.append("m must be a positive integer")
        else:
            if not 1 / 3 < a < 1 / 2:
                problems.append("1/3 < alpha < 1/2")
            if not a - 1 / (4 * m) > 1 / 3:
                problems.append("alpha - 1/(4m) > 1/3")
            if not 4 * m * (0.5 - a) > 1:
                problems.append("4m (1/2 - alpha) > 1")
        if problems:
            raise BesovParameterError(
                f"invalid Besov parameters (alpha={a}, m={m}): violates "
                + "; ".join(problems)
                + " [need 1/3 < alpha < 1/2, alpha - 1/(4m) > 1/3, 4m (1/2 - alpha) > 1]"
            )

    @property
    def hoelder_exponent(self) -> float:
        """Exponent of the Besov-Hölder embedding, ``alpha - 1/(4m)``."""
        return self.alpha - 1 / (4 * self.m)
