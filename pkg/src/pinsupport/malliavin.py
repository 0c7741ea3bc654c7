"""Malliavin covariance of a projected endpoint, surjectivity tests and bracket conditions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .pathspace import CameronMartinPath
from .rde import jacobian_endpoint_matrix, jacobian_flow_rough
from .roughlift import RoughPath
from .vectorfields import VectorFieldSystem

DEFAULT_TAU = 1e-6
DEFAULT_N = 8


@dataclass(frozen=True, eq=False)
class Projection:
    """Orthogonal projection ``Pi`` of ``R^e`` onto the span of orthonormal ``rows``."""

    rows: np.ndarray

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if r.shape[0] > r.shape[1]:
            raise ValueError("more projection rows than ambient dimensions")
        if np.max(np.abs(r @ r.T - np.eye(r.shape[0]))) > 1e-12:
            raise ValueError("projection rows must be orthonormal (to 1e-12)")
        r.setflags(write=False)
        object.__setattr__(self, "rows", r)

    @classmethod
    def identity(cls, e: int) -> Projection:
        return cls(np.eye(e))

    @classmethod
    def coordinates(cls, e: int, idx) -> Projection:
        """Projection onto the listed 0-based coordinates."""
        return cls(np.eye(e)[list(np.atleast_1d(idx))])

    @property
    def e(self) -> int:
        return self.rows.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.rows.shape[0]

    def __call__(self, x):
        return np.asarray(x) @ self.rows.T


def as_projection(proj, e: int) -> Projection:
    if proj is None:
        return Projection.identity(e)
    if isinstance(proj, Projection):
        if proj.e != e:
            raise ValueError(f"projection acts on R^{proj.e}, state space is R^{e}")
        return proj
    p = Projection(proj)
    if p.e != e:
        raise ValueError(f"projection acts on R^{p.e}, state space is R^{e}")
    return p


@dataclass(frozen=True, eq=False)
class GramMatrix:
    matrix: np.ndarray
    N: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        scale = max(1.0, float(np.max(np.abs(C)))) if C.size else 1.0
        if np.max(np.abs(C - C.T)) > 1e-12 * scale:
            raise ValueError("Gram matrix is not symmetric")
        C = 0.5 * (C + C.T)
        ev = np.linalg.eigvalsh(C)
        if ev[0] < -1e-10 * scale:
            raise ValueError(f"Gram matrix is not positive semi-definite (lambda_min = {ev[0]:.3e})")
        C.setflags(write=False)
        object.__setattr__(self, "matrix", C)
        object.__setattr__(self, "_eig", ev)

    @property
    def lambda_min(self) -> float:
        return float(self._eig[0])

    @property
    def lambda_max(self) -> float:
        return float(self._eig[-1])


@dataclass(frozen=True)
class SurjectivityReport:
    lambda_min: float
    N: int | None
    tau: float
    surjective: bool
    matrix: tuple

    def to_json(self) -> dict:
        return {
            "lambda_min": self.lambda_min,
            "N": self.N,
            "tau": self.tau,
            "surjective": self.surjective,
            "matrix": [list(r) for r in self.matrix],
        }


def gram_from_endpoint_matrix(M: np.ndarray, N: int | None = None, **meta) -> GramMatrix:
    M = np.asarray(M, dtype=float)
    return GramMatrix(M @ M.T, N, dict(meta))


def gram_deterministic(vf: VectorFieldSystem, h: CameronMartinPath, a, proj=None, N: int = DEFAULT_N, K: int | None = None) -> GramMatrix:
    """``C = M M^T`` with ``M`` the endpoint Jacobian of ``Pi Psi(.)_1`` at ``h`` over the Haar basis of level ``N``."""
    P = as_projection(proj, vf.e)
    M = jacobian_endpoint_matrix(vf, h, a, P, N, K)
    return gram_from_endpoint_matrix(M, N, kind="deterministic")


def surjectivity_check(C: GramMatrix, tau: float = DEFAULT_TAU) -> SurjectivityReport:
    if not tau > 0:
        raise ValueError("tau must be positive")
    lam = C.lambda_min
    return SurjectivityReport(lam, C.N, float(tau), bool(lam >= tau), tuple(tuple(float(v) for v in r) for r in C.matrix))


def gram_stochastic(vf: VectorFieldSystem, rp: RoughPath, a, proj=None, cond_limit: float = 1e12) -> GramMatrix:
    """``Pi J_1 (int_0^1 J_s^{-1} sigma sigma^T J_s^{-T} ds) J_1^T Pi^T`` along ``Phi(rp)``.

    The time integral is composite Simpson on the grid.  Grid points where
    ``cond(J_s)`` exceeds ``cond_limit`` are counted in ``meta``.
    """
    P = as_projection(proj, vf.e)
    x, J, Jinv = jacobian_flow_rough(vf, rp, a)
    KS = Jinv @ vf.sigma(x)
    integrand = KS @ np.swapaxes(KS, 1, 2)
    t = np.linspace(0.0, 1.0, x.shape[0])
    inner = simpson(integrand, x=t, axis=0)
    C = P.rows @ J[-1] @ inner @ J[-1].T @ P.rows.T
    conds = np.linalg.cond(J)
    return GramMatrix(
        C,
        None,
        {"kind": "stochastic", "K": rp.level, "max_condition": float(np.max(conds)),
         "near_singular_points": int(np.sum(conds > cond_limit))},
    )


# -- Hörmander brackets -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Field:
    f: object
    df: object  # exact Jacobian or None for finite differences
    label: str

    def jac(self, x, h):
        if self.df is not None:
            return self.df(x)
        e = x.shape[-1]
        cols = []
        for c in range(e):
            s = np.zeros(e)
            s[c] = h
            cols.append((self.f(x + s) - self.f(x - s)) / (2 * h))
        return np.stack(cols, axis=-1)


def _bracket(Z: _Field, V: _Field, h: float) -> _Field:
    # [Z, V] = DV Z - DZ V
    def f(x):
        return V.jac(x, h) @ Z.f(x) - Z.jac(x, h) @ V.f(x)

    return _Field(f, None, f"[{Z.label},{V.label}]")


def lie_bracket(vf: VectorFieldSystem, i: int, j: int, x, h: float = 1e-5) -> np.ndarray:
    """``[V_i, V_j](x)`` with supplied Jacobians (``0`` is the drift)."""
    Zi = _Field(vf.field(i), vf.field_gradient(i), f"V{i}")
    Zj = _Field(vf.field(j), vf.field_gradient(j), f"V{j}")
    return _bracket(Zi, Zj, h).f(np.asarray(x, dtype=float))


@dataclass
class HormanderReport:
    depth: int
    lambda_min: float
    spans: bool
    n_fields: int
    labels: list
    point: list
    tol: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def hormander_check(vf: VectorFieldSystem, a, L: int, proj=None, h: float = 1e-5, tol: float = 1e-10) -> HormanderReport:
    """Projected bracket spanning statistic at ``a`` up to depth ``L``.

    ``Sigma_1 = {V_1..V_d}`` and ``Sigma_{k+1} = {[Z, V_i] : Z in Sigma_k, 0 <= i <= d}``;
    the drift enters the brackets but not ``Sigma_1``.  Reports ``lambda_min`` of
    ``sum_Z (Pi Z(a)) (Pi Z(a))^T``; brackets of brackets are finite differences.
    """
    if L not in (1, 2, 3):
        raise ValueError("bracket depth L must be 1, 2 or 3")
    P = as_projection(proj, vf.e)
    x = np.atleast_1d(np.asarray(a, dtype=float))
    base = [_Field(vf.field(i), vf.field_gradient(i), f"V{i}") for i in range(vf.d + 1)]
    layer = base[1:]
    fields = list(layer)
    for _ in range(L - 1):
        layer = [_bracket(Z, V, h) for Z in layer for V in base]
        fields.extend(layer)
    vecs = np.array([P(Z.f(x)) for Z in fields])
    C = vecs.T @ vecs
    lam = float(np.linalg.eigvalsh(C)[0])
    return HormanderReport(L, lam, bool(lam > tol), len(fields), [Z.label for Z in fields], x.tolist(), tol)
