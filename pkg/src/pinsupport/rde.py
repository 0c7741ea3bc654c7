"""Solution maps of ``dx = sigma(x) dw + b(x) dt``.

* :func:`solve_skeleton` integrates the control ODE for a piecewise-linear
  Cameron-Martin path with classical RK4, using the exact (piecewise
  constant) derivative of the control on every grid step.
* :func:`solve_rde` runs the step-2 increment scheme on a rough path::

      x <- x + sigma(x) w1 + b(x) dt + sum_ij (D V_j . V_i)(x) w2^{ij}

* :func:`solve_variational` and :func:`solve_variational_rough` add the
  first and second variational equations and the Jacobian flow.  The rough
  version is the exact tangent of the discrete step-2 scheme under Young
  translation of the driver, so for ``rp = L(h)`` it reproduces the
  derivatives of the scheme itself.
* :func:`skeleton_sensitivities` gives ``d x_t / d(slope on interval k)``
  through variation of constants, from which the endpoint Jacobian over the
  Haar basis is assembled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalGuardError
from .pathspace import CameronMartinPath, GridPath, haar_matrix
from .roughlift import RoughPath
from .vectorfields import VectorFieldError, VectorFieldSystem

DEFAULT_K = 10


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericalGuardError(f"{what}: state became non-finite (overflow); shrink the driver or the time horizon")


def _start(vf: VectorFieldSystem, a, batch: int | None = None) -> np.ndarray:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape[-1] != vf.e:
        raise ValueError(f"start point has dimension {a.shape[-1]}, system {vf.name!r} has e={vf.e}")
    if batch is not None:
        a = np.broadcast_to(a, (batch, vf.e)).copy()
    return a


def _control_slopes(h: CameronMartinPath, K: int, d: int) -> np.ndarray:
    if h.dim != d:
        raise ValueError(f"control has dimension {h.dim}, system needs d={d}")
    if K < h.level:
        raise ValueError(f"grid level {K} cannot resolve a level-{h.level} control")
    return h.slopes(K)


# -- RK4 on the augmented skeleton system -----------------------------------


def _rk4(deriv, state, dt, M, record, axis=1, stride=1):
    """Classical RK4 over ``M`` steps; ``deriv(state, k)`` uses step ``k``'s control.

    ``state`` is a list of arrays; ``record`` lists the entries stored at
    every ``stride``-th grid point, returned with a new time axis at ``axis``.
    """
    hist = {i: [state[i].copy()] for i in record}
    h2, h6 = 0.5 * dt, dt / 6.0
    for k in range(M):
        k1 = deriv(state, k)
        k2 = deriv([s + h2 * q for s, q in zip(state, k1)], k)
        k3 = deriv([s + h2 * q for s, q in zip(state, k2)], k)
        k4 = deriv([s + dt * q for s, q in zip(state, k3)], k)
        state = [s + h6 * (q1 + 2 * (q2 + q3) + q4) for s, q1, q2, q3, q4 in zip(state, k1, k2, k3, k4)]
        if (k + 1) % stride == 0:
            for i in record:
                hist[i].append(state[i])
    return state, {i: np.stack(v, axis=axis) for i, v in hist.items()}


def _flow_deriv(vf, u):
    """Derivative of (x, J, J^-1, int J^-1 sigma) under the control slopes ``u`` (B, M, d)."""

    if vf.constant_sigma:
        S0 = vf.sigma(np.zeros(vf.e))

        def deriv(state, k):
            x, J, Kinv, _ = state
            A = vf.db(x)
            return [u[:, k] @ S0.T + vf.b(x), A @ J, -Kinv @ A, Kinv @ S0]

        return deriv

    def deriv(state, k):
        x, J, Kinv, _ = state
        uk = u[:, k]
        S = vf.sigma(x)
        A = np.einsum("baic,bi->bac", vf.dsigma(x), uk) + vf.db(x)
        dx = np.einsum("bai,bi->ba", S, uk) + vf.b(x)
        return [dx, A @ J, -Kinv @ A, Kinv @ S]

    return deriv


@dataclass
class SkeletonFlow:
    """Skeleton solution with its Jacobian flow along a batch of controls.

    Arrays carry a leading batch axis and a time axis over the ``2^K + 1``
    grid points: ``x (B, T, e)``, ``J`` and ``Jinv (B, T, e, e)``, and
    ``m (B, T, e, d)`` with ``m_t = int_0^t J_s^{-1} sigma(x_s) ds``.
    """

    x: np.ndarray
    J: np.ndarray
    Jinv: np.ndarray
    m: np.ndarray
    K: int


def skeleton_flow(vf: VectorFieldSystem, slopes: np.ndarray, a, K: int, record_level: int | None = None) -> SkeletonFlow:
    """Batched skeleton flow for control slopes ``(B, 2^K, d)`` on the level-``K`` grid.

    With ``record_level`` the arrays are kept only on that coarser grid;
    the integration itself still runs at level ``K``.
    """
    slopes = np.asarray(slopes, dtype=float)
    B, M, d = slopes.shape
    if M != 2**K or d != vf.d:
        raise ValueError("slopes must have shape (B, 2^K, d)")
    x0 = _start(vf, a, B) if np.ndim(a) < 2 else np.asarray(a, dtype=float).copy()
    eye = np.broadcast_to(np.eye(vf.e), (B, vf.e, vf.e)).copy()
    state = [x0, eye, eye.copy(), np.zeros((B, vf.e, vf.d))]
    R = K if record_level is None else record_level
    if not 0 <= R <= K:
        raise ValueError("record level must lie between 0 and the grid level")
    _, hist = _rk4(_flow_deriv(vf, slopes), state, 1.0 / M, M, record=(0, 1, 2, 3), stride=2 ** (K - R))
    _check_finite(hist[0], "skeleton solve")
    return SkeletonFlow(hist[0], hist[1], hist[2], hist[3], R)


def skeleton_paths(vf: VectorFieldSystem, slopes: np.ndarray, a, K: int) -> np.ndarray:
    """Batched skeleton states only, shape ``(B, 2^K + 1, e)``."""
    slopes = np.asarray(slopes, dtype=float)
    B, M, _ = slopes.shape

    if vf.constant_sigma:
        S0 = vf.sigma(np.zeros(vf.e))

        def deriv(state, k):
            return [slopes[:, k] @ S0.T + vf.b(state[0])]

    else:

        def deriv(state, k):
            x = state[0]
            return [np.einsum("bai,bi->ba", vf.sigma(x), slopes[:, k]) + vf.b(x)]

    _, hist = _rk4(deriv, [_start(vf, a, B)], 1.0 / M, M, record=(0,))
    _check_finite(hist[0], "skeleton solve")
    return hist[0]


def solve_skeleton(vf: VectorFieldSystem, h: CameronMartinPath, a, K: int | None = None) -> GridPath:
    """Skeleton path ``Psi(h)`` started at ``a`` on the level-``K`` grid."""
    K = max(DEFAULT_K, h.level) if K is None else K
    u = _control_slopes(h, K, vf.d)[None]
    return GridPath(skeleton_paths(vf, u, a, K)[0])


# -- variational bundle ------------------------------------------------------


@dataclass
class VariationalBundle:
    """Base solution, first/second variations and the Jacobian flow on a grid."""

    x: GridPath
    xi1: list[GridPath]
    xi2: dict[tuple[int, int], GridPath]
    J: np.ndarray
    smoothness: str = ""
    meta: dict = field(default_factory=dict)


def _check_pairs(vf, pairs, n_dir):
    pairs = [tuple(int(i) for i in p) for p in (pairs or [])]
    for p, q in pairs:
        if not (0 <= p < n_dir and 0 <= q < n_dir):
            raise ValueError(f"pair {(p, q)} refers to a missing direction")
    if pairs and not vf.has_second_derivatives:
        raise VectorFieldError(f"system {vf.name!r} supplies no second derivatives; second variations need them")
    return pairs


def solve_variational(
    vf: VectorFieldSystem,
    h: CameronMartinPath,
    a,
    directions: list[CameronMartinPath],
    pairs=(),
    K: int | None = None,
) -> VariationalBundle:
    """Skeleton path with ``xi1(h; l)`` for each direction and ``xi2(h; l_p, l_q)`` for each pair."""
    levels = [h.level] + [l.level for l in directions]
    K = max([DEFAULT_K] + levels) if K is None else K
    pairs = _check_pairs(vf, pairs, len(directions))
    M = 2**K
    u = _control_slopes(h, K, vf.d)
    P = len(directions)
    v = np.stack([_control_slopes(l, K, vf.d) for l in directions]) if P else np.zeros((0, M, vf.d))
    pi = np.array([p for p, _ in pairs], dtype=int)
    qi = np.array([q for _, q in pairs], dtype=int)
    e = vf.e

    def deriv(state, k):
        x, J, X1, X2 = state
        uk = u[k]
        vk = v[:, k]
        S = vf.sigma(x)
        dS = vf.dsigma(x)
        A = np.einsum("aic,i->ac", dS, uk) + vf.db(x)
        out = [S @ uk + vf.b(x), A @ J, X1 @ A.T + vk @ S.T]
        if len(pairs):
            d2S = vf.d2s(x)
            d2B = vf.d2b(x)
            xp, xq = X1[pi], X1[qi]
            src = np.einsum("aicf,qc,qf,i->qa", d2S, xp, xq, uk)
            src += np.einsum("acf,qc,qf->qa", d2B, xp, xq)
            src += np.einsum("aic,qc,qi->qa", dS, xp, vk[qi])
            src += np.einsum("aic,qc,qi->qa", dS, xq, vk[pi])
            out.append(X2 @ A.T + src)
        else:
            out.append(X2)
        return out

    state = [_start(vf, a), np.eye(e), np.zeros((P, e)), np.zeros((len(pairs), e))]
    _, hist = _rk4(deriv, state, 1.0 / M, M, record=(0, 1, 2, 3), axis=0)
    return _bundle(vf, hist[0], hist[1], hist[2], hist[3], pairs, K, "rk4")


def _bundle(vf, x, J, X1, X2, pairs, K, scheme):
    _check_finite(x, "variational solve")
    _check_finite(X1, "variational solve")
    _check_finite(X2, "variational solve")
    return VariationalBundle(
        x=GridPath(x),
        xi1=[GridPath(X1[:, p]) for p in range(X1.shape[1])],
        xi2={pq: GridPath(X2[:, j]) for j, pq in enumerate(pairs)},
        J=J,
        smoothness=vf.smoothness,
        meta={"K": K, "scheme": scheme},
    )


# -- step-2 scheme -----------------------------------------------------------


def _G(vf, x, S=None, dS=None):
    """``G[..., a, i, j] = sum_c d_c V_j^a V_i^c``, the coefficient of ``w2^{ij}``."""
    S = vf.sigma(x) if S is None else S
    dS = vf.dsigma(x) if dS is None else dS
    return np.einsum("...ajc,...ci->...aij", dS, S)


def _fd_last(f, x, h=1e-5):
    e = x.shape[-1]
    cols = []
    for c in range(e):
        step = np.zeros(e)
        step[c] = h
        cols.append((f(x + step) - f(x - step)) / (2 * h))
    return np.stack(cols, axis=-1)


def _dG(vf, x):
    """``[..., a, i, j, f] = d_f G[a, i, j]``; central differences when no second derivatives are supplied."""
    if vf.d2sigma is None:
        return _fd_last(lambda y: _G(vf, y), x)
    S = vf.sigma(x)
    dS = vf.dsigma(x)
    return np.einsum("...ajcf,...ci->...aijf", vf.d2sigma(x), S) + np.einsum("...ajc,...cif->...aijf", dS, dS)


def step2_paths(
    vf: VectorFieldSystem, a, dw: np.ndarray, area: np.ndarray | None = None, keep_path: bool = True, dt: float | None = None
):
    """Batched step-2 scheme.

    ``dw`` has shape ``(B, steps, d)``; ``area`` holds the adjacent level-2
    increments ``(B, steps, d, d)`` and defaults to the piecewise-linear lift
    ``dw (x) dw / 2``.  ``a`` is one start point or one per batch member and
    ``dt`` defaults to ``1 / steps``.  Returns ``(B, steps + 1, e)`` or only
    the endpoints.
    """
    dw = np.asarray(dw, dtype=float)
    B, M, d = dw.shape
    if d != vf.d:
        raise ValueError(f"driver has dimension {d}, system needs d={vf.d}")
    dt = 1.0 / M if dt is None else dt
    x = _start(vf, a, B) if np.ndim(a) < 2 else np.asarray(a, dtype=float).copy()
    out = np.empty((B, M + 1, vf.e)) if keep_path else None
    if keep_path:
        out[:, 0] = x
    if vf.constant_sigma:
        S0 = vf.sigma(x[:1])[0]
        # time-major (M, B, e) increments; the level-2 term vanishes
        dwT = np.ascontiguousarray(np.swapaxes(dw, 0, 1))
        noise = (dwT.reshape(-1, d) @ S0.T).reshape(M, B, vf.e)
    for k in range(M):
        if vf.constant_sigma:
            x = x + noise[k] + (vf.drift(x) * dt if vf.drift is not None else 0.0)
        else:
            inc = dw[:, k]
            W = area[:, k] if area is not None else 0.5 * inc[:, :, None] * inc[:, None, :]
            S = vf.sigma(x)
            G = _G(vf, x, S)
            x = x + (S @ inc[:, :, None])[..., 0] + vf.b(x) * dt + np.einsum("baij,bij->ba", G, W)
        if keep_path:
            out[:, k + 1] = x
        if k % 64 == 63:
            _check_finite(x, "rde solve")
    _check_finite(x, "rde solve")
    return out if keep_path else x


def solve_rde(vf: VectorFieldSystem, rp: RoughPath, a) -> GridPath:
    """``Phi(rp)`` started at ``a`` by the step-2 increment scheme on ``rp``'s grid."""
    return GridPath(step2_paths(vf, a, rp.increments[None], rp.area[None])[0])


def solve_variational_rough(
    vf: VectorFieldSystem,
    rp: RoughPath,
    a,
    directions: list[CameronMartinPath],
    pairs=(),
    fd_step: float = 1e-5,
) -> VariationalBundle:
    """First/second variations of the step-2 solution along Young translations ``T_{eps l} rp``.

    Each step is differentiated exactly, with the translated level-2 data
    ``W + eps (dw (x) dl + dl (x) dw)/2 + eps^2 dl (x) dl / 2``.  The
    third-derivative term of the second variation uses a central difference
    of the analytic ``D G`` along the first variation.
    """
    K = rp.level
    M = 2**K
    dt = 1.0 / M
    pairs = _check_pairs(vf, pairs, len(directions))
    P = len(directions)
    e = vf.e
    for l in directions:
        _control_slopes(l, K, vf.d)
    dl = np.stack([np.diff(l.values_at_level(K), axis=0) for l in directions]) if P else np.zeros((0, M, vf.d))
    pi = np.array([p for p, _ in pairs], dtype=int)
    qi = np.array([q for _, q in pairs], dtype=int)
    dw = rp.increments
    x = _start(vf, a)
    J = np.eye(e)
    X1 = np.zeros((P, e))
    X2 = np.zeros((len(pairs), e))
    hx, hJ, h1, h2 = [x], [J], [X1], [X2]
    for k in range(M):
        w = dw[k]
        Wk = rp.area[k]
        lk = dl[:, k]
        S = vf.sigma(x)
        dS = vf.dsigma(x)
        G = _G(vf, x, S, dS)
        dG = _dG(vf, x)
        A = np.einsum("aic,i->ac", dS, w) + vf.db(x) * dt + np.einsum("aijc,ij->ac", dG, Wk)
        dW = 0.5 * (w[None, :, None] * lk[:, None, :] + lk[:, :, None] * w[None, None, :])
        X1n = X1 + X1 @ A.T + lk @ S.T + np.einsum("aij,pij->pa", G, dW)
        if len(pairs):
            xp, xq = X1[pi], X1[qi]
            src = np.einsum("aicf,qc,qf,i->qa", vf.d2s(x), xp, xq, w)
            src += dt * np.einsum("acf,qc,qf->qa", vf.d2b(x), xp, xq)
            src += _d2G_term(vf, x, xp, xq, Wk, fd_step)
            src += np.einsum("aic,qc,qi->qa", dS, xp, lk[qi]) + np.einsum("aic,qc,qi->qa", dS, xq, lk[pi])
            src += np.einsum("aijc,qc,qij->qa", dG, xp, dW[qi]) + np.einsum("aijc,qc,qij->qa", dG, xq, dW[pi])
            C = 0.5 * (lk[pi][:, :, None] * lk[qi][:, None, :] + lk[qi][:, :, None] * lk[pi][:, None, :])
            src += np.einsum("aij,qij->qa", G, C)
            X2 = X2 + X2 @ A.T + src
        X1 = X1n
        x = x + S @ w + vf.b(x) * dt + np.einsum("aij,ij->a", G, Wk)
        J = J + A @ J
        hx.append(x)
        hJ.append(J)
        h1.append(X1)
        h2.append(X2)
        if k % 64 == 63:
            _check_finite(x, "rough variational solve")
    return _bundle(vf, np.array(hx), np.array(hJ), np.array(h1), np.array(h2), pairs, K, "step2-tangent")


def _d2G_term(vf, x, xp, xq, W, h):
    """``sum_ij D^2 G[xp, xq]^{a}_{ij} W^{ij}`` by a central difference of ``D G`` along ``xp``."""
    nrm = np.linalg.norm(xp, axis=1)
    out = np.zeros_like(xp)
    live = nrm > 0
    if not np.any(live):
        return out
    u = xp[live] / nrm[live, None]
    diff = (_dG(vf, x + h * u) - _dG(vf, x - h * u)) / (2 * h)
    out[live] = nrm[live, None] * np.einsum("qaijc,qc,ij->qa", diff, xq[live], W)
    return out


def jacobian_flow_rough(vf: VectorFieldSystem, rp: RoughPath, a):
    """Step-2 solution with its Jacobian flow ``J`` and an independently advanced ``J^{-1}``.

    ``J^{-1}`` follows ``dK = -K (D V_i dw^i + D V_0 dt)`` through its own
    step-2 update rather than by inverting ``J``.  Returns ``(x, J, Jinv)``
    with time on the first axis.
    """
    K = rp.level
    M = 2**K
    dt = 1.0 / M
    e = vf.e
    x = _start(vf, a)
    J = np.eye(e)
    Kinv = np.eye(e)
    hx, hJ, hK = [x], [J], [Kinv]
    dw = rp.increments
    for k in range(M):
        w = dw[k]
        Wk = rp.area[k]
        S = vf.sigma(x)
        dS = vf.dsigma(x)
        G = _G(vf, x, S, dS)
        Ai = np.moveaxis(dS, 1, 0)  # (d, e, e): A_i = D V_i
        A0 = vf.db(x)
        if vf.d2sigma is not None:
            DA = np.einsum("ajcf,fi->ijac", vf.d2sigma(x), S)  # DA_j[V_i]
        else:
            DA = np.moveaxis(_fd_last(lambda y: vf.dsigma(y), x), 1, 0)
            DA = np.einsum("jacf,fi->ijac", DA, S)
        step = np.einsum("iac,i->ac", Ai, w) + A0 * dt + np.einsum("ijac,ij->ac", DA + np.einsum("jab,ibc->ijac", Ai, Ai), Wk)
        kstep = -np.einsum("iac,i->ac", Ai, w) - A0 * dt + np.einsum("ijac,ij->ac", np.einsum("iab,jbc->ijac", Ai, Ai) - DA, Wk)
        x = x + S @ w + vf.b(x) * dt + np.einsum("aij,ij->a", G, Wk)
        J = J + step @ J
        Kinv = Kinv + Kinv @ kstep
        hx.append(x)
        hJ.append(J)
        hK.append(Kinv)
    hx = np.array(hx)
    _check_finite(hx, "rde solve")
    return hx, np.array(hJ), np.array(hK)


# -- endpoint Jacobian over the Haar basis ------------------------------------


def _proj_rows(proj, e):
    if proj is None:
        return np.eye(e)
    rows = np.asarray(getattr(proj, "rows", proj), dtype=float)
    if rows.ndim == 1:
        rows = rows[None]
    if rows.shape[1] != e:
        raise ValueError(f"projection acts on R^{rows.shape[1]}, state space is R^{e}")
    return rows


def interval_sensitivities(flow: SkeletonFlow, N: int) -> np.ndarray:
    """``int_{I_k} J_s^{-1} sigma(x_s) ds`` over the level-``N`` intervals, shape ``(B, 2^N, e, d)``."""
    r = 2 ** (flow.K - N)
    if r < 1:
        raise ValueError("flow grid is coarser than the requested level")
    return flow.m[:, r::r] - flow.m[:, :-1:r]


def slope_to_haar(D: np.ndarray, N: int) -> np.ndarray:
    """Convert derivatives w.r.t. level-``N`` interval slopes to Haar coefficients.

    ``D`` has the interval axis second, ``(B, 2^N, ...)``.  Slopes are
    ``u = sqrt(2^N) Q^T c`` with ``Q`` the orthogonal Haar matrix, so the
    result keeps the shape with the interval axis replaced by the basis axis.
    """
    Q = haar_matrix(N)
    return np.sqrt(2.0**N) * np.einsum("jk,bk...->bj...", Q, D)


def jacobian_endpoint_matrix(vf: VectorFieldSystem, h: CameronMartinPath, a, proj=None, N: int = 8, K: int | None = None):
    """Matrix of ``l -> Pi xi1(h; l)_1`` over the Haar basis of the level-``N`` space.

    Columns follow :func:`pinsupport.pathspace.haar_indices` order.
    Computed by variation of constants, ``d x_1 / d u_k = J_1 int_{I_k} J_s^{-1} sigma(x_s) ds``.
    """
    K = max(DEFAULT_K, N, h.level) if K is None else K
    if K < N:
        raise ValueError("grid level must resolve the truncation level")
    flow = skeleton_flow(vf, _control_slopes(h, K, vf.d)[None], a, K)
    return _endpoint_matrix_from_flow(flow, N, _proj_rows(proj, vf.e))[0]


def _endpoint_matrix_from_flow(flow: SkeletonFlow, N: int, rows: np.ndarray) -> np.ndarray:
    Mk = interval_sensitivities(flow, N)  # (B, 2^N, e, d)
    D = np.einsum("fa,bac,bkcd->bkfd", rows, flow.J[:, -1], Mk)
    C = slope_to_haar(D, N)  # (B, 2^N, e', d)
    B = C.shape[0]
    return np.transpose(C, (0, 2, 1, 3)).reshape(B, rows.shape[0], -1)
