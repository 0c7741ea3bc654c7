"""Two-sided support checks for pinned diffusions.

Forward inclusion: every bridge sample should be close to the projected
skeleton ``Pi Psi(h)`` of some admissible control, i.e. one with
``Pi Psi(h)_1 = b`` and a surjective endpoint derivative.  Controls are
searched in the level-``N`` piecewise-linear space by a batched
Levenberg-Marquardt loop whose Jacobians come from variation of constants.

Reverse inclusion: the weighted mass a bridge ensemble puts in a sup-norm
tube around an admissible skeleton should be positive.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import beta as beta_dist

from .errors import NumericalGuardError
from .malliavin import DEFAULT_TAU, GramMatrix, SurjectivityReport, as_projection, surjectivity_check
from .pathspace import BesovParams, CameronMartinPath, GridPath, haar_coefficients
from ._kernels import hoelder_max
from .pinned import BridgeEnsemble
from .rde import (
    _endpoint_matrix_from_flow,
    interval_sensitivities,
    skeleton_flow,
    skeleton_paths,
)
from .vectorfields import VectorFieldSystem

DEFAULT_RHO = 1e3
DEFAULT_STARTS = 5
DEFAULT_MAX_ITER = 500
ENDPOINT_TOL = 1e-8
# fits run on a grid this many levels finer than the control, capped by the target grid
FIT_REFINE = 2


class AdmissibilityError(ValueError):
    """A control offered as admissible is not (endpoint off target or derivative not onto)."""


@dataclass
class SkeletonFit:
    target: GridPath
    control: CameronMartinPath
    haar: np.ndarray
    residual_sup: float
    residual_hoelder: float
    beta: float
    endpoint_gap: float
    surjectivity: SurjectivityReport
    status: str
    trace: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "residual_sup": self.residual_sup,
            "residual_hoelder": self.residual_hoelder,
            "beta": self.beta,
            "endpoint_gap": self.endpoint_gap,
            "surjectivity": self.surjectivity.to_json(),
            "N": self.control.level,
            "haar_coefficients": self.haar.tolist(),
            "trace": self.trace,
        }


def _start_seed(seed: int, target: int, start: int) -> list:
    return [int(seed), int(target), int(start)]


def _random_start(seed_key, N: int, d: int) -> np.ndarray:
    """Slopes of a random start; Haar coefficients at level ``n`` have scale ``2^{-n/2}``."""
    from .pathspace import from_haar_coefficients, haar_indices

    rng = np.random.default_rng(np.random.SeedSequence(seed_key[0], spawn_key=tuple(seed_key[1:])))
    levels = np.array([idx.n for idx in haar_indices(N, 1)])
    c = rng.standard_normal((2**N, d)) * 2.0 ** (-levels / 2)[:, None]
    return from_haar_coefficients(c, N).slopes(N)


class _Problem:
    """Shared data of a batch of knot-wise least-squares fits."""

    def __init__(self, vf, a, b, rows, Y, N, Kf, rho):
        self.vf, self.a, self.b, self.rows, self.Y = vf, a, b, rows, Y
        self.N, self.Kf, self.rho = N, Kf, rho
        self.r = 2 ** (Kf - N)

    def fine(self, u):
        return np.repeat(u, self.r, axis=1)

    def objective_from_x(self, x, idx):
        px = x[:, self.r :: self.r] @ self.rows.T
        res = px - self.Y[idx]
        end = px[:, -1] - self.b
        return np.sum(res**2, axis=(1, 2)) + self.rho * np.sum(end**2, axis=1), res, end

    def objective(self, u, idx):
        x = skeleton_paths(self.vf, self.fine(u), self.a, self.Kf)
        return self.objective_from_x(x, idx)[0]

    def linearize(self, u, idx):
        """Objective and the ingredients of the linearized problem.

        Knot ``j`` (array index ``j``, time ``t_{j+1}``) moves by
        ``PJ_j z_j`` where ``z_{k+1} = z_k + M_k du_k`` and ``z_0 = 0``.
        """
        flow = skeleton_flow(self.vf, self.fine(u), self.a, self.Kf, record_level=self.N)
        px = flow.x[:, 1:] @ self.rows.T
        res = px - self.Y[idx]
        end = px[:, -1] - self.b
        obj = np.sum(res**2, axis=(1, 2)) + self.rho * np.sum(end**2, axis=1)
        PJ = np.einsum("fa,bjac->bjfc", self.rows, flow.J[:, 1:])  # (B, n, e', e)
        Mk = interval_sensitivities(flow, self.N)  # (B, n, e, d)
        return obj, PJ, res, end, Mk


def _lq_step(PJ, res, end, Mk, rho, mu):
    """Exact damped Gauss-Newton step by a backward Riccati sweep.

    Minimizes ``sum_j |PJ_j z_j + res_j|^2 + rho |PJ_n z_n + end|^2 + mu sum_k |du_k|^2``
    over the slope increments ``du``; cost is linear in the number of intervals.
    Also returns ``max_k diag`` of the Gauss-Newton matrix for damping scale.
    """
    B, n, _, e = PJ.shape
    d = Mk.shape[3]
    Q = np.einsum("bjfa,bjfc->bjac", PJ, PJ)
    s = np.einsum("bjfa,bjf->bja", PJ, res)
    Q[:, -1] *= 1.0 + rho
    s[:, -1] += rho * np.einsum("bfa,bf->ba", PJ[:, -1], end)
    eye = np.eye(d)
    gains = np.empty((B, n, d, e))
    Ps = np.empty((B, n, e, e))
    qs = np.empty((B, n, e))
    diag = np.zeros(B)
    S = np.zeros((B, e, e))  # suffix sums of Q for the damping scale
    P = Q[:, -1].copy()
    q = s[:, -1].copy()
    for k in range(n - 1, -1, -1):
        S += Q[:, k]
        diag = np.maximum(diag, np.max(np.einsum("bai,bac,bci->bi", Mk[:, k], S, Mk[:, k]), axis=1))
        Ps[:, k], qs[:, k] = P, q
        PM = P @ Mk[:, k]
        G = mu[:, None, None] * eye + np.swapaxes(Mk[:, k], 1, 2) @ PM
        Kg = np.linalg.solve(G, np.swapaxes(PM, 1, 2))  # (B, d, e) = G^-1 M^T P
        gains[:, k] = Kg
        if k > 0:
            P = P - PM @ Kg + Q[:, k - 1]
            P = 0.5 * (P + np.swapaxes(P, 1, 2))
            q = q - np.einsum("bae,be->ba", PM, np.linalg.solve(G, np.einsum("bai,ba->bi", Mk[:, k], q)[..., None])[..., 0]) + s[:, k - 1]
    du = np.empty((B, n, d))
    z = np.zeros((B, e))
    for k in range(n):
        PM = Ps[:, k] @ Mk[:, k]
        G = mu[:, None, None] * eye + np.swapaxes(Mk[:, k], 1, 2) @ PM
        rhs = np.einsum("bai,ba->bi", Mk[:, k], np.einsum("bac,bc->ba", Ps[:, k], z) + qs[:, k])
        du[:, k] = -np.linalg.solve(G, rhs[..., None])[..., 0]
        z = z + np.einsum("bai,bi->ba", Mk[:, k], du[:, k])
    return du, diag


def _lm(prob: _Problem, u0: np.ndarray, max_iter: int):
    """Batched Levenberg-Marquardt with isotropic damping on the slopes.

    Isotropic damping in slope coordinates equals isotropic damping in Haar
    coordinates, since the two are related by a scaled orthogonal map.
    """
    u = u0.copy()
    B, n, d = u.shape
    mu = np.full(B, np.nan)
    iters = np.zeros(B, dtype=int)
    done = np.zeros(B, dtype=bool)
    obj0 = None
    obj_cur = np.empty(B)
    for it in range(max_iter):
        idx = np.nonzero(~done)[0]
        if idx.size == 0:
            break
        obj, PJ, res, end, Mk = prob.linearize(u[idx], idx)
        if not np.all(np.isfinite(obj)):
            raise NumericalGuardError("non-finite objective in the skeleton fit")
        if obj0 is None:
            obj0 = obj.copy()
        obj_cur[idx] = obj
        fresh = np.isnan(mu[idx])
        if np.any(fresh):
            _, dmax = _lq_step(PJ[fresh], res[fresh], end[fresh], Mk[fresh], prob.rho, np.ones(int(fresh.sum())))
            mu[idx[fresh]] = 1e-9 * np.maximum(dmax, 1e-300)
        step, _ = _lq_step(PJ, res, end, Mk, prob.rho, mu[idx])
        trial = u[idx] + step
        new = prob.objective(trial, idx)
        ok = np.isfinite(new) & (new <= obj)
        gain = obj - new
        scale = np.linalg.norm(u[idx].reshape(idx.size, -1), axis=1) + 1.0
        small = np.linalg.norm(step.reshape(idx.size, -1), axis=1) <= 1e-12 * scale
        u[idx[ok]] = trial[ok]
        obj_cur[idx[ok]] = new[ok]
        mu[idx[ok]] /= 10.0
        mu[idx[~ok]] *= 10.0
        iters[idx] += 1
        conv = (ok & (gain <= 1e-13 * obj + 1e-30)) | small | (obj_cur[idx] < 1e-30) | (mu[idx] > 1e20)
        done[idx[conv]] = True
    return u, iters, obj0, obj_cur, done


def _cleanup(prob: _Problem, u: np.ndarray, max_steps: int = 8, tol: float = 1e-13):
    """Shift the ``phi^{0,1}`` coefficients (constant slope) to close the endpoint gap.

    Newton steps on ``c -> Pi Psi(h + c t)_1 - b`` using ``D = Pi J_1 m_1``,
    taken only where ``D`` has full row rank.  Returns updated slopes, the final
    flow and a flag per member telling whether the endpoint map was invertible.
    """
    u = u.copy()
    B = u.shape[0]
    vf = prob.vf
    invertible = np.zeros(B, dtype=bool)
    for step in range(max_steps + 1):
        flow = skeleton_flow(vf, prob.fine(u), prob.a, prob.Kf, record_level=0)
        gap = flow.x[:, -1] @ prob.rows.T - prob.b
        D = np.einsum("fa,bac,bci->bfi", prob.rows, flow.J[:, -1], flow.m[:, -1])
        sv = np.linalg.svd(D, compute_uv=False)
        full = (D.shape[2] >= D.shape[1]) & (sv[:, -1] > 1e-10 * np.maximum(sv[:, 0], 1.0))
        if step == 0:
            invertible = full.copy()
        act = full & (np.linalg.norm(gap, axis=1) > tol)
        if step == max_steps or not np.any(act):
            return u, flow, invertible
        shift = -np.einsum("bif,bf->bi", np.linalg.pinv(D[act]), gap[act])
        u[act] += shift[:, None, :]
    return u, flow, invertible


def fit_admissible_skeletons(
    vf: VectorFieldSystem,
    a,
    b,
    proj,
    targets,
    N: int,
    rho: float = DEFAULT_RHO,
    seed: int = 0,
    n_starts: int = DEFAULT_STARTS,
    max_iter: int = DEFAULT_MAX_ITER,
    tau: float = DEFAULT_TAU,
    warm_starts: list | None = None,
    params: BesovParams | None = None,
    endpoint_tol: float = ENDPOINT_TOL,
    target_ids=None,
) -> list[SkeletonFit]:
    """Fit admissible controls to a batch of projected target paths.

    The objective is the knot-wise least-squares distance at the level-``N``
    knots plus ``rho |Pi Psi(h)_1 - b|^2``.  Start 0 is ``warm_starts[j]``
    (or the zero control); the others are random with recorded seed keys
    ``(seed, target id, start)``.  The best candidate, including the warm
    start itself, is the one with the smallest sup residual on the target
    grid among those with the smallest endpoint gap.
    """
    if N < 1:
        raise ValueError("truncation level N must be >= 1")
    if not rho > 0:
        raise ValueError("penalty weight rho must be positive")
    params = params or BesovParams()
    P = as_projection(proj, vf.e)
    rows = P.rows
    b = np.atleast_1d(np.asarray(b, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    tg = [t if isinstance(t, GridPath) else GridPath(t) for t in targets]
    if not tg:
        return []
    Kt = tg[0].level
    if any(t.level != Kt for t in tg):
        raise ValueError("targets must share one grid")
    if Kt < N:
        raise ValueError("target grid must resolve the truncation level")
    if tg[0].dim != rows.shape[0]:
        raise ValueError("targets must live in the projected space")
    n_t = len(tg)
    ids = list(range(n_t)) if target_ids is None else [int(i) for i in target_ids]
    Kf = min(N + FIT_REFINE, max(Kt, N))
    d = vf.d
    n = 2**N
    knots = np.array([t.values[:: 2 ** (Kt - N)][1:] for t in tg])  # (n_t, n, e')

    starts, keys = [], []
    for j in range(n_t):
        w = warm_starts[j] if warm_starts is not None and warm_starts[j] is not None else None
        starts.append(w.slopes(N) if w is not None else np.zeros((n, d)))
        keys.append(None if w is not None else "zero")
        for s in range(1, n_starts):
            key = _start_seed(seed, ids[j], s)
            starts.append(_random_start(key, N, d))
            keys.append(key)
    u0 = np.array(starts)
    Y = np.repeat(knots, n_starts, axis=0)
    prob = _Problem(vf, a, b, rows, Y, N, Kf, float(rho))
    u, iters, obj0, obj, conv = _lm(prob, u0, max_iter)
    u, _, _ = _cleanup(prob, u)

    # candidates: every start's optimum, plus the warm starts themselves
    cand = [u.reshape(n_t, n_starts, n, d)]
    if warm_starts is not None:
        cand.append(np.array([ws.slopes(N) if ws is not None else np.zeros((n, d)) for ws in warm_starts])[:, None])
    cand = np.concatenate(cand, axis=1)  # (n_t, n_c, n, d)
    n_c = cand.shape[1]
    xt = skeleton_paths(vf, np.repeat(cand.reshape(n_t * n_c, n, d), 2 ** (Kt - N), axis=1), a, Kt)
    px = (xt @ rows.T).reshape(n_t, n_c, -1, rows.shape[0])
    tv = np.array([t.values for t in tg])
    sup_res = np.max(np.linalg.norm(px - tv[:, None], axis=3), axis=2)
    gaps = np.linalg.norm(px[:, :, -1] - b, axis=2)
    best = np.empty(n_t, dtype=int)
    for j in range(n_t):
        ok = gaps[j] <= max(endpoint_tol, gaps[j].min() * (1 + 1e-6) + 1e-15)
        best[j] = int(np.nonzero(ok)[0][np.argmin(sup_res[j][ok])])
    ub = cand[np.arange(n_t), best]

    # surjectivity of the endpoint derivative at the chosen controls
    flow = skeleton_flow(vf, np.repeat(ub, 2 ** (Kf - N), axis=1), a, Kf, record_level=N)
    Mend = _endpoint_matrix_from_flow(flow, N, rows)
    beta = params.hoelder_exponent
    fits = []
    for j in range(n_t):
        gram = GramMatrix(Mend[j] @ Mend[j].T, N, {"kind": "deterministic"})
        rep = surjectivity_check(gram, tau)
        h = CameronMartinPath.from_slopes(ub[j])
        diff = px[j, best[j]] - tv[j]
        gap = float(gaps[j, best[j]])
        admissible = gap <= endpoint_tol and rep.surjective
        trace = {
            "rho": float(rho),
            "n_starts": n_starts,
            "max_iter": max_iter,
            "N": N,
            "fit_grid_level": Kf,
            "best_candidate": int(best[j]),
            "starts": [
                {
                    "seed_key": keys[j * n_starts + s],
                    "iterations": int(iters[j * n_starts + s]),
                    "converged": bool(conv[j * n_starts + s]),
                    "objective_start": float(obj0[j * n_starts + s]),
                    "objective_end": float(obj[j * n_starts + s]),
                    "residual_sup": float(sup_res[j, s]),
                    "endpoint_gap": float(gaps[j, s]),
                }
                for s in range(n_starts)
            ],
        }
        if warm_starts is not None:
            trace["warm_candidate"] = {"residual_sup": float(sup_res[j, -1]), "endpoint_gap": float(gaps[j, -1])}
        fits.append(
            SkeletonFit(
                target=tg[j],
                control=h,
                haar=haar_coefficients(h, N),
                residual_sup=float(sup_res[j, best[j]]),
                residual_hoelder=float(hoelder_max(np.ascontiguousarray(diff), beta)),
                beta=beta,
                endpoint_gap=gap,
                surjectivity=rep,
                status="admissible-fit" if admissible else "no-admissible-fit",
                trace=trace,
            )
        )
    return fits


def fit_admissible_skeleton(vf, a, b, proj, target, N, rho=DEFAULT_RHO, seed=0, **kw) -> SkeletonFit:
    """Single-target version of :func:`fit_admissible_skeletons`."""
    warm = kw.pop("warm_start", None)
    return fit_admissible_skeletons(vf, a, b, proj, [target], N, rho, seed, warm_starts=None if warm is None else [warm], **kw)[0]


# -- forward inclusion: coverage -------------------------------------------------


@dataclass
class SupportReport:
    kind: str
    params: dict
    coverage: float | None = None
    residuals: dict = field(default_factory=dict)  # level -> per-sample sup residuals
    hoelder_residuals: dict = field(default_factory=dict)
    gaps: list = field(default_factory=list)
    surjective: list = field(default_factory=list)
    medians: dict = field(default_factory=dict)
    tube: dict = field(default_factory=dict)
    admissible_set_empty: bool | None = None
    control: CameronMartinPath | None = None  # best control found by a probe, not serialized

    def to_json(self) -> dict:
        out = {
            "kind": self.kind,
            "params": self.params,
            "coverage": self.coverage,
            "residual_summary": {
                str(k): _summary(v) for k, v in self.residuals.items()
            },
            "medians": {str(k): v for k, v in self.medians.items()},
            "admissible_set_empty": self.admissible_set_empty,
        }
        if self.tube:
            out["tube"] = self.tube
        return out

    def write_csv(self, path) -> None:
        levels = sorted(self.residuals)
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["sample"] + [f"sup_residual_N{k}" for k in levels] + [f"hoelder_residual_N{levels[0]}", "endpoint_gap", "surjective"])
            for i in range(len(self.residuals[levels[0]])):
                w.writerow(
                    [i]
                    + [format(self.residuals[k][i], ".17g") for k in levels]
                    + [format(self.hoelder_residuals[levels[0]][i], ".17g"), format(self.gaps[i], ".17g"), int(self.surjective[i])]
                )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))


def _summary(v):
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return {}
    return {
        "n": int(v.size),
        "min": float(v.min()),
        "median": float(np.median(v)),
        "mean": float(v.mean()),
        "p90": float(np.quantile(v, 0.9)),
        "max": float(v.max()),
    }


def support_coverage_test(
    vf: VectorFieldSystem,
    a,
    b,
    proj,
    ensemble: BridgeEnsemble,
    N: int = 8,
    delta: float = 0.2,
    tau: float = DEFAULT_TAU,
    seed: int = 0,
    rho: float = DEFAULT_RHO,
    n_starts: int = DEFAULT_STARTS,
    refine_levels: int = 2,
    params: BesovParams | None = None,
    batch: int = 256,
) -> SupportReport:
    """Weighted fraction of bridge samples within ``delta`` of an admissible skeleton.

    A sample is covered iff its fit residual is ``<= delta``, the fitted
    endpoint gap is ``<= eps`` and the endpoint derivative is onto at ``tau``.
    The fit is repeated at level ``N + refine_levels``, warm-started from
    the level-``N`` optimum, to expose the decrease of the residuals.
    """
    if len(ensemble) == 0:
        raise ValueError("ensemble is empty")
    P = as_projection(proj, vf.e)
    targets = ensemble.proj(ensemble.paths) if P is ensemble.proj else P(ensemble.paths)
    fits, fits2 = [], []
    for lo in range(0, len(targets), batch):
        ids = list(range(lo, min(lo + batch, len(targets))))
        f1 = fit_admissible_skeletons(vf, a, b, P, targets[ids], N, rho, seed, n_starts, tau=tau, params=params, target_ids=ids)
        fits.extend(f1)
        if refine_levels:
            fits2.extend(
                fit_admissible_skeletons(
                    vf, a, b, P, targets[ids], N + refine_levels, rho, seed, n_starts, tau=tau, params=params,
                    warm_starts=[f.control for f in f1], target_ids=ids,
                )
            )
    res = np.array([f.residual_sup for f in fits])
    gaps = np.array([f.endpoint_gap for f in fits])
    surj = np.array([f.surjectivity.surjective for f in fits])
    covered = (res <= delta) & (gaps <= ensemble.eps) & surj
    report = SupportReport(
        kind="coverage",
        params={"N": N, "delta": delta, "tau": tau, "rho": rho, "eps": ensemble.eps, "n_starts": n_starts,
                "refine_levels": refine_levels, "seed": seed, "n_samples": len(fits)},
        coverage=float(np.sum(ensemble.weights * covered)),
        residuals={N: res.tolist()},
        hoelder_residuals={N: [f.residual_hoelder for f in fits]},
        gaps=gaps.tolist(),
        surjective=surj.tolist(),
        medians={N: float(np.median(res))},
        admissible_set_empty=not any(f.status == "admissible-fit" for f in fits),
    )
    if fits2:
        r2 = np.array([f.residual_sup for f in fits2])
        report.residuals[N + refine_levels] = r2.tolist()
        report.hoelder_residuals[N + refine_levels] = [f.residual_hoelder for f in fits2]
        report.medians[N + refine_levels] = float(np.median(r2))
    return report


def admissible_set_probe(vf, a, b, proj, N: int = 4, K: int = 8, seed: int = 0, tau: float = DEFAULT_TAU, n_starts=DEFAULT_STARTS) -> SupportReport:
    """Search for any admissible control by fitting the straight line from ``Pi a`` to ``b``."""
    P = as_projection(proj, vf.e)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    t = np.linspace(0, 1, 2**K + 1)[:, None]
    line = P(a) + t * (b - P(a))
    fit = fit_admissible_skeleton(vf, a, b, P, GridPath(line), N, seed=seed, tau=tau, n_starts=n_starts)
    gaps = [s["endpoint_gap"] for s in fit.trace["starts"]]
    return SupportReport(
        kind="admissible-probe",
        params={"N": N, "K": K, "tau": tau, "seed": seed},
        residuals={N: [fit.residual_sup]},
        hoelder_residuals={N: [fit.residual_hoelder]},
        gaps=[fit.endpoint_gap],
        surjective=[fit.surjectivity.surjective],
        admissible_set_empty=fit.status != "admissible-fit",
        tube={"min_gap_over_starts": float(min(gaps)), "status": fit.status},
        control=fit.control,
    )


# -- reverse inclusion: tube mass --------------------------------------------------


def weighted_lower_bound(mass: float, weights: np.ndarray, level: float = 0.99) -> tuple[float, float]:
    """One-sided Clopper-Pearson lower bound with effective size ``1 / sum w^2``."""
    n_eff = float(1.0 / np.sum(np.asarray(weights) ** 2))
    k = mass * n_eff
    if k <= 0:
        return 0.0, n_eff
    return float(beta_dist.ppf(1 - level, k, n_eff - k + 1)), n_eff


def tube_mass_test(
    vf: VectorFieldSystem,
    a,
    b,
    proj,
    h_admissible: CameronMartinPath,
    eta: float,
    ensemble: BridgeEnsemble,
    tau: float = DEFAULT_TAU,
    N: int = 8,
) -> SupportReport:
    """Weighted ensemble mass of the sup-norm ``eta``-tube around ``Pi Psi(h)``.

    ``h`` must be admissible: ``|Pi Psi(h)_1 - b| <= eps`` and a surjective
    endpoint derivative at level ``N`` and threshold ``tau``; otherwise
    :class:`AdmissibilityError` is raised.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    P = as_projection(proj, vf.e)
    K = ensemble.K
    Nn = max(N, h_admissible.level)
    Kf = max(K, Nn)
    flow = skeleton_flow(vf, h_admissible.slopes(Kf)[None], a, Kf)
    center = P(flow.x[0, :: 2 ** (Kf - K)])
    gap = float(np.linalg.norm(center[-1] - np.atleast_1d(b)))
    if gap > ensemble.eps:
        raise AdmissibilityError(f"skeleton endpoint misses b by {gap:.3e} > eps = {ensemble.eps}")
    Mend = _endpoint_matrix_from_flow(flow, N, P.rows)[0]
    rep = surjectivity_check(GramMatrix(Mend @ Mend.T, N), tau)
    if not rep.surjective:
        raise AdmissibilityError(f"endpoint derivative not onto (lambda_min {rep.lambda_min:.3e} < tau {tau})")
    dist = np.max(np.linalg.norm(P(ensemble.paths) - center[None], axis=2), axis=1)
    inside = dist <= eta
    mass = float(np.sum(ensemble.weights * inside))
    lb, n_eff = weighted_lower_bound(mass, ensemble.weights)
    return SupportReport(
        kind="tube-mass",
        params={"eta": eta, "tau": tau, "N": N, "eps": ensemble.eps, "n_paths": len(ensemble)},
        tube={"mass": mass, "lower99": lb, "n_eff": n_eff, "hits": int(inside.sum()), "positive": bool(lb > 0),
              "center_gap": gap, "lambda_min": rep.lambda_min},
        admissible_set_empty=False,
    )
