"""Coefficient systems ``dx = sigma(x) dw + b(x) dt`` and a registry of built-ins.

All evaluators are batched over leading axes: with ``x`` of shape
``(..., e)`` they return

* ``sigma``   ``(..., e, d)``          columns are ``V_1 .. V_d``
* ``dsigma``  ``(..., e, d, e)``       ``[a, i, c] = d_c sigma^a_i``
* ``d2sigma`` ``(..., e, d, e, e)``    ``[a, i, c, f] = d_c d_f sigma^a_i``
* ``drift``   ``(..., e)``             ``V_0``
* ``ddrift``  ``(..., e, e)``          ``[a, c] = d_c b^a``
* ``d2drift`` ``(..., e, e, e)``

Evaluators must not keep mutable state, so solvers may call them from
several threads at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

Array = np.ndarray


class VectorFieldError(ValueError):
    pass


def _zeros(x, *shape):
    return np.zeros(x.shape[:-1] + shape)


@dataclass(frozen=True, eq=False)
class VectorFieldSystem:
    name: str
    e: int
    d: int
    sigma: Callable[[Array], Array]
    dsigma: Callable[[Array], Array]
    drift: Callable[[Array], Array] | None = None
    ddrift: Callable[[Array], Array] | None = None
    d2sigma: Callable[[Array], Array] | None = None
    d2drift: Callable[[Array], Array] | None = None
    smoothness: str = "C_b^inf"
    # sigma does not depend on x; lets the step-2 scheme skip the level-2 term
    constant_sigma: bool = False
    # start/target used by the CLI when the config leaves them out
    default_a: tuple = ()
    default_b: tuple = ()
    description: str = ""
    validation: dict = field(default_factory=dict, compare=False)

    @property
    def has_drift(self) -> bool:
        return self.drift is not None

    @property
    def has_second_derivatives(self) -> bool:
        return self.d2sigma is not None and (self.drift is None or self.d2drift is not None)

    def b(self, x):
        x = np.asarray(x, dtype=float)
        return self.drift(x) if self.drift is not None else _zeros(x, self.e)

    def db(self, x):
        x = np.asarray(x, dtype=float)
        return self.ddrift(x) if self.ddrift is not None else _zeros(x, self.e, self.e)

    def d2b(self, x):
        x = np.asarray(x, dtype=float)
        if self.drift is None:
            return _zeros(x, self.e, self.e, self.e)
        if self.d2drift is None:
            raise VectorFieldError(f"system {self.name!r} has no second drift derivative")
        return self.d2drift(x)

    def d2s(self, x):
        if self.d2sigma is None:
            raise VectorFieldError(f"system {self.name!r} has no second derivatives")
        return self.d2sigma(np.asarray(x, dtype=float))

    def field(self, i: int) -> Callable[[Array], Array]:
        """``V_i`` as a function of ``x``; ``i = 0`` is the drift."""
        if i == 0:
            return self.b
        return lambda x: self.sigma(np.asarray(x, dtype=float))[..., i - 1]

    def field_gradient(self, i: int) -> Callable[[Array], Array]:
        """Jacobian ``[a, c] = d_c V_i^a``."""
        if i == 0:
            return self.db
        return lambda x: self.dsigma(np.asarray(x, dtype=float))[..., i - 1, :]


def _central_fd(f, x, h):
    """Derivative of ``f`` at the points ``x`` (n, e); new axis appended last."""
    e = x.shape[-1]
    cols = []
    for c in range(e):
        step = np.zeros(e)
        step[c] = h
        cols.append((f(x + step) - f(x - step)) / (2 * h))
    return np.stack(cols, axis=-1)


def validate(vf: VectorFieldSystem, n_points: int = 20, rtol: float = 1e-5, seed: int = 0) -> dict:
    """Compare supplied derivatives with central differences on a Latin hypercube in ``[-2, 2]^e``.

    Returns the worst relative errors; raises :class:`VectorFieldError` past ``rtol``.
    """
    pts = qmc.scale(qmc.LatinHypercube(d=vf.e, seed=seed).random(n_points), -2.0, 2.0)
    h = 1e-5
    checks = [("dsigma", vf.sigma, vf.dsigma)]
    if vf.drift is not None:
        if vf.ddrift is None:
            raise VectorFieldError(f"system {vf.name!r}: drift given without its gradient")
        checks.append(("ddrift", vf.drift, vf.ddrift))
    if vf.d2sigma is not None:
        checks.append(("d2sigma", vf.dsigma, vf.d2sigma))
    if vf.drift is not None and vf.d2drift is not None:
        checks.append(("d2drift", vf.ddrift, vf.d2drift))
    report = {}
    if vf.constant_sigma and np.any(vf.dsigma(pts) != 0):
        raise VectorFieldError(f"system {vf.name!r} is flagged constant_sigma but dsigma is nonzero")
    for name, f, df in checks:
        fd = _central_fd(f, pts, h)
        ex = df(pts)
        if fd.shape != ex.shape:
            raise VectorFieldError(f"system {vf.name!r}: {name} has shape {ex.shape}, expected {fd.shape}")
        err = np.abs(fd - ex).reshape(n_points, -1).max(axis=1)
        scale = np.maximum(np.abs(ex).reshape(n_points, -1).max(axis=1), 1.0)
        worst = float(np.max(err / scale))
        report[name] = worst
        if worst > rtol:
            raise VectorFieldError(f"system {vf.name!r}: supplied {name} disagrees with finite differences (rel {worst:.2e})")
    return report


# -- built-in systems ------------------------------------------------------


def _const_sigma(S):
    S = np.asarray(S, dtype=float)
    e, d = S.shape
    return (
        lambda x: np.broadcast_to(S, x.shape[:-1] + (e, d)).copy(),
        lambda x: _zeros(x, e, d, e),
        lambda x: _zeros(x, e, d, e, e),
    )


def _brownian():
    s, ds, d2s = _const_sigma([[1.0]])
    return VectorFieldSystem("brownian", 1, 1, s, ds, d2sigma=d2s, constant_sigma=True, default_a=(0.0,), default_b=(0.0,),
                             description="X = a + w")


def _additive():
    s, ds, d2s = _const_sigma(np.eye(2))
    return VectorFieldSystem("additive", 2, 2, s, ds, d2sigma=d2s, constant_sigma=True, default_a=(0.0, 0.0), default_b=(0.0, 0.0),
                             description="X = a + w in R^2")


def _geometric(name="geometric", a=1.0, b=1.0):
    def sigma(x):
        return x[..., :, None].copy()

    def dsigma(x):
        return np.ones(x.shape[:-1] + (1, 1, 1))

    return VectorFieldSystem(
        name, 1, 1, sigma, dsigma, d2sigma=lambda x: _zeros(x, 1, 1, 1, 1),
        smoothness="C^inf, linear growth", default_a=(a,), default_b=(b,),
        description="dX = X o dw, X_t = a exp(w_t)",
    )


def _kolmogorov():
    def drift(x):
        out = _zeros(x, 2)
        out[..., 1] = x[..., 0]
        return out

    def ddrift(x):
        out = _zeros(x, 2, 2)
        out[..., 1, 0] = 1.0
        return out

    s, ds, d2s = _const_sigma([[1.0], [0.0]])
    return VectorFieldSystem(
        "kolmogorov", 2, 1, s, ds, drift=drift, ddrift=ddrift, d2sigma=d2s, constant_sigma=True,
        d2drift=lambda x: _zeros(x, 2, 2, 2), smoothness="C^inf, linear growth",
        default_a=(0.0, 0.0), default_b=(0.0, 0.0),
        description="dX1 = dw, dX2 = X1 dt",
    )


def _heisenberg():
    def sigma(x):
        out = _zeros(x, 3, 2)
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        out[..., 2, 0] = -0.5 * x[..., 1]
        out[..., 2, 1] = 0.5 * x[..., 0]
        return out

    def dsigma(x):
        out = _zeros(x, 3, 2, 3)
        out[..., 2, 0, 1] = -0.5
        out[..., 2, 1, 0] = 0.5
        return out

    return VectorFieldSystem(
        "heisenberg", 3, 2, sigma, dsigma, d2sigma=lambda x: _zeros(x, 3, 2, 3, 3),
        smoothness="C^inf, linear growth", default_a=(0.0, 0.0, 0.0), default_b=(0.0, 0.0, 0.0),
        description="V1 = (1, 0, -x2/2), V2 = (0, 1, x1/2)",
    )


def _smooth():
    # bounded trigonometric fields with bounded derivatives of all orders
    def sigma(x):
        x1, x2 = x[..., 0], x[..., 1]
        out = _zeros(x, 2, 2)
        out[..., 0, 0] = 1.0 + 0.3 * np.sin(x2)
        out[..., 1, 0] = 0.2 * np.cos(x1)
        out[..., 0, 1] = 0.1 * np.sin(x1 + x2)
        out[..., 1, 1] = 1.0 + 0.3 * np.cos(x1)
        return out

    def dsigma(x):
        x1, x2 = x[..., 0], x[..., 1]
        out = _zeros(x, 2, 2, 2)
        out[..., 0, 0, 1] = 0.3 * np.cos(x2)
        out[..., 1, 0, 0] = -0.2 * np.sin(x1)
        c = 0.1 * np.cos(x1 + x2)
        out[..., 0, 1, 0] = c
        out[..., 0, 1, 1] = c
        out[..., 1, 1, 0] = -0.3 * np.sin(x1)
        return out

    def d2sigma(x):
        x1, x2 = x[..., 0], x[..., 1]
        out = _zeros(x, 2, 2, 2, 2)
        out[..., 0, 0, 1, 1] = -0.3 * np.sin(x2)
        out[..., 1, 0, 0, 0] = -0.2 * np.cos(x1)
        s = -0.1 * np.sin(x1 + x2)
        out[..., 0, 1, :, :] = s[..., None, None]
        out[..., 1, 1, 0, 0] = -0.3 * np.cos(x1)
        return out

    def drift(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([0.5 * np.sin(x2), -0.5 * np.sin(x1)], axis=-1)

    def ddrift(x):
        x1, x2 = x[..., 0], x[..., 1]
        out = _zeros(x, 2, 2)
        out[..., 0, 1] = 0.5 * np.cos(x2)
        out[..., 1, 0] = -0.5 * np.cos(x1)
        return out

    def d2drift(x):
        x1, x2 = x[..., 0], x[..., 1]
        out = _zeros(x, 2, 2, 2)
        out[..., 0, 1, 1] = -0.5 * np.sin(x2)
        out[..., 1, 0, 0] = 0.5 * np.sin(x1)
        return out

    return VectorFieldSystem(
        "smooth", 2, 2, sigma, dsigma, drift=drift, ddrift=ddrift, d2sigma=d2sigma, d2drift=d2drift,
        default_a=(0.2, -0.1), default_b=(0.5, 0.3),
        description="bounded trigonometric fields, elliptic",
    )


_REGISTRY: dict[str, VectorFieldSystem] = {}


def register(vf: VectorFieldSystem, check: bool = True) -> VectorFieldSystem:
    if check:
        vf.validation.update(validate(vf))
    _REGISTRY[vf.name] = vf
    return vf


def get_system(name: str) -> VectorFieldSystem:
    if not _REGISTRY:
        _register_builtins()
    try:
        return _REGISTRY[name]
    except KeyError:
        raise VectorFieldError(f"unknown system {name!r}; known: {', '.join(sorted(_REGISTRY))}") from None


def system_names() -> list[str]:
    if not _REGISTRY:
        _register_builtins()
    return sorted(_REGISTRY)


def _register_builtins():
    for vf in (
        _brownian(),
        _additive(),
        _geometric(),
        _geometric("degenerate", a=0.0, b=1.0),
        _kolmogorov(),
        _heisenberg(),
        _smooth(),
    ):
        register(vf)
