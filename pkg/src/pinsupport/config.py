"""Flat ``key = value`` experiment configs with validation and a canonical hash."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .pathspace import BesovParameterError, BesovParams
from .vectorfields import VectorFieldError, get_system


def _floats(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _rows(text: str) -> tuple:
    """``"0,1; 1,0"`` -> ((0, 1), (1, 0)); empty means identity."""
    text = text.strip()
    if not text:
        return ()
    return tuple(_floats(r) for r in text.split(";"))


def _fmt(v) -> str:
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(_fmt(r) for r in v)
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    system: str = "brownian"
    a: tuple = ()  # empty: the system default
    b: tuple = ()
    proj: tuple = ()  # projection rows; empty: identity
    h: tuple = ()  # constant control velocity, h(t) = h t; empty: zero
    K: int = 10
    N: int = 8
    alpha: float = 0.45
    m: int = 6
    eps: float = 0.05
    bandwidth: float = 0.05
    delta: float = 0.2
    eta: float = 0.5
    tau: float = 1e-6
    rho: float = 1e3
    n_samples: int = 100_000
    n_bridge: int = 1000
    n_support: int = 50
    n_chain: int = 200_000
    n_kl: int = 100
    levels: tuple = (2.0, 4.0, 6.0)
    times: tuple = (0.25, 0.5, 0.75)
    depth: int = 2
    seed: int = 42

    _INTS = ("K", "N", "m", "n_samples", "n_bridge", "n_support", "n_chain", "n_kl", "depth", "seed")
    _FLOATS = ("alpha", "eps", "bandwidth", "delta", "eta", "tau", "rho")
    _VECS = ("a", "b", "h", "levels", "times")

    @classmethod
    def from_text(cls, text: str) -> ExperimentConfig:
        kw = {}
        known = {f.name for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in kw:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            kw[key] = cls._parse(key, val)
        return cls(**kw).validated()

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {str(p)!r} not found")
        return cls.from_text(p.read_text())

    @classmethod
    def _parse(cls, key, val):
        try:
            if key in cls._INTS:
                return int(val)
            if key in cls._FLOATS:
                return float(val)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {val!r}") from None
        if key in cls._VECS:
            return _floats(val)
        if key == "proj":
            return _rows(val)
        return val

    def with_overrides(self, **kw) -> ExperimentConfig:
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw).validated() if kw else self

    # -- validation -------------------------------------------------------

    def validated(self) -> ExperimentConfig:
        try:
            vf = get_system(self.system)
        except VectorFieldError as exc:
            raise ConfigError(str(exc)) from None
        try:
            BesovParams(self.alpha, self.m)
        except BesovParameterError as exc:
            raise ConfigError(str(exc)) from None
        for k in ("n_samples", "n_bridge", "n_support", "n_chain", "n_kl", "K", "N", "depth"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be positive")
        for k in ("eps", "bandwidth", "delta", "eta", "tau", "rho"):
            if not getattr(self, k) > 0:
                raise ConfigError(f"{k} must be positive")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.N > self.K:
            raise ConfigError("N must not exceed K")
        if self.K > 16:
            raise ConfigError("K above 16 is not supported")
        if self.a and len(self.a) != vf.e:
            raise ConfigError(f"a has {len(self.a)} entries, system {vf.name!r} has e = {vf.e}")
        if self.h and len(self.h) != vf.d:
            raise ConfigError(f"h has {len(self.h)} entries, system {vf.name!r} has d = {vf.d}")
        rows = self.projection_rows(vf)
        if rows.shape[1] != vf.e:
            raise ConfigError(f"projection rows have {rows.shape[1]} columns, system has e = {vf.e}")
        if rows.shape[0] > vf.e or np.max(np.abs(rows @ rows.T - np.eye(rows.shape[0]))) > 1e-12:
            raise ConfigError("projection rows must be orthonormal")
        if self.b and len(self.b) != rows.shape[0]:
            raise ConfigError(f"b has {len(self.b)} entries, projected space has dimension {rows.shape[0]}")
        if not self.b and len(vf.default_b) != rows.shape[0]:
            raise ConfigError("b must be given when the projection is not the identity")
        if any(not 0 < t < 1 for t in self.times) or list(self.times) != sorted(set(self.times)):
            raise ConfigError("times must be strictly increasing inside (0, 1)")
        if any(int(n) != n or not 1 <= n <= self.K for n in self.levels):
            raise ConfigError("levels must be integers in [1, K]")
        return self

    # -- resolved values --------------------------------------------------

    @property
    def params(self) -> BesovParams:
        return BesovParams(self.alpha, self.m)

    def vf(self):
        return get_system(self.system)

    def start(self, vf=None) -> np.ndarray:
        vf = vf or self.vf()
        return np.array(self.a if self.a else vf.default_a, dtype=float)

    def target(self, vf=None) -> np.ndarray:
        vf = vf or self.vf()
        return np.array(self.b if self.b else vf.default_b, dtype=float)

    def projection_rows(self, vf=None) -> np.ndarray:
        vf = vf or self.vf()
        if not self.proj:
            return np.eye(vf.e)
        rows = self.proj
        if len({len(r) for r in rows}) != 1:
            raise ConfigError("projection rows must have equal length")
        return np.array(rows, dtype=float)

    def velocity(self, vf=None) -> np.ndarray:
        vf = vf or self.vf()
        return np.array(self.h if self.h else np.zeros(vf.d), dtype=float)

    # -- canonical form ---------------------------------------------------

    def canonical_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = [list(r) for r in v] if f.name == "proj" else (list(v) if isinstance(v, tuple) else v)
        return out
