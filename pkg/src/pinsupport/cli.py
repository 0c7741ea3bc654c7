"""Experiment runner: ``pinsupport <command> [--config PATH] [--seed U64] [--workers N] [--out DIR]``.

Every command writes a deterministic ``results.json`` (plus CSV data) and a
``run_summary.json`` with the config hash, wall-clock time, an output
manifest and the pass/fail state of the command's assertions.

Exit codes: 0 success, 2 config error, 3 numerical guard tripped,
4 acceptance failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import acceptance
from .config import ExperimentConfig
from .errors import ConfigError, NumericalGuardError
from .malliavin import Projection, gram_deterministic, gram_stochastic, hormander_check, surjectivity_check
from .pathspace import BesovParameterError, CameronMartinPath, GridPath, haar_indices, haar_path, hoelder_seminorm, write_csv
from .pinned import density_estimate, fdd_check, require_positive_density, sample_bridge
from .rde import solve_rde, solve_skeleton, solve_variational
from .roughlift import besov_distance, brownian_sample, dyadic_lift, homogeneous_norm, kl_residual_stats, lift_grid
from .support import AdmissibilityError, admissible_set_probe, support_coverage_test, tube_mass_test
from .vectorfields import VectorFieldError

EXIT_OK, EXIT_CONFIG, EXIT_GUARD, EXIT_ACCEPTANCE = 0, 2, 3, 4
COMMANDS = (
    "lift", "norms", "kl-convergence", "skeleton", "rde", "variational", "gram",
    "hormander", "density", "bridge", "support", "acceptance",
)


@dataclass
class RunSummary:
    command: str
    config_hash: str
    wall_clock_s: float = 0.0
    outputs: list = field(default_factory=list)
    assertions: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK
    message: str = ""

    def to_json(self) -> dict:
        return dict(self.__dict__)


class _Out:
    """Writes output files and records them for the manifest."""

    def __init__(self, root: Path):
        self.root = root
        self.files = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    def json(self, name: str, doc) -> None:
        self.path(name).write_text(_dumps(doc))

    def csv(self, name: str, values, header=None) -> None:
        if isinstance(values, GridPath):
            write_csv(values, self.path(name))
            return
        arr = np.atleast_2d(np.asarray(values, dtype=float))
        lines = [",".join(header)] if header else []
        lines += [",".join(format(v, ".17g") for v in row) for row in arr]
        self.path(name).write_text("\n".join(lines) + "\n")

    def manifest(self) -> list:
        out = []
        for name in sorted(set(self.files)):
            p = self.root / name
            if p.is_file():
                out.append({"file": name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
        return out


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    return v


def _dumps(doc) -> str:
    return json.dumps(_plain(doc), indent=1, sort_keys=True) + "\n"


# -- commands -------------------------------------------------------------------


def _haar_directions(vf, N: int = 1) -> list:
    return [haar_path(idx, vf.d) for idx in haar_indices(N, vf.d)]


def cmd_lift(cfg, vf, out, workers):
    w = brownian_sample(vf.d, cfg.K, cfg.seed)
    rp = lift_grid(w)
    M = 2**cfg.K
    full = rp.level2(0, M)
    x = rp.level1(0, M)
    half = M // 2
    chen = rp.level2(0, half) + rp.level2(half, M) + np.outer(rp.level1(0, half), rp.level1(half, M))
    chen_defect = float(np.max(np.abs(full - chen)))
    shuffle = float(np.max(np.abs(0.5 * (full + full.T) - 0.5 * np.outer(x, x))))
    res = {
        "K": cfg.K, "d": vf.d, "seed": cfg.seed,
        "level1_total": x, "level2_total": full, "levy_area": 0.5 * (full - full.T),
        "chen_defect_at_midpoint": chen_defect, "shuffle_defect": shuffle,
    }
    rp.save(out.path("rough_path.json"))
    out.csv("path.csv", w)
    return res, {"chen": chen_defect <= 1e-12, "shuffle": shuffle <= 1e-12}


def cmd_norms(cfg, vf, out, workers):
    w = brownian_sample(vf.d, cfg.K, cfg.seed)
    rp = lift_grid(w)
    approx = dyadic_lift(w, cfg.N)
    p = cfg.params
    res = {
        "alpha": p.alpha, "m": p.m, "K": cfg.K, "N": cfg.N, "seed": cfg.seed,
        "homogeneous_norm": homogeneous_norm(rp, p),
        "besov_distance_to_dyadic_lift": besov_distance(rp, approx, p),
        "hoelder_exponent": p.hoelder_exponent,
        "hoelder_seminorm": hoelder_seminorm(w, p.hoelder_exponent),
    }
    return res, {"finite": bool(np.isfinite(res["homogeneous_norm"]))}


def cmd_kl(cfg, vf, out, workers):
    levels = [int(n) for n in cfg.levels]
    stats = [kl_residual_stats(n, cfg.K, cfg.n_kl, cfg.params, cfg.seed) for n in levels]
    means = [s["mean"] for s in stats]
    out.csv("kl_means.csv", [[n, s["mean"], s["stderr"]] for n, s in zip(levels, stats)], ["n", "mean", "stderr"])
    return {"stats": stats}, {"decreasing": all(means[i] > means[i + 1] for i in range(len(means) - 1))}


def _control(cfg, vf):
    return CameronMartinPath.linear(cfg.velocity(vf))


def cmd_skeleton(cfg, vf, out, workers):
    x = solve_skeleton(vf, _control(cfg, vf), cfg.start(vf), cfg.K)
    out.csv("skeleton.csv", x)
    return {"K": cfg.K, "h_velocity": cfg.velocity(vf), "endpoint": x.values[-1]}, {"finite": bool(np.all(np.isfinite(x.values)))}


def cmd_rde(cfg, vf, out, workers):
    w = brownian_sample(vf.d, cfg.K, cfg.seed)
    x = solve_rde(vf, lift_grid(w), cfg.start(vf))
    out.csv("driver.csv", w)
    out.csv("solution.csv", x)
    return {"K": cfg.K, "seed": cfg.seed, "endpoint": x.values[-1]}, {"finite": bool(np.all(np.isfinite(x.values)))}


def cmd_variational(cfg, vf, out, workers):
    dirs = _haar_directions(vf, 0)
    pairs = [(p, q) for p in range(len(dirs)) for q in range(p, len(dirs))] if vf.has_second_derivatives else []
    B = solve_variational(vf, _control(cfg, vf), cfg.start(vf), dirs, pairs, cfg.K)
    out.csv("skeleton.csv", B.x)
    for i, g in enumerate(B.xi1):
        out.csv(f"xi1_{i}.csv", g)
    for (p, q), g in B.xi2.items():
        out.csv(f"xi2_{p}_{q}.csv", g)
    res = {
        "K": cfg.K, "directions": "phi^{0,1} e_i",
        "endpoint": B.x.values[-1],
        "xi1_endpoint": [g.values[-1] for g in B.xi1],
        "xi2_endpoint": {f"{p},{q}": g.values[-1] for (p, q), g in B.xi2.items()},
        "smoothness": B.smoothness,
    }
    return res, {"finite": bool(np.all(np.isfinite(B.x.values)))}


def cmd_gram(cfg, vf, out, workers):
    P = Projection(cfg.projection_rows(vf))
    a = cfg.start(vf)
    C = gram_deterministic(vf, _control(cfg, vf), a, P, cfg.N)
    rep = surjectivity_check(C, cfg.tau)
    rp = lift_grid(brownian_sample(vf.d, cfg.K, cfg.seed))
    S = gram_stochastic(vf, rp, a, P)
    res = {
        "deterministic": {"matrix": C.matrix, "lambda_min": C.lambda_min, "N": cfg.N},
        "surjectivity": rep.to_json(),
        "stochastic": {"matrix": S.matrix, "lambda_min": S.lambda_min, "meta": S.meta},
    }
    return res, {"surjective": rep.surjective}


def cmd_hormander(cfg, vf, out, workers):
    P = Projection(cfg.projection_rows(vf))
    reps = [hormander_check(vf, cfg.start(vf), L, P) for L in range(1, min(cfg.depth, 3) + 1)]
    return {"reports": [r.to_json() for r in reps]}, {f"spans_L{r.depth}": r.spans for r in reps}


def cmd_density(cfg, vf, out, workers):
    P = Projection(cfg.projection_rows(vf))
    est = density_estimate(vf, cfg.start(vf), cfg.target(vf), P, cfg.n_samples, cfg.bandwidth, cfg.K, cfg.seed, workers=workers)
    out.json("density.json", est.to_json())
    require_positive_density(est)
    return {"estimate": est.to_json()}, {"positive": est.lower99 > 0}


def _fdd_functions(k, dim):
    fns, labels = [], []
    for j in range(k):
        for c in range(dim):
            fns.append(lambda m, j=j, c=c: m[:, j, c])
            labels.append(f"x[{j}][{c}]")
            fns.append(lambda m, j=j, c=c: m[:, j, c] ** 2)
            labels.append(f"x[{j}][{c}]^2")
    return fns, labels


def cmd_bridge(cfg, vf, out, workers):
    P = Projection(cfg.projection_rows(vf))
    ens = sample_bridge(vf, cfg.start(vf), cfg.target(vf), P, cfg.eps, cfg.n_bridge, cfg.K, cfg.seed, workers)
    ens.save(out.root / "ensemble")
    out.files += ["ensemble/manifest.json"]
    fns, labels = _fdd_functions(len(cfg.times), P.sub_dim)
    rep = fdd_check(ens, cfg.times, fns, vf, n_chain=cfg.n_chain, workers=workers)
    res = {
        "accepted": len(ens), "drawn": ens.n_drawn, "acceptance_rate": ens.acceptance_rate,
        "effective_size": ens.effective_size(), "complete": ens.complete,
        "fdd": dict(rep.to_json(), labels=labels),
    }
    z = np.array(rep.z, dtype=float)
    return res, {"complete": ens.complete, "fdd_z_within_3": bool(np.all(np.abs(z) <= 3))}


def cmd_support(cfg, vf, out, workers):
    P = Projection(cfg.projection_rows(vf))
    a, b = cfg.start(vf), cfg.target(vf)
    ens = sample_bridge(vf, a, b, P, cfg.eps, cfg.n_support, cfg.K, cfg.seed, workers)
    rep = support_coverage_test(vf, a, b, P, ens, cfg.N, cfg.delta, cfg.tau, cfg.seed, cfg.rho)
    rep.write_csv(out.path("residuals.csv"))
    probe = admissible_set_probe(vf, a, b, P, N=min(4, cfg.N), K=cfg.K, seed=cfg.seed, tau=cfg.tau)
    res = {"coverage": rep.to_json(), "probe": probe.to_json()}
    levels = sorted(rep.residuals)
    gain = max(np.array(rep.residuals[levels[-1]]) - np.array(rep.residuals[levels[0]]))
    checks = {"monotone_truncation": gain <= 1e-9}
    if not probe.admissible_set_empty:
        # tube centred on the skeleton of the straight-line fit
        tube = tube_mass_test(vf, a, b, P, probe.control, cfg.eta, ens, cfg.tau, cfg.N)
        res["tube"] = tube.to_json()
        checks["tube_mass_positive"] = tube.tube["positive"]
    out.json("support.json", res)
    return res, checks


def cmd_acceptance(cfg, vf, out, workers, only=None):
    results = acceptance.run_all(cfg.seed, workers, only=only, echo=lambda s: print(s, flush=True))
    board = acceptance.scoreboard(results, cfg.seed)
    out.json("scoreboard.json", board)
    out.csv("timings.csv", [[r.number, r.seconds, r.budget_s] for r in results], ["criterion", "seconds", "budget_s"])
    return board, {f"criterion_{r.number}": r.passed for r in results}


HANDLERS = {
    "lift": cmd_lift, "norms": cmd_norms, "kl-convergence": cmd_kl, "skeleton": cmd_skeleton,
    "rde": cmd_rde, "variational": cmd_variational, "gram": cmd_gram, "hormander": cmd_hormander,
    "density": cmd_density, "bridge": cmd_bridge, "support": cmd_support, "acceptance": cmd_acceptance,
}


def run(command: str, cfg: ExperimentConfig, out_dir, workers: int = 1, only=None) -> RunSummary:
    """Run one command; raises config and guard errors for :func:`main` to map to exit codes."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    out = _Out(Path(out_dir))
    summary = RunSummary(command, cfg.config_hash())
    t0 = time.perf_counter()
    out.path("config.txt").write_text(cfg.canonical_text())
    vf = cfg.vf()
    kw = {"only": only} if command == "acceptance" else {}
    try:
        res, checks = HANDLERS[command](cfg, vf, out, workers, **kw)
        out.json("results.json", {"command": command, "config_hash": summary.config_hash, "config": cfg.to_json(), "results": res})
        summary.assertions = {k: bool(v) for k, v in checks.items()}
        if command == "acceptance" and not all(summary.assertions.values()):
            summary.exit_code = EXIT_ACCEPTANCE
            summary.message = "acceptance failures: " + ", ".join(k for k, v in checks.items() if not v)
    except NumericalGuardError as exc:
        summary.exit_code = EXIT_GUARD
        summary.message = str(exc)
        raise
    finally:
        summary.wall_clock_s = time.perf_counter() - t0
        summary.outputs = out.manifest()
        (out.root / "run_summary.json").write_text(_dumps(summary.to_json()))
    return summary


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
    common.add_argument("--workers", type=int, default=1, metavar="N", help="threads for Monte Carlo; never changes results")
    common.add_argument("--out", metavar="DIR", help="output directory (default runs/<command>)")
    parser = argparse.ArgumentParser(prog="pinsupport", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "acceptance":
            p.add_argument("--only", metavar="LIST", help="comma-separated criterion numbers")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig().validated()
        cfg = cfg.with_overrides(seed=args.seed)
        if args.workers < 1:
            raise ConfigError("--workers must be positive")
        only = None
        if getattr(args, "only", None):
            only = {int(s) for s in args.only.split(",")}
            if not only <= set(range(1, 13)):
                raise ConfigError("--only takes criterion numbers 1..12")
        out_dir = args.out or str(Path("runs") / args.command)
        summary = run(args.command, cfg, out_dir, args.workers, only)
    except (ConfigError, BesovParameterError, VectorFieldError, AdmissibilityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalGuardError as exc:
        print(f"numerical guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    if summary.message:
        print(summary.message, file=sys.stderr)
    print(f"{args.command}: exit {summary.exit_code}, outputs in {out_dir}")
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
