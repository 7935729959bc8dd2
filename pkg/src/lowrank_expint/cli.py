"""Benchmark command line: configure a problem + stepper, run experiment
sweeps, and write CSV rows (plus a JSON sidecar with the resolved config).

Subcommands
    convergence   error at final time for each step size h, plus an order row
    mesh          error at final time for each grid size n at fixed h
    krylov-study  reduced-solve error vs Krylov dimension k per variant,
                  with a-priori bound rows for reference
    adaptive      rank/error time series per truncation tolerance
    list-presets  show the shipped experiment presets

Resolution order for settings: built-in defaults < named preset (--preset)
< config file (--config, ``key = value`` lines) < explicit flags.  Exit code
0 on success, 2 for configuration errors, 1 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dlra import rel_error, tangent_project
from .errors import (
    ConfigError,
    DimensionMismatchError,
    IntegrationError,
    ShiftedSolveError,
    SizeCapExceededError,
    SpectrumIterationError,
    SylvesterSingularError,
)
from .integrators import StepConfig, integrate, observed_order, reference_solve
from .krylov import (
    KrylovConfig,
    apriori_bound_order1,
    build_basis,
    reduce_rhs,
    solve_reduced_order1,
)
from .linalg import lowrank_from_factors, svd_truncate_rank
from .problems import Problem, make_allen_cahn, make_heat_lyapunov, make_riccati

CSV_HEADER = "experiment,method,n,rank,tol,h,variant,k,c2,seed,error_rel,order,runtime_s"

_NUMERICAL_ERRORS = (
    IntegrationError,
    ShiftedSolveError,
    SylvesterSingularError,
    SpectrumIterationError,
    SizeCapExceededError,
    DimensionMismatchError,
    np.linalg.LinAlgError,
)

PROBLEM_NAMES = (
    "lyapunov-const",
    "lyapunov-timedep",
    "lyapunov-five-phase",
    "riccati",
    "allen-cahn",
)

PRESETS: dict[str, dict] = {
    "lyapunov-const": {
        "problem": "lyapunov-const",
        "method": "projected_exp_euler",
        "n": [128],
        "rank": 10,
        "h": [1e-2, 1e-3, 1e-4],
        "krylov": "extended",
        "k": 2,
        "seed": 1234,
    },
    "lyapunov-timedep": {
        "problem": "lyapunov-timedep",
        "method": "projected_exp_euler",
        "n": [32, 64, 128],
        "rank": 10,
        "h": [1e-3],
        "krylov": "extended",
        "k": 1,
        "seed": 1234,
    },
    "riccati": {
        "problem": "riccati",
        "method": "projected_exp_euler",
        "n": [200],
        "rank": 20,
        "h": [2e-3, 1e-3, 5e-4, 2.5e-4],
        "krylov": "extended",
        "k": 1,
        "seed": 1234,
    },
    "allen-cahn": {
        "problem": "allen-cahn",
        "method": "projected_exp_euler",
        "n": [64],
        "rank": 2,
        "h": [0.05],
        "krylov": "polynomial",
        "k": 5,
        "seed": 1234,
    },
    "adaptive-five-phase": {
        "problem": "lyapunov-five-phase",
        "method": "projected_exp_runge",
        "n": [64],
        "tol": [1e-4, 1e-6, 1e-8],
        "r_max": 40,
        "h": [1e-3],
        "krylov": "extended",
        "k": 1,
        "seed": 1234,
    },
}


# ------------------------------------------------------------------- records


@dataclass
class RunRecord:
    """One CSV row; unset fields serialize as empty strings."""

    experiment: str
    method: str = ""
    n: int | None = None
    rank: int | None = None
    tol: float | None = None
    h: float | None = None
    variant: str = ""
    k: int | None = None
    c2: float | None = None
    seed: int | None = None
    error_rel: float | None = None
    order: float | None = None
    runtime_s: float | None = None

    def __post_init__(self):
        for name in ("tol", "h", "c2", "error_rel", "order", "runtime_s"):
            val = getattr(self, name)
            if val is not None and not math.isfinite(val):
                raise ValueError(f"RunRecord.{name} must be finite, got {val}")
        if self.error_rel is not None and self.error_rel < 0:
            raise ValueError("RunRecord.error_rel must be nonnegative")

    def to_line(self) -> str:
        return ",".join(_fmt(getattr(self, f)) for f in CSV_HEADER.split(","))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_rows(path: Path, rows: list[RunRecord]) -> None:
    """Append rows, emitting the header only when the file is new/empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    need_header = not path.exists() or path.stat().st_size == 0
    with open(path, "a", encoding="utf-8") as fh:
        if need_header:
            fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.to_line() + "\n")


def _write_meta(out: Path, payload: dict) -> None:
    meta_path = Path(out).with_suffix(".meta.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# ------------------------------------------------------------- configuration


def _parse_config_file(path: str) -> dict:
    """Line-oriented ``key = value`` file; '#' starts a comment."""
    raw = Path(path).read_text(encoding="utf-8")
    out: dict = {}
    for lineno, line in enumerate(raw.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip().replace("-", "_")] = val.strip()
    return out


_LIST_KEYS = {"h": float, "n": int, "tol": float}
_SCALAR_KEYS = {
    "rank": int, "r_max": int, "k": int, "k_max": int, "seed": int,
    "jobs": int, "c2": float, "t_eval": float, "eps": float,
    "ref_tol": float,
}
_STR_KEYS = ("problem", "method", "krylov", "boundary", "out", "poles")


def _coerce_config_values(cfg: dict) -> dict:
    out = dict(cfg)
    for key, typ in _LIST_KEYS.items():
        if key in out and isinstance(out[key], str):
            parts = out[key].replace(",", " ").split()
            out[key] = [typ(p) for p in parts]
    for key, typ in _SCALAR_KEYS.items():
        if key in out and isinstance(out[key], str):
            out[key] = typ(out[key])
    return out


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < preset < config file < explicit flags."""
    cfg = dict(defaults)
    if getattr(args, "preset", None):
        preset = PRESETS.get(args.preset)
        if preset is None:
            raise ConfigError(
                f"unknown preset {args.preset!r}; available: {', '.join(sorted(PRESETS))}"
            )
        cfg.update(preset)
    if getattr(args, "config", None):
        try:
            cfg.update(_coerce_config_values(_parse_config_file(args.config)))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
    for key, val in vars(args).items():
        if key in ("command", "preset", "config") or val is None:
            continue
        cfg[key] = val
    return cfg


def _parse_poles(spec) -> tuple | None:
    if spec is None or spec == "":
        return None
    if isinstance(spec, tuple):
        return spec
    try:
        return tuple(float(p) for p in str(spec).replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"cannot parse poles {spec!r}") from exc


def build_problem(cfg: dict, n: int) -> Problem:
    name = cfg.get("problem")
    seed = int(cfg.get("seed", 1234))
    if name == "lyapunov-const":
        return make_heat_lyapunov(n, source_spec="constant", seed=seed)
    if name == "lyapunov-timedep":
        return make_heat_lyapunov(n, source_spec="time_dependent", seed=seed)
    if name == "lyapunov-five-phase":
        return make_heat_lyapunov(n, source_spec="five_phase", seed=seed)
    if name == "riccati":
        return make_riccati(n, seed=seed)
    if name == "allen-cahn":
        return make_allen_cahn(
            n, eps=float(cfg.get("eps", 0.01)),
            boundary=cfg.get("boundary", "periodic"), seed=seed,
        )
    raise ConfigError(
        f"unknown problem {name!r}; available: {', '.join(PROBLEM_NAMES)}"
    )


def _krylov_config(cfg: dict) -> KrylovConfig:
    return KrylovConfig(
        variant=cfg.get("krylov", "extended"),
        iterations=int(cfg.get("k", 1)),
        poles=_parse_poles(cfg.get("poles")),
    )


def _step_config(cfg: dict) -> StepConfig:
    kwargs = dict(
        method=cfg.get("method", "projected_exp_euler"),
        krylov=_krylov_config(cfg),
        c2=float(cfg.get("c2", 1.0)),
    )
    if cfg.get("tol") is not None and cfg.get("rank") is not None:
        raise ConfigError("set either --rank or --tol, not both")
    if cfg.get("tol") is not None:
        tol = cfg["tol"]
        kwargs["tol"] = float(tol[0] if isinstance(tol, (list, tuple)) else tol)
        kwargs["r_max"] = int(cfg.get("r_max", 40))
    else:
        if cfg.get("rank") is None:
            raise ConfigError("a truncation rank (--rank) or tolerance (--tol) is required")
        kwargs["rank"] = int(cfg["rank"])
    return StepConfig(**kwargs)


def _make_grid(t0: float, t_final: float, h: float) -> np.ndarray:
    if h <= 0:
        raise ConfigError(f"step size must be positive, got {h}")
    span = t_final - t0
    steps = max(1, round(span / h))
    if abs(steps * h - span) > 1e-9 * max(1.0, abs(span)):
        raise ConfigError(f"step size {h} does not divide the horizon {span}")
    return t0 + span * np.arange(steps + 1) / steps


# ------------------------------------------------------------------ sweeps


def _integration_cell(payload: dict) -> dict:
    """One (problem size, step size) run; returns row fields. Picklable."""
    cfg = payload["cfg"]
    n = payload["n"]
    h = payload["h"]
    problem = build_problem(cfg, n)
    step_cfg = _step_config(cfg)
    grid = _make_grid(problem.t0, problem.t_final, h)
    start = time.perf_counter()
    traj = integrate(problem, problem.initial_value, grid, step_cfg)
    runtime = time.perf_counter() - start
    ref = reference_solve(
        problem, problem.initial_value.todense(),
        np.array([problem.t0, problem.t_final]),
        tol=float(cfg.get("ref_tol", 1e-8)),
    )[-1]
    err = rel_error(traj.final(), ref)
    return {"n": n, "h": h, "error_rel": err, "runtime_s": runtime}


def _run_cells(payloads: list[dict], jobs: int) -> list[dict]:
    if jobs <= 1 or len(payloads) <= 1:
        return [_integration_cell(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_integration_cell, payloads))


def _base_record_fields(cfg: dict, step_cfg: StepConfig) -> dict:
    return {
        "method": step_cfg.method,
        "rank": step_cfg.rank,
        "tol": step_cfg.tol,
        "variant": step_cfg.krylov.variant,
        "k": step_cfg.krylov.iterations,
        "c2": step_cfg.c2,
        "seed": int(cfg.get("seed", 1234)),
    }


def cmd_convergence(cfg: dict) -> int:
    hs = cfg.get("h") or []
    ns = cfg.get("n") or []
    if not hs:
        raise ConfigError("convergence needs at least one --h")
    if len(ns) != 1:
        raise ConfigError("convergence runs at a single --n")
    step_cfg = _step_config(cfg)
    base = _base_record_fields(cfg, step_cfg)
    payloads = [{"cfg": cfg, "n": int(ns[0]), "h": float(h)} for h in hs]
    results = _run_cells(payloads, int(cfg.get("jobs", 1)))

    rows = [
        RunRecord(experiment=cfg["problem"], n=res["n"], h=res["h"],
                  error_rel=res["error_rel"], runtime_s=res["runtime_s"], **base)
        for res in results
    ]
    order = None
    if len(results) >= 3:
        try:
            order = observed_order([r["h"] for r in results],
                                   [r["error_rel"] for r in results])
            rows.append(RunRecord(
                experiment=cfg["problem"], n=int(ns[0]), order=order,
                runtime_s=sum(r["runtime_s"] for r in results), **base,
            ))
        except ValueError as exc:
            print(f"note: no order row ({exc})", file=sys.stderr)
    out = Path(cfg.get("out", "results.csv"))
    write_rows(out, rows)
    _write_meta(out, {"subcommand": "convergence", "resolved": _public_cfg(cfg),
                      "observed_order": order})
    return 0


def cmd_mesh(cfg: dict) -> int:
    hs = cfg.get("h") or []
    ns = cfg.get("n") or []
    if len(hs) != 1:
        raise ConfigError("mesh runs at a single --h")
    if not ns:
        raise ConfigError("mesh needs at least one --n")
    step_cfg = _step_config(cfg)
    base = _base_record_fields(cfg, step_cfg)
    payloads = [{"cfg": cfg, "n": int(n), "h": float(hs[0])} for n in ns]
    results = _run_cells(payloads, int(cfg.get("jobs", 1)))
    rows = [
        RunRecord(experiment=cfg["problem"], n=res["n"], h=res["h"],
                  error_rel=res["error_rel"], runtime_s=res["runtime_s"], **base)
        for res in results
    ]
    out = Path(cfg.get("out", "results.csv"))
    write_rows(out, rows)
    _write_meta(out, {"subcommand": "mesh", "resolved": _public_cfg(cfg)})
    return 0


def cmd_krylov_study(cfg: dict) -> int:
    ns = cfg.get("n") or []
    if len(ns) != 1:
        raise ConfigError("krylov-study runs at a single --n")
    n = int(ns[0])
    t_eval = float(cfg.get("t_eval", 0.01))
    k_max = int(cfg.get("k_max", 20))
    if t_eval <= 0:
        raise ConfigError("t-eval must be positive")
    if k_max < 1:
        raise ConfigError("k-max must be >= 1")
    rank = int(cfg.get("rank") or 1)
    # sweep all variants unless one was requested on the command line; a
    # preset's krylov entry configures the steppers, not this comparison
    explicit = cfg.get("_explicit_krylov")
    variants = [explicit] if explicit else ["polynomial", "extended", "rational"]
    poles = _parse_poles(cfg.get("poles"))
    seed = int(cfg.get("seed", 1234))

    problem = build_problem(cfg, n)
    if max(problem.shape) > 512:
        raise SizeCapExceededError("krylov-study needs the dense oracle (n <= 512)")
    y0 = svd_truncate_rank(problem.initial_value, rank)
    pg0 = tangent_project(y0, problem.g(y0, problem.t0))

    a_full = problem.a.matrix
    b_full = problem.b.matrix
    a_full = a_full.toarray() if hasattr(a_full, "toarray") else np.asarray(a_full)
    b_full = b_full.toarray() if hasattr(b_full, "toarray") else np.asarray(b_full)
    exact = solve_reduced_order1(a_full, b_full, y0.todense(), pg0.todense(), t_eval).s_h
    exact_norm = np.linalg.norm(exact)

    rows = []
    for variant in variants:
        for k in range(1, k_max + 1):
            kcfg = KrylovConfig(variant=variant, iterations=k, poles=poles)
            start = time.perf_counter()
            left = build_basis(problem.a, pg0.basis_left, kcfg)
            right = build_basis(problem.b.transposed(), pg0.basis_right, kcfg)
            sol = solve_reduced_order1(
                left.reduced_op, right.reduced_op.T,
                reduce_rhs(left, right, y0), reduce_rhs(left, right, pg0), t_eval,
            )
            runtime = time.perf_counter() - start
            lifted = lowrank_from_factors(left.q, sol.s_h, right.q)
            err = float(np.linalg.norm(lifted.todense() - exact) / exact_norm)
            rows.append(RunRecord(
                experiment=cfg["problem"], method="reduced_order1", n=n,
                rank=rank, h=t_eval, variant=variant, k=k, seed=seed,
                error_rel=err, runtime_s=runtime,
            ))

    ell = problem.a.ell + problem.b.ell
    try:
        for k in range(1, k_max + 1):
            bound = apriori_bound_order1(k, ell, t_eval, y0.norm(), pg0.norm())
            rows.append(RunRecord(
                experiment=cfg["problem"], method="bound_order1", n=n, rank=rank,
                h=t_eval, k=k, seed=seed, error_rel=float(bound),
            ))
    except ValueError as exc:
        print(f"note: bound rows skipped ({exc})", file=sys.stderr)

    out = Path(cfg.get("out", "results.csv"))
    write_rows(out, rows)
    _write_meta(out, {"subcommand": "krylov-study", "resolved": _public_cfg(cfg),
                      "t_eval": t_eval, "k_max": k_max})
    return 0


def cmd_adaptive(cfg: dict) -> int:
    ns = cfg.get("n") or []
    hs = cfg.get("h") or []
    tols = cfg.get("tol") or []
    if len(ns) != 1 or len(hs) != 1:
        raise ConfigError("adaptive runs at a single --n and --h")
    if not tols:
        raise ConfigError("adaptive needs at least one --tol")
    n, h = int(ns[0]), float(hs[0])
    r_max = int(cfg.get("r_max", 40))
    seed = int(cfg.get("seed", 1234))

    problem = build_problem(cfg, n)
    grid = _make_grid(problem.t0, problem.t_final, h)
    refs = reference_solve(problem, problem.initial_value.todense(), grid,
                           tol=float(cfg.get("ref_tol", 1e-8)))
    ref_norms = [np.linalg.norm(r) for r in refs]

    out = Path(cfg.get("out", "results.csv"))
    series_path = out.with_name(out.stem + "_series.csv")
    rows = []
    series_lines = []
    summaries = {}
    for tol in tols:
        run_cfg = dict(cfg)
        run_cfg["tol"] = float(tol)
        run_cfg.pop("rank", None)
        step_cfg = _step_config(run_cfg)
        start = time.perf_counter()
        traj = integrate(problem, problem.initial_value, grid, step_cfg)
        runtime = time.perf_counter() - start
        errors = np.array([
            np.linalg.norm(traj.states[i].todense() - refs[i]) / max(ref_norms[i], 1e-300)
            for i in range(grid.size)
        ])
        ranks = traj.ranks()
        keep = np.unique(np.linspace(0, grid.size - 1, min(grid.size, 1000)).round().astype(int))
        for i in keep:
            series_lines.append(
                f"{cfg['problem']},{_fmt(float(tol))},{_fmt(float(grid[i]))},"
                f"{int(ranks[i])},{_fmt(float(errors[i]))}"
            )
        rows.append(RunRecord(
            experiment=cfg["problem"], method=step_cfg.method, n=n,
            tol=float(tol), h=h, variant=step_cfg.krylov.variant,
            k=step_cfg.krylov.iterations, c2=step_cfg.c2, seed=seed,
            error_rel=float(errors[-1]), runtime_s=runtime,
        ))
        summaries[_fmt(float(tol))] = {
            "rank_min": int(ranks.min()),
            "rank_max": int(ranks.max()),
            "rank_mean": float(ranks.mean()),
        }

    write_rows(out, rows)
    series_new = not series_path.exists() or series_path.stat().st_size == 0
    with open(series_path, "a", encoding="utf-8") as fh:
        if series_new:
            fh.write("experiment,tol,t,rank,error_rel\n")
        fh.write("\n".join(series_lines) + "\n")
    _write_meta(out, {"subcommand": "adaptive", "resolved": _public_cfg(cfg),
                      "r_max": r_max, "rank_stats": summaries,
                      "series": str(series_path)})
    return 0


def cmd_list_presets() -> int:
    for name in sorted(PRESETS):
        cfg = PRESETS[name]
        keys = ", ".join(f"{k}={cfg[k]}" for k in sorted(cfg))
        print(f"{name}: {keys}")
    return 0


def _public_cfg(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


# --------------------------------------------------------------------- main


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="named experiment preset (see list-presets)")
    p.add_argument("--config", help="key = value config file (lower precedence than flags)")
    p.add_argument("--problem", help="|".join(PROBLEM_NAMES))
    p.add_argument("--method", help="stepper name")
    p.add_argument("--n", action="append", type=int, help="grid size (repeatable)")
    p.add_argument("--rank", type=int, help="fixed truncation rank")
    p.add_argument("--tol", action="append", type=float,
                   help="truncation tolerance (repeatable for adaptive)")
    p.add_argument("--r-max", dest="r_max", type=int, help="rank cap in adaptive mode")
    p.add_argument("--h", action="append", type=float, help="step size (repeatable)")
    p.add_argument("--krylov", choices=["polynomial", "extended", "rational"])
    p.add_argument("--k", type=int, help="Krylov iterations per step")
    p.add_argument("--poles", help="comma-separated rational-Krylov poles")
    p.add_argument("--c2", type=float, help="internal stage fraction in (0,1]")
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float, help="Allen-Cahn diffusion coefficient")
    p.add_argument("--boundary", choices=["periodic", "dirichlet"])
    p.add_argument("--ref-tol", dest="ref_tol", type=float,
                   help="reference-solver tolerance (default 1e-8)")
    p.add_argument("--out", help="CSV output path (default results.csv)")
    p.add_argument("--jobs", type=int, help="parallel sweep workers (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lowrank-expint",
        description="Benchmarks for projected exponential low-rank integrators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("convergence", "mesh", "adaptive"):
        _add_common(sub.add_parser(name))
    ks = sub.add_parser("krylov-study")
    _add_common(ks)
    ks.add_argument("--t-eval", dest="t_eval", type=float,
                    help="evaluation time for the reduced solve (default 0.01)")
    ks.add_argument("--k-max", dest="k_max", type=int,
                    help="largest Krylov iteration count (default 20)")
    sub.add_parser("list-presets")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-presets":
        return cmd_list_presets()
    try:
        cfg = _resolve(args, defaults={"seed": 1234, "out": "results.csv", "jobs": 1})
        cfg["_explicit_krylov"] = getattr(args, "krylov", None)
        if not cfg.get("problem"):
            raise ConfigError("a --problem or --preset is required")
        if args.command == "convergence":
            return cmd_convergence(cfg)
        if args.command == "mesh":
            return cmd_mesh(cfg)
        if args.command == "krylov-study":
            return cmd_krylov_study(cfg)
        if args.command == "adaptive":
            return cmd_adaptive(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
