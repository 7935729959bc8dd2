"""Projected exponential steppers, time loop, references, order estimation.

One step of the first-order scheme maps a rank-r state Y0 to

    T( e^{hL} Y0 + h·φ1(hL)·P_{Y0} G(Y0) ),      L: Y ↦ A Y + Y B,

with T the rank (or tolerance) truncation; the two-stage scheme adds an
h·φ2(hL) correction from a half-stage evaluation, and the non-strict variant
blends the two tangent inhomogeneities into a single φ1 solve.  All
φ-function actions go through the block-Krylov reduction machinery, so no
dense n×n matrix is ever formed by the steppers.

Dense reference trajectories (for error plots) use exact closed-form
propagation for the linear benchmarks and adaptive explicit integration for
the nonlinear ones, disk-cached.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from . import _cache
from .dlra import modeling_error, tangent_project
from .errors import ConfigError, IntegrationError, SizeCapExceededError
from .krylov import KrylovConfig, build_basis, reduce_rhs, solve_reduced_order1, solve_reduced_order2
from .linalg import (
    LowRankMatrix,
    lowrank_add,
    lowrank_from_factors,
    svd_truncate_rank,
    svd_truncate_tol,
)
from .problems import Problem

_METHODS = ("projected_exp_euler", "projected_exp_runge", "projected_exp_runge_nonstrict")

REFERENCE_SIZE_GUARD = 512


@dataclass(frozen=True)
class StepConfig:
    """Stepper selection, truncation policy, and Krylov settings.

    Exactly one of ``rank`` (fixed-rank truncation) or ``tol`` (adaptive
    truncation, capped at ``r_max``) must be set.
    """

    method: str = "projected_exp_euler"
    krylov: KrylovConfig = field(default_factory=KrylovConfig)
    rank: int | None = None
    tol: float | None = None
    r_max: int | None = None
    c2: float = 1.0

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if not 0.0 < self.c2 <= 1.0:
            raise ConfigError(f"c2 must be in (0, 1], got {self.c2}")
        if (self.rank is None) == (self.tol is None):
            raise ConfigError("set exactly one of rank= or tol=")
        if self.rank is not None and self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.tol is not None:
            if not 0.0 < self.tol < 1.0:
                raise ConfigError(f"tol must be in (0, 1), got {self.tol}")
            if self.r_max is None or self.r_max < 1:
                raise ConfigError("adaptive truncation needs r_max >= 1")

    def truncate(self, x) -> LowRankMatrix:
        if self.rank is not None:
            return svd_truncate_rank(x, self.rank)
        return svd_truncate_tol(x, self.tol, self.r_max)


@dataclass(frozen=True)
class StepStats:
    rank: int
    krylov_left: int
    krylov_right: int
    wall_time: float
    modeling_error: float


@dataclass(frozen=True)
class Trajectory:
    grid: np.ndarray
    states: list[LowRankMatrix]
    stats: list[StepStats]

    def __post_init__(self):
        if len(self.states) != len(self.grid):
            raise ConfigError("trajectory needs one state per grid point")
        if np.any(np.diff(self.grid) <= 0):
            raise ConfigError("time grid must be strictly increasing")

    def final(self) -> LowRankMatrix:
        return self.states[-1]

    def ranks(self) -> np.ndarray:
        return np.array([s.rank for s in self.states])


# ------------------------------------------------------------------- steppers


def _reduction(problem: Problem, seed_left, seed_right, cfg: StepConfig):
    """Krylov bases for the two factors; the right basis is grown with Bᵀ."""
    left = build_basis(problem.a, seed_left, cfg.krylov)
    right = build_basis(problem.b.transposed(), seed_right, cfg.krylov)
    return left, right


def _lift(left, right, s_h) -> LowRankMatrix:
    return lowrank_from_factors(left.q, s_h, right.q)


def step_projected_euler(problem: Problem, y0: LowRankMatrix, h: float,
                         cfg: StepConfig, t: float | None = None,
                         stats_out: dict | None = None) -> LowRankMatrix:
    """One first-order step (evaluation time t, default the problem start)."""
    t = problem.t0 if t is None else t
    g0 = problem.g(y0, t)
    pg0 = tangent_project(y0, g0)
    y1 = _phi1_update(problem, y0, pg0, h, cfg, stats_out)
    if stats_out is not None:
        stats_out["modeling_error"] = modeling_error(y0, g0)
    return y1


def _phi1_update(problem, y0, tangent_rhs, h, cfg, stats_out=None) -> LowRankMatrix:
    """Truncated e^{hL} y0 + h·φ1(hL)·tangent_rhs through the reduction."""
    left, right = _reduction(problem, tangent_rhs.basis_left, tangent_rhs.basis_right, cfg)
    s0 = reduce_rhs(left, right, y0)
    c_hat = reduce_rhs(left, right, tangent_rhs)
    sol = solve_reduced_order1(left.reduced_op, right.reduced_op.T, s0, c_hat, h)
    if stats_out is not None:
        stats_out["krylov_left"] = left.dimension
        stats_out["krylov_right"] = right.dimension
    return cfg.truncate(_lift(left, right, sol.s_h))


def step_projected_runge(problem: Problem, y0: LowRankMatrix, h: float,
                         cfg: StepConfig, t: float | None = None,
                         stats_out: dict | None = None) -> LowRankMatrix:
    """One two-stage step; the half stage is a projected Euler step of c2·h."""
    t = problem.t0 if t is None else t
    g0 = problem.g(y0, t)
    pg0 = tangent_project(y0, g0)
    y_half = _phi1_update(problem, y0, pg0, cfg.c2 * h, cfg)
    g_half = problem.g(y_half, t + cfg.c2 * h)
    pg_half = tangent_project(y_half, g_half)

    seed_left = np.hstack([pg0.basis_left, pg_half.basis_left])
    seed_right = np.hstack([pg0.basis_right, pg_half.basis_right])
    left, right = _reduction(problem, seed_left, seed_right, cfg)
    s0 = reduce_rhs(left, right, y0)
    c_hat = reduce_rhs(left, right, pg0)
    d_hat = reduce_rhs(left, right, pg_half) - c_hat
    sol = solve_reduced_order2(left.reduced_op, right.reduced_op.T, s0, c_hat, d_hat, h)
    if stats_out is not None:
        stats_out["krylov_left"] = left.dimension
        stats_out["krylov_right"] = right.dimension
        stats_out["modeling_error"] = modeling_error(y0, g0)
    return cfg.truncate(_lift(left, right, sol.s_h))


def step_nonstrict_runge(problem: Problem, y0: LowRankMatrix, h: float,
                         cfg: StepConfig, t: float | None = None,
                         stats_out: dict | None = None) -> LowRankMatrix:
    """Two-stage variant using only φ1: the final solve blends the two
    tangent inhomogeneities with weights (1 − 1/(2c2), 1/(2c2))."""
    t = problem.t0 if t is None else t
    g0 = problem.g(y0, t)
    pg0 = tangent_project(y0, g0)
    y_half = _phi1_update(problem, y0, pg0, cfg.c2 * h, cfg)
    g_half = problem.g(y_half, t + cfg.c2 * h)
    pg_half = tangent_project(y_half, g_half)

    w0 = 1.0 - 1.0 / (2.0 * cfg.c2)
    w1 = 1.0 / (2.0 * cfg.c2)
    seed_left = np.hstack([pg0.basis_left, pg_half.basis_left])
    seed_right = np.hstack([pg0.basis_right, pg_half.basis_right])
    left, right = _reduction(problem, seed_left, seed_right, cfg)
    s0 = reduce_rhs(left, right, y0)
    c_hat = w0 * reduce_rhs(left, right, pg0) + w1 * reduce_rhs(left, right, pg_half)
    sol = solve_reduced_order1(left.reduced_op, right.reduced_op.T, s0, c_hat, h)
    if stats_out is not None:
        stats_out["krylov_left"] = left.dimension
        stats_out["krylov_right"] = right.dimension
        stats_out["modeling_error"] = modeling_error(y0, g0)
    return cfg.truncate(_lift(left, right, sol.s_h))


_STEPPERS = {
    "projected_exp_euler": step_projected_euler,
    "projected_exp_runge": step_projected_runge,
    "projected_exp_runge_nonstrict": step_nonstrict_runge,
}


def integrate(problem: Problem, y0: LowRankMatrix, grid, cfg: StepConfig) -> Trajectory:
    """March the configured stepper over the grid, recording per-step stats.

    The initial value is truncated onto the manifold per ``cfg`` first.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ConfigError("grid must be a strictly increasing 1-D array")
    if abs(grid[0] - problem.t0) > 1e-12:
        raise ConfigError(f"grid must start at t0 = {problem.t0}, got {grid[0]}")
    stepper = _STEPPERS[cfg.method]
    state = cfg.truncate(y0)
    states = [state]
    stats: list[StepStats] = []
    for idx in range(grid.size - 1):
        t, h = grid[idx], grid[idx + 1] - grid[idx]
        scratch: dict = {}
        start = time.perf_counter()
        try:
            state = stepper(problem, state, h, cfg, t=t, stats_out=scratch)
        except Exception as exc:  # noqa: BLE001 - annotate with the step index
            raise IntegrationError(idx, str(exc)) from exc
        wall = time.perf_counter() - start
        states.append(state)
        stats.append(StepStats(
            rank=state.rank,
            krylov_left=scratch.get("krylov_left", 0),
            krylov_right=scratch.get("krylov_right", 0),
            wall_time=wall,
            modeling_error=scratch.get("modeling_error", float("nan")),
        ))
    return Trajectory(grid=grid, states=states, stats=stats)


# ----------------------------------------------------------------- references


def _phi1_entrywise(z: np.ndarray) -> np.ndarray:
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    out = (np.exp(zs) - 1.0) / zs
    return np.where(small, 1.0 + z / 2.0 + z**2 / 6.0, out)


def _phi2_entrywise(z: np.ndarray) -> np.ndarray:
    small = np.abs(z) < 1e-5
    zs = np.where(small, 1.0, z)
    out = (np.exp(zs) - 1.0 - zs) / zs**2
    return np.where(small, 0.5 + z / 6.0 + z**2 / 24.0, out)


class _SymmetricLinearPropagator:
    """Exact propagation of dX/dt = A X + X B + C(t) for symmetric A, B.

    In the joint eigenbasis every entry decouples into a scalar ODE, so each
    interval costs four dense multiplications regardless of its length, and
    constant / exponential / piecewise-linear sources integrate exactly.
    """

    def __init__(self, a_dense: np.ndarray, b_dense: np.ndarray):
        self.nu, self.qa = eigh(a_dense)
        self.mu, self.qb = eigh(b_dense)
        self.lam = self.nu[:, None] + self.mu[None, :]

    def step(self, x: np.ndarray, source, t: float, delta: float) -> np.ndarray:
        xe = self.qa.T @ x @ self.qb
        out = np.exp(delta * self.lam) * xe
        if source is not None:
            if source.kind == "exponential":
                me = self.qa.T @ source.base.todense() @ self.qb
                shifted = (self.lam - source.rate) * delta
                out = out + np.exp(source.rate * (t + delta)) * delta * _phi1_entrywise(shifted) * me
            else:
                c0 = self.qa.T @ source.eval_dense(t) @ self.qb
                c1 = self.qa.T @ source.eval_dense(t + delta) @ self.qb
                slope = (c1 - c0) / delta
                zd = self.lam * delta
                out = out + delta * _phi1_entrywise(zd) * c0 + delta**2 * _phi2_entrywise(zd) * slope
        return self.qa @ out @ self.qb.T


def _linear_reference(problem: Problem, x0: np.ndarray, grid: np.ndarray) -> list[np.ndarray]:
    a = problem.a.matrix
    b = problem.b.matrix
    a = a.toarray() if hasattr(a, "toarray") else np.asarray(a)
    b = b.toarray() if hasattr(b, "toarray") else np.asarray(b)
    if np.linalg.norm(a - a.T) > 1e-10 * np.linalg.norm(a) or np.linalg.norm(
        b - b.T
    ) > 1e-10 * np.linalg.norm(b):
        raise ConfigError("closed-form linear reference expects symmetric factors")
    prop = _SymmetricLinearPropagator(a, b)
    source = problem.source

    # split propagation intervals at the source's kinks so every sub-interval
    # sees an exactly affine (or exponential) source
    knots = source.knots if source is not None and source.kind == "piecewise_linear" else None
    states = [x0]
    x = x0
    for i in range(grid.size - 1):
        t0, t1 = grid[i], grid[i + 1]
        cuts = [t0, t1]
        if knots is not None:
            cuts = np.unique(np.concatenate([[t0, t1], knots[(knots > t0) & (knots < t1)]]))
        for j in range(len(cuts) - 1):
            x = prop.step(x, source, cuts[j], cuts[j + 1] - cuts[j])
        states.append(x)
    return states


def _grid_key(grid: np.ndarray) -> str:
    return hashlib.md5(np.asarray(grid, dtype=float).tobytes()).hexdigest()[:12]


def reference_solve(problem: Problem, x0: np.ndarray, grid, tol: float = 1e-8) -> list[np.ndarray]:
    """Dense reference trajectory on the grid (oracle for error reporting).

    Linear problems propagate exactly in closed form; nonlinear ones run an
    embedded adaptive explicit pair at the requested tolerance, cached on
    disk keyed by (problem, size, tolerance, grid).
    """
    grid = np.asarray(grid, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    m, n = problem.shape
    if max(m, n) > REFERENCE_SIZE_GUARD:
        raise SizeCapExceededError(
            f"reference solve limited to n <= {REFERENCE_SIZE_GUARD}, got {max(m, n)}"
        )
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ConfigError("grid must be a strictly increasing 1-D array")
    if problem.is_linear:
        return _linear_reference(problem, x0, grid)

    key = f"ref_{problem.name}_n{m}x{n}_tol{tol:.1e}_g{_grid_key(grid)}"
    cached = _cache.fetch(key)
    if cached is not None:
        stack = cached["states"]
        return [stack[i] for i in range(stack.shape[0])]

    from scipy.integrate import solve_ivp

    def rhs(t, y):
        return problem.rhs_dense(y.reshape(m, n), t).ravel()

    sol = solve_ivp(rhs, (grid[0], grid[-1]), x0.ravel(), method="RK45",
                    t_eval=grid, rtol=tol, atol=1e-12)
    if not sol.success:
        raise IntegrationError(0, f"reference integration failed: {sol.message}")
    states = [sol.y[:, i].reshape(m, n) for i in range(grid.size)]
    _cache.store(key, states=np.stack(states))
    return states


def observed_order(hs, errors) -> float:
    """Least-squares slope of log(error) vs log(h) above the plateau.

    Points with error below 5× the smallest error are treated as sitting on
    the rank/Krylov approximation floor and dropped; if that filter leaves
    fewer than two points the sweep has no detectable floor and the slope is
    fit over all of it.
    """
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if hs.size != errors.size or hs.size < 3:
        raise ValueError("need at least 3 (h, error) pairs")
    if np.any(hs <= 0):
        raise ValueError("step sizes must be positive")
    if np.any(errors <= 0):
        raise ValueError("errors must be positive to fit a log-log slope")
    keep = errors >= 5.0 * errors.min()
    if np.count_nonzero(keep) < 2:
        keep = np.ones(hs.size, dtype=bool)
    slope = np.polyfit(np.log(hs[keep]), np.log(errors[keep]), 1)[0]
    return float(slope)
