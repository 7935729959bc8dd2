"""Benchmark problems: operators, sources, nonlinearities, initial values.

All problems have the form dX/dt = A X + X B + G(X, t) with diffusive
(negative semidefinite) A and B:

* heat/Lyapunov — 1D Dirichlet Laplacian, linear source C(t) in three
  flavors (constant low-rank, exponentially growing trigonometric,
  piecewise-linear "five phase" used by the rank-adaptive runs);
* Riccati — finite-volume variable-coefficient diffusion with the
  quadratic nonlinearity M^T M − X²;
* Allen–Cahn — scaled Laplacian with the cubic reaction X − X∘X∘X.

Operator handles expose matrix-free ``apply`` / ``apply_transpose`` /
``shifted_solve`` and cache one sparse factorization per shift, so Krylov
bases can be built without ever forming dense n×n matrices.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lu_factor, lu_solve

from . import _cache
from .errors import (
    ConfigError,
    DimensionMismatchError,
    ShiftedSolveError,
    SpectrumIterationError,
)
from .linalg import LowRankMatrix, lowrank_add, lowrank_from_factors, lowrank_hadamard


class MatrixOperator:
    """Handle for a square operator given by a sparse or dense matrix.

    ``shifted_solve(rho, block)`` applies (Op − rho·I)⁻¹; factorizations are
    cached per shift and the handle is safe for concurrent read access.
    ``ell`` is the one-sided Lipschitz constant λ_max((Op + Opᵀ)/2).
    """

    def __init__(self, matrix, ell: float | None = None):
        if matrix.shape[0] != matrix.shape[1]:
            raise DimensionMismatchError(f"operator must be square, got {matrix.shape}")
        self._sparse = sp.issparse(matrix)
        self.matrix = matrix.tocsr() if self._sparse else np.asarray(matrix, dtype=float)
        self._lu_cache: dict[float, object] = {}
        self._lock = threading.Lock()
        self._transposed: MatrixOperator | None = None
        self.ell = float(ell) if ell is not None else self._compute_ell()

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def _compute_ell(self) -> float:
        m = self.matrix
        sym = 0.5 * (m + m.T)
        n = sym.shape[0]
        if self._sparse and n > 64:
            try:
                vals = spla.eigsh(sym, k=1, which="LA", return_eigenvectors=False)
                return float(vals[0])
            except (spla.ArpackError, spla.ArpackNoConvergence):
                sym = sym.toarray()
        elif self._sparse:
            sym = sym.toarray()
        return float(np.linalg.eigvalsh(sym)[-1])

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def apply_transpose(self, x: np.ndarray) -> np.ndarray:
        return self.matrix.T @ x

    def shifted_solve(self, rho: float, block: np.ndarray) -> np.ndarray:
        """Solve (Op − rho·I) y = block for a vector or tall block."""
        rho = float(rho)
        solver = self._lu_cache.get(rho)
        if solver is None:
            with self._lock:
                solver = self._lu_cache.get(rho)
                if solver is None:
                    solver = self._factorize(rho)
                    self._lu_cache[rho] = solver
        return solver(block)

    def _factorize(self, rho: float):
        n = self.dimension
        try:
            if self._sparse:
                shifted = (self.matrix - rho * sp.identity(n, format="csr")).tocsc()
                lu = spla.splu(shifted)
                return lu.solve
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                lu_piv = lu_factor(self.matrix - rho * np.eye(n))
            pivots = np.abs(np.diag(lu_piv[0]))
            if pivots.min() <= n * np.finfo(float).eps * max(pivots.max(), 1.0):
                raise ShiftedSolveError(f"shift {rho} is singular for this operator")
            return lambda b: lu_solve(lu_piv, b)
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            raise ShiftedSolveError(f"shift {rho} is singular for this operator: {exc}") from exc

    def transposed(self) -> "MatrixOperator":
        # memoized so shift factorizations persist across repeated steps
        with self._lock:
            if self._transposed is None:
                self._transposed = MatrixOperator(self.matrix.T, ell=self.ell)
        return self._transposed


class SourceTerm:
    """Linear-problem source C(t), kept factored and structurally tagged.

    ``kind`` is one of ``constant``, ``exponential`` (rate·t exponent on a
    fixed matrix) or ``piecewise_linear`` (linear interpolation between node
    matrices at knot times).  The structure tags let the dense reference
    solver use exact closed-form propagation instead of quadrature.
    """

    def __init__(self, kind: str, *, constant: LowRankMatrix | None = None,
                 base: LowRankMatrix | None = None, rate: float = 0.0,
                 knots: np.ndarray | None = None,
                 node_values: list[LowRankMatrix] | None = None):
        self.kind = kind
        self.constant = constant
        self.base = base
        self.rate = rate
        self.knots = None if knots is None else np.asarray(knots, dtype=float)
        self.node_values = node_values
        if kind == "constant":
            assert constant is not None
        elif kind == "exponential":
            assert base is not None
        elif kind == "piecewise_linear":
            assert knots is not None and node_values is not None
            assert len(node_values) == len(self.knots)
            assert np.all(np.diff(self.knots) > 0)
        else:
            raise ConfigError(f"unknown source kind {kind!r}")

    def segment(self, t: float) -> int:
        """Index i of the knot interval [knots[i], knots[i+1]) containing t."""
        i = int(np.searchsorted(self.knots, t, side="right") - 1)
        return min(max(i, 0), len(self.knots) - 2)

    def eval_lowrank(self, t: float) -> LowRankMatrix:
        if self.kind == "constant":
            return self.constant
        if self.kind == "exponential":
            scaled = np.exp(self.rate * t) * self.base.s
            return LowRankMatrix(self.base.u, scaled, self.base.v,
                                 is_svd=self.base.is_svd)
        i = self.segment(t)
        t0, t1 = self.knots[i], self.knots[i + 1]
        theta = (t - t0) / (t1 - t0)
        va, vb = self.node_values[i], self.node_values[i + 1]
        if va is vb or theta == 0.0:
            return va
        if theta == 1.0:
            return vb
        return lowrank_add([va, vb], [1.0 - theta, theta])

    def eval_dense(self, t: float) -> np.ndarray:
        return self.eval_lowrank(t).todense()


@dataclass
class Problem:
    """dX/dt = A X + X B + G(X, t) on [t0, t_final] from ``initial_value``."""

    name: str
    a: MatrixOperator
    b: MatrixOperator
    g: Callable[[LowRankMatrix, float], LowRankMatrix]
    t0: float
    t_final: float
    initial_value: LowRankMatrix
    source: SourceTerm | None = None
    nonlinear_dense: Callable[[np.ndarray, float], np.ndarray] | None = None
    g_rank_bound: Callable[[int], int] = field(default=lambda r: r)
    seed: int | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.a.dimension, self.b.dimension)

    @property
    def is_linear(self) -> bool:
        return self.source is not None

    def rhs_dense(self, x: np.ndarray, t: float) -> np.ndarray:
        """Dense right-hand side, for reference integration at small n."""
        out = self.a.matrix @ x + x @ self.b.matrix
        if self.source is not None:
            out = out + self.source.eval_dense(t)
        if self.nonlinear_dense is not None:
            out = out + self.nonlinear_dense(x, t)
        return out


# ------------------------------------------------------------------ operators


def laplacian_dirichlet(n: int, length: float = 1.0, scale: float = 1.0) -> tuple[sp.csr_matrix, float]:
    """(scale/dx²)·tridiag(1,−2,1) on n interior points; returns (matrix, ell)."""
    dx = length / (n + 1)
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    lap = sp.diags([off, main, off], [-1, 0, 1], format="csr") * (scale / dx**2)
    ell = -(2.0 - 2.0 * np.cos(np.pi / (n + 1))) * scale / dx**2
    return lap, ell


def laplacian_periodic(n: int, length: float, scale: float = 1.0) -> tuple[sp.csr_matrix, float]:
    """Periodic second-difference stencil; singular, ell = 0 exactly."""
    dx = length / n
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    lap = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    lap[0, n - 1] = 1.0
    lap[n - 1, 0] = 1.0
    return lap.tocsr() * (scale / dx**2), 0.0


def trig_block(n: int, q: int) -> np.ndarray:
    """q×n block of rows {1, √2·cos(2πkx), √2·sin(2πkx)} at x_j = j/(n+1)."""
    if q % 2 == 0 or q < 1:
        raise ConfigError(f"q must be odd and positive, got {q}")
    x = np.arange(1, n + 1) / (n + 1)
    rows = [np.ones(n)]
    half = (q - 1) // 2
    for k in range(1, half + 1):
        rows.append(np.sqrt(2.0) * np.cos(2 * np.pi * k * x))
    for k in range(1, half + 1):
        rows.append(np.sqrt(2.0) * np.sin(2 * np.pi * k * x))
    return np.vstack(rows)


def _gram_lowrank(m_block: np.ndarray) -> LowRankMatrix:
    """MᵀM of a q×n block as a rank-q factored matrix."""
    qmat, rmat = np.linalg.qr(m_block.T)
    return lowrank_from_factors(qmat, rmat @ rmat.T, qmat)


def _random_orthonormal(rng: np.random.Generator, n: int, cols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, cols)))
    return q


# ----------------------------------------------------------------- Lyapunov


def make_heat_lyapunov(n: int, source_spec: str = "constant", seed: int = 1234) -> Problem:
    """1D heat propagation: dX/dt = A X + X Aᵀ + C(t) on [0, 1].

    ``source_spec``: 'constant' (fixed rank-5 symmetric matrix),
    'time_dependent' (e^{4t}·MᵀM from 5 trigonometric rows), or
    'five_phase' (piecewise-linear switching source for rank adaptivity).
    """
    if n < 4:
        raise ConfigError(f"heat problem needs n >= 4, got {n}")
    spec = source_spec.replace("-", "_")
    lap, ell = laplacian_dirichlet(n)
    a = MatrixOperator(lap, ell=ell)
    b = a.transposed()
    rng = np.random.default_rng(seed)

    if spec == "constant":
        q5 = _random_orthonormal(rng, n, 5)
        sig = np.diag([1.0, 1e-4, 1e-8, 1e-12, 1e-16])
        c = LowRankMatrix(q5, sig, q5, is_svd=True)
        source = SourceTerm("constant", constant=c)
        assert c.rank == 5
        x0 = c
    elif spec == "time_dependent":
        mtm = _gram_lowrank(trig_block(n, 5))
        assert mtm.rank == 5
        source = SourceTerm("exponential", base=mtm, rate=4.0)
        x0 = mtm
    elif spec == "five_phase":
        q9 = _random_orthonormal(rng, n, 9)
        sig1 = 10.0 ** -np.arange(0, 16, 2, dtype=float)   # 1 .. 1e-14, 8 values
        sig2 = 10.0 ** -np.arange(0, 9, dtype=float)       # 1 .. 1e-8,  9 values
        x1 = LowRankMatrix(q9[:, :8], np.diag(sig1), q9[:, :8], is_svd=True)
        x2 = LowRankMatrix(q9, np.diag(sig2), q9, is_svd=True)
        assert x1.rank <= 9 and x2.rank <= 9

        def lyap_image(xm: LowRankMatrix) -> LowRankMatrix:
            aq = lap @ xm.u
            r = xm.rank
            core = np.zeros((2 * r, 2 * r))
            core[:r, :r] = xm.s
            core[r:, r:] = xm.s
            return lowrank_from_factors(np.hstack([aq, xm.u]), core, np.hstack([xm.u, aq]))

        l1, l2 = lyap_image(x1), lyap_image(x2)
        assert l1.rank <= 16 and l2.rank <= 18
        source = SourceTerm(
            "piecewise_linear",
            knots=np.array([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]),
            node_values=[l1, l1, l2, l2, l1, l1],
        )
        # equilibrium of the first phase: A X + X Aᵀ + L(X1) = 0 at X = −X1
        x0 = LowRankMatrix(x1.u, -x1.s, x1.v)
    else:
        raise ConfigError(f"unknown lyapunov source_spec {source_spec!r}")

    def g(y: LowRankMatrix, t: float) -> LowRankMatrix:
        return source.eval_lowrank(t)

    return Problem(
        name=f"lyapunov_{spec}",
        a=a,
        b=b,
        g=g,
        t0=0.0,
        t_final=1.0,
        initial_value=x0,
        source=source,
        g_rank_bound=lambda r: 18,
        seed=seed,
    )


# ------------------------------------------------------------------- Riccati


def riccati_stencil(n: int, lam: float = 1.0) -> sp.csr_matrix:
    """Finite-volume matrix for ∂x(α(x)∂x·) − λ with α = 2 + cos(2πx)."""
    dx = 1.0 / (n + 1)
    x = np.arange(1, n + 1) * dx
    alpha_right = 2.0 + np.cos(2 * np.pi * (x + dx / 2))   # α at x_{i+1/2}
    alpha_left = 2.0 + np.cos(2 * np.pi * (x - dx / 2))    # α at x_{i−1/2}
    upper = alpha_right[:-1] / dx**2
    lower = alpha_left[1:] / dx**2
    diag = -(alpha_left + alpha_right) / dx**2 - lam
    return sp.diags([lower, diag, upper], [-1, 0, 1], format="csr")


def _riccati_initial_value(n: int, q: int, tol: float = 1e-8) -> np.ndarray:
    """Propagate X=0 to t=0.01 with an adaptive dense solver (disk-cached)."""
    key = f"riccati_x0_n{n}_q{q}_tol{tol:.0e}"
    cached = _cache.fetch(key)
    if cached is not None:
        return cached["x0"]
    from scipy.integrate import solve_ivp

    amat = riccati_stencil(n)
    mtm = trig_block(n, q).T @ trig_block(n, q)

    def rhs(t, y):
        x = y.reshape(n, n)
        dx = amat.T @ x + x @ amat + mtm - x @ x
        return dx.ravel()

    sol = solve_ivp(rhs, (0.0, 0.01), np.zeros(n * n), method="RK45",
                    rtol=tol, atol=1e-12)
    if not sol.success:
        raise ArithmeticError(f"initial-value propagation failed: {sol.message}")
    x0 = sol.y[:, -1].reshape(n, n)
    x0 = 0.5 * (x0 + x0.T)
    _cache.store(key, x0=x0)
    return x0


def make_riccati(n: int = 200, q: int = 9, seed: int = 1234) -> Problem:
    """Differential Riccati: dX/dt = Aᵀ X + X A + MᵀM − X² on [0, 0.1]."""
    if n < 8:
        raise ConfigError(f"riccati needs n >= 8, got {n}")
    if q % 2 == 0:
        raise ConfigError(f"q must be odd, got {q}")
    amat = riccati_stencil(n)
    a = MatrixOperator(amat.T.tocsr())
    b = MatrixOperator(amat)
    assert a.ell < 0 and b.ell < 0
    mtm = _gram_lowrank(trig_block(n, q))
    assert mtm.rank == q
    mtm_dense = trig_block(n, q).T @ trig_block(n, q)

    def g(y: LowRankMatrix, t: float) -> LowRankMatrix:
        # Y² through the core: (U S Vᵀ)(U S Vᵀ) = U [S (VᵀU) S] Vᵀ, rank ≤ r
        ysq = lowrank_from_factors(y.u, y.s @ (y.v.T @ y.u) @ y.s, y.v)
        return lowrank_add([mtm, ysq], [1.0, -1.0])

    def g_dense(x: np.ndarray, t: float) -> np.ndarray:
        return mtm_dense - x @ x

    x0 = LowRankMatrix.from_dense(_riccati_initial_value(n, q))
    return Problem(
        name="riccati",
        a=a,
        b=b,
        g=g,
        t0=0.0,
        t_final=0.1,
        initial_value=x0,
        nonlinear_dense=g_dense,
        g_rank_bound=lambda r: q + r,
        seed=seed,
    )


# ---------------------------------------------------------------- Allen–Cahn


def allen_cahn_initial(n: int) -> np.ndarray:
    """Smooth double-bump initial value on the periodic grid of [0, 2π]²."""
    x = 2 * np.pi * np.arange(n) / n
    xg, yg = np.meshgrid(x, x, indexing="ij")
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        bump = np.exp(-np.tan(xg) ** 2) + np.exp(-np.tan(yg) ** 2)
        numer = bump * np.sin(xg) * np.sin(yg)
        denom = 1.0 + np.exp(np.abs(1.0 / np.sin(-xg / 2))) + np.exp(
            np.abs(1.0 / np.sin(-yg / 2))
        )
        f0 = np.where(np.isfinite(denom), numer / denom, 0.0)
    return f0


def make_allen_cahn(n: int = 256, eps: float = 0.01, boundary: str = "periodic",
                    seed: int = 1234) -> Problem:
    """Allen–Cahn phase separation: dX/dt = A X + X A + X − X∘X∘X on [0, 10].

    A = eps·Laplacian on [0, 2π]; the reaction is evaluated with factored
    Hadamard products and recompression.  Periodic boundary (default) matches
    the trigonometric initial data and makes A singular (ell = 0); Dirichlet
    is available as an option with ell < 0.
    """
    if n < 16:
        raise ConfigError(f"allen-cahn needs n >= 16, got {n}")
    if boundary == "periodic":
        lap, ell = laplacian_periodic(n, 2 * np.pi, scale=eps)
    elif boundary == "dirichlet":
        lap, ell = laplacian_dirichlet(n, 2 * np.pi, scale=eps)
    else:
        raise ConfigError(f"unknown boundary {boundary!r}")
    a = MatrixOperator(lap, ell=ell)
    assert a.ell <= 0.0

    def g(y: LowRankMatrix, t: float) -> LowRankMatrix:
        cube = lowrank_hadamard(lowrank_hadamard(y, y), y)
        return lowrank_add([y, cube], [1.0, -1.0])

    def g_dense(x: np.ndarray, t: float) -> np.ndarray:
        return x - x**3

    x0_dense = allen_cahn_initial(n)
    full = LowRankMatrix.from_dense(x0_dense)
    sig = full.sigma()
    numerical_rank = int(np.sum(sig > 1e-12 * sig[0]))
    x0 = LowRankMatrix(full.u[:, :numerical_rank], full.s[:numerical_rank, :numerical_rank],
                       full.v[:, :numerical_rank], is_svd=True)

    return Problem(
        name="allen_cahn",
        a=a,
        b=MatrixOperator(lap.T.tocsr(), ell=ell),
        g=g,
        t0=0.0,
        t_final=10.0,
        initial_value=x0,
        nonlinear_dense=g_dense,
        g_rank_bound=lambda r: r + r**3,
        seed=seed,
    )


# ------------------------------------------------------------------ spectrum


def _top_symmetric_eig(op: MatrixOperator, maxiter: int = 200, tol: float = 1e-9,
                       seed: int = 0) -> float:
    """λ_max of a symmetric negative-semidefinite operator by inverse iteration.

    A small positive shift keeps the solve well-posed even when the operator
    is singular (periodic stencils) and pins convergence to the eigenvalue
    nearest zero, which is the largest one for diffusive operators.
    """
    n = op.dimension
    scale = float(abs(op.matrix).sum(axis=1).max())
    rho = 1e-6 * max(scale, 1.0)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam_prev = np.inf
    for _ in range(maxiter):
        w = op.shifted_solve(rho, v)
        v = w / np.linalg.norm(w)
        lam = float(v @ op.apply(v))
        if abs(lam - lam_prev) <= tol * max(1.0, abs(lam)):
            return lam
        lam_prev = lam
    raise SpectrumIterationError(
        f"inverse iteration did not converge in {maxiter} steps (last λ = {lam})"
    )


def spectrum_metadata(problem: Problem) -> tuple[float, float, float]:
    """(ell_A, ell_B, ell_star) estimated by inverse iteration on each factor."""
    ell_a = _top_symmetric_eig(problem.a)
    ell_b = _top_symmetric_eig(problem.b)
    return ell_a, ell_b, max(ell_a, ell_b)
