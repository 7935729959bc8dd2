"""Dense and factored low-rank linear algebra kernels.

Everything here works either on small dense arrays (reduced-system objects,
capped in size) or on factored rank-r matrices ``U @ S @ V.T`` that are never
densified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatchError, SizeCapExceededError, SylvesterSingularError

# Per-dimension cap for dense reduced-system objects.
DENSE_CAP = 4096

# Dropped directions below this relative threshold during re-orthonormalization.
DEFAULT_DEDUP_TOL = 1e-10

_ORTHO_TOL = 1e-8


def ensure_small_dense(M: np.ndarray, cap: int = DENSE_CAP) -> np.ndarray:
    """Validate that a dense array fits within the per-dimension size cap."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise DimensionMismatchError(f"expected a matrix, got ndim={M.ndim}")
    if max(M.shape) > cap:
        raise SizeCapExceededError(f"dense object of shape {M.shape} exceeds cap {cap}")
    return M


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LowRankMatrix:
    """Factored rank-r matrix ``U @ S @ V.T`` with orthonormal U, V.

    The core S is a general r x r matrix.  When ``is_svd`` is set, S is
    diagonal with nonnegative, nonincreasing entries (proper SVD form).
    ``tol_met`` is only meaningful on results of tolerance-based truncation.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    is_svd: bool = False
    tol_met: bool = True

    def __post_init__(self):
        u = _readonly(self.u)
        s = _readonly(self.s)
        v = _readonly(self.v)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "v", v)
        if u.ndim != 2 or v.ndim != 2 or s.ndim != 2:
            raise DimensionMismatchError("factors must be matrices")
        if u.shape[1] != s.shape[0] or v.shape[1] != s.shape[1]:
            raise DimensionMismatchError(
                f"inconsistent factor shapes {u.shape}, {s.shape}, {v.shape}"
            )
        r = u.shape[1]
        if r:
            for f in (u, v):
                g = f.T @ f
                if np.linalg.norm(g - np.eye(f.shape[1])) > _ORTHO_TOL * max(1, r):
                    raise ValueError("factor columns are not orthonormal")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.u.shape[0], self.v.shape[0])

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    def sigma(self) -> np.ndarray:
        """Singular values; requires proper SVD form."""
        if not self.is_svd:
            raise ValueError("core is not in proper SVD form")
        return np.diag(self.s).copy()

    def norm(self) -> float:
        """Frobenius norm, equal to ||S||_F by orthonormality of the factors."""
        return float(np.linalg.norm(self.s))

    def todense(self) -> np.ndarray:
        return self.u @ self.s @ self.v.T

    def transpose(self) -> "LowRankMatrix":
        return LowRankMatrix(self.v, self.s.T, self.u, is_svd=False)

    @classmethod
    def from_dense(cls, X: np.ndarray) -> "LowRankMatrix":
        X = np.asarray(X, dtype=float)
        uu, sig, vt = np.linalg.svd(X, full_matrices=False)
        uu, vv = _fix_signs(uu, vt.T)
        return cls(uu, np.diag(sig), vv, is_svd=True)

    @classmethod
    def zeros(cls, m: int, n: int) -> "LowRankMatrix":
        return cls(np.zeros((m, 0)), np.zeros((0, 0)), np.zeros((n, 0)), is_svd=True)


def _fix_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip factor columns so each left singular vector's largest-magnitude entry is positive."""
    if u.shape[1] == 0:
        return u, v
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, v * signs


def _factored_svd(u: np.ndarray, s: np.ndarray, v: np.ndarray):
    """SVD of ``u @ s @ v.T`` via QR of both factors and SVD of the small core.

    The factors need not be orthonormal.  Returns (U, sigma, V) with the sign
    convention applied; never materializes the m x n product.
    """
    if u.shape[1] == 0:
        return u, np.zeros(0), v
    qu, ru = np.linalg.qr(u)
    qv, rv = np.linalg.qr(v)
    uu, sig, vt = np.linalg.svd(ru @ s @ rv.T, full_matrices=False)
    U, V = _fix_signs(qu @ uu, qv @ vt.T)
    return U, sig, V


def _as_factors(X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(X, LowRankMatrix):
        return X.u, X.s, X.v
    X = np.asarray(X, dtype=float)
    uu, sig, vt = np.linalg.svd(X, full_matrices=False)
    return uu, np.diag(sig), vt.T


def lowrank_from_factors(left: np.ndarray, core: np.ndarray, right: np.ndarray) -> LowRankMatrix:
    """Compress ``left @ core @ right.T`` (arbitrary factors) to proper SVD form."""
    u, s, v = _factored_svd(left, core, right)
    return LowRankMatrix(u, np.diag(s), v, is_svd=True)


def svd_truncate_rank(X, r: int) -> LowRankMatrix:
    """Best rank-r approximation (Frobenius) in proper SVD form.

    ``r`` beyond the available rank returns X reorthonormalized.
    """
    if r < 1:
        raise ValueError("rank must be >= 1")
    U, sig, V = _factored_svd(*_as_factors(X))
    k = min(r, sig.size)
    return LowRankMatrix(U[:, :k], np.diag(sig[:k]), V[:, :k], is_svd=True)


def svd_truncate_tol(X, tau: float, r_max: int) -> LowRankMatrix:
    """Smallest-rank truncation with relative tail norm <= tau, capped at r_max.

    Keeps the smallest s with sqrt(sum_{i>s} sigma_i^2) <= tau * ||X||_F.  If
    the cap prevents reaching tau the result carries ``tol_met=False``.
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    U, sig, V = _factored_svd(*_as_factors(X))
    total = float(np.linalg.norm(sig))
    if total == 0.0:
        return LowRankMatrix(U[:, :0], np.zeros((0, 0)), V[:, :0], is_svd=True)
    # tails[s] = ||sigma[s:]||, computed from the bottom for accuracy
    tails = np.sqrt(np.cumsum(sig[::-1] ** 2))[::-1]
    ok = np.nonzero(np.append(tails[1:], 0.0) <= tau * total)[0]
    s = int(ok[0]) + 1 if ok.size else sig.size
    met = s <= r_max
    s = min(s, r_max)
    return LowRankMatrix(U[:, :s], np.diag(sig[:s]), V[:, :s], is_svd=True, tol_met=met)


def lowrank_add(terms, weights=None) -> LowRankMatrix:
    """Exact factored sum of weighted low-rank terms, in proper SVD form.

    No truncation is applied; the result rank is at most the sum of ranks.
    """
    terms = list(terms)
    if not terms:
        raise ValueError("need at least one term")
    if weights is None:
        weights = [1.0] * len(terms)
    if len(weights) != len(terms):
        raise DimensionMismatchError("one weight per term required")
    shape = terms[0].shape
    for t in terms:
        if t.shape != shape:
            raise DimensionMismatchError(f"shape {t.shape} != {shape}")
    u = np.hstack([t.u for t in terms])
    v = np.hstack([t.v for t in terms])
    cores = [w * t.s for w, t in zip(weights, terms)]
    r = sum(c.shape[0] for c in cores)
    s = np.zeros((r, r))
    i = j = 0
    for c in cores:
        s[i : i + c.shape[0], j : j + c.shape[1]] = c
        i += c.shape[0]
        j += c.shape[1]
    U, sig, V = _factored_svd(u, s, v)
    return LowRankMatrix(U, np.diag(sig), V, is_svd=True)


def lowrank_hadamard(y1: LowRankMatrix, y2: LowRankMatrix) -> LowRankMatrix:
    """Elementwise product of two factored matrices.

    Built from columnwise (transposed Khatri-Rao) products of the factors, rank
    at most r1*r2, then recompressed to numerical rank.  The dense m x n
    product is never formed.
    """
    if y1.shape != y2.shape:
        raise DimensionMismatchError(f"shape {y1.shape} != {y2.shape}")
    m, n = y1.shape
    l1, l2 = y1.u @ y1.s, y2.u @ y2.s
    left = (l1[:, :, None] * l2[:, None, :]).reshape(m, -1)
    right = (y1.v[:, :, None] * y2.v[:, None, :]).reshape(n, -1)
    U, sig, V = _factored_svd(left, np.eye(left.shape[1]), right)
    if sig.size:
        keep = sig > max(m, n) * np.finfo(float).eps * sig[0]
        U, sig, V = U[:, keep], sig[keep], V[:, keep]
    return LowRankMatrix(U, np.diag(sig), V, is_svd=True)


def dense_expm(M: np.ndarray, cap: int = DENSE_CAP) -> np.ndarray:
    """Matrix exponential of a small dense matrix.

    Symmetric inputs go through an eigendecomposition; general ones through
    scaling-and-squaring with a Pade kernel.
    """
    M = ensure_small_dense(M, cap)
    p, q = M.shape
    if p != q:
        raise DimensionMismatchError("matrix exponential needs a square input")
    if p == 0:
        return np.zeros((0, 0))
    scale = np.linalg.norm(M, np.inf)
    if scale == 0.0:
        return np.eye(p)
    if np.allclose(M, M.T, atol=1e-13 * scale, rtol=0.0):
        lam, Q = np.linalg.eigh(0.5 * (M + M.T))
        E = (Q * np.exp(lam)) @ Q.T
        return 0.5 * (E + E.T)
    return sla.expm(M)


def phi_scalar(k: int, z: float) -> float:
    """The scalar phi-function: phi_0 = exp, phi_k(z) = (e^z - p_{k-1}(z)) / z^k.

    Near zero the closed form cancels catastrophically, so |z| < 0.1 switches
    to the Taylor series sum_j z^j / (j+k)!.
    """
    if not 0 <= k <= 4:
        raise ValueError("phi order limited to 0..4")
    z = float(z)
    if k == 0:
        return math.exp(z)
    if abs(z) < 0.1:
        total = 0.0
        term = 1.0 / math.factorial(k)
        j = 0
        while abs(term) > 1e-25:
            total += term
            j += 1
            term *= z / (j + k)
        return total
    p = 0.0
    for j in range(k - 1, -1, -1):  # Horner for sum_{j<k} z^j/j!
        p = p * z + 1.0 / math.factorial(j)
    return (math.exp(z) - p) / z**k


def solve_sylvester(As: np.ndarray, Bs: np.ndarray, F: np.ndarray, cap: int = DENSE_CAP) -> np.ndarray:
    """Solve As C + C Bs = F by Schur reduction and back-substitution.

    Raises SylvesterSingularError when the spectra nearly cancel, i.e.
    min |lambda_i(As) + lambda_j(Bs)| < 1e-12 * (||As||_2 + ||Bs||_2).
    """
    As = ensure_small_dense(As, cap)
    Bs = ensure_small_dense(Bs, cap)
    F = ensure_small_dense(F, cap)
    p, q = As.shape[0], Bs.shape[0]
    if As.shape != (p, p) or Bs.shape != (q, q) or F.shape != (p, q):
        raise DimensionMismatchError("solve_sylvester operand shapes are inconsistent")
    ta, za = sla.schur(As, output="complex")
    tb, zb = sla.schur(Bs, output="complex")
    alphas, betas = np.diag(ta), np.diag(tb)
    gap = np.min(np.abs(alphas[:, None] + betas[None, :]))
    thresh = 1e-12 * (np.linalg.norm(As, 2) + np.linalg.norm(Bs, 2))
    if gap <= thresh:  # non-strict: catches the all-zero operands too
        raise SylvesterSingularError(f"spectral gap {gap:.3e} below threshold {thresh:.3e}")
    ft = za.conj().T @ F @ zb
    y = np.zeros((p, q), dtype=complex)
    eye = np.eye(p)
    for j in range(q):
        rhs = ft[:, j] - y[:, :j] @ tb[:j, j]
        y[:, j] = sla.solve_triangular(ta + betas[j] * eye, rhs)
    C = za @ y @ zb.conj().T
    return C.real


def orthonormalize(block: np.ndarray, against: np.ndarray | None = None,
                   dedup_tol: float = DEFAULT_DEDUP_TOL) -> tuple[np.ndarray, int]:
    """Orthonormalize a block against an existing basis, with deflation.

    Modified Gram-Schmidt with one full reorthogonalization pass.  Columns
    whose projected norm falls below ``dedup_tol`` times their original norm
    are dropped.  Returns the new columns only and their count.
    """
    block = np.atleast_2d(np.asarray(block, dtype=float))
    m = block.shape[0]
    if against is not None and against.shape[1] == 0:
        against = None
    kept: list[np.ndarray] = []
    for i in range(block.shape[1]):
        c = block[:, i].copy()
        norm0 = np.linalg.norm(c)
        if norm0 == 0.0:
            continue
        for _ in range(2):  # MGS + one reorthogonalization
            if against is not None:
                c -= against @ (against.T @ c)
            for qcol in kept:
                c -= qcol * (qcol @ c)
        norm1 = np.linalg.norm(c)
        if norm1 <= dedup_tol * norm0:
            continue
        kept.append(c / norm1)
    if not kept:
        return np.zeros((m, 0)), 0
    return np.column_stack(kept), len(kept)
