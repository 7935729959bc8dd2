"""Tangent space of the fixed-rank manifold and factored projections.

At a rank-r point Y = U S V^T the tangent space consists of matrices
U M V^T + Up A V^T + U B^T Vp^T with Up, Vp orthogonal complements.  The
orthogonal projection of an arbitrary matrix G onto that space is

    P(G) = U U^T G + G V V^T - U U^T G V V^T,

which we keep factored: with U1 = orth((I - U U^T) G V) and
V1 = orth((I - V V^T) G^T U),

    P(G) = [U, U1] [[U^T G V, U^T G V1], [U1^T G V, 0]] [V, V1]^T.

The result therefore has rank at most 2r and is never densified.  The part
of G thrown away by the projection, (I - U U^T) G (I - V V^T), is likewise
available in factored form; its norm is the modeling error of forcing the
dynamics to stay on the manifold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError
from .linalg import LowRankMatrix, _factored_svd, orthonormalize


@dataclass(frozen=True)
class TangentMatrix:
    """Element of the tangent space at ``footpoint``, stored factored.

    The matrix is ``basis_left @ core @ basis_right.T`` where the bases are
    orthonormal extensions [U, U1] and [V, V1] of the footpoint factors.
    """

    basis_left: np.ndarray
    core: np.ndarray
    basis_right: np.ndarray
    footpoint: LowRankMatrix

    def __post_init__(self):
        bl, c, br = self.basis_left, self.core, self.basis_right
        if bl.shape[1] != c.shape[0] or br.shape[1] != c.shape[1]:
            raise DimensionMismatchError(
                f"core {c.shape} incompatible with bases {bl.shape}, {br.shape}"
            )

    @property
    def shape(self):
        return (self.basis_left.shape[0], self.basis_right.shape[0])

    def norm(self) -> float:
        return float(np.linalg.norm(self.core))

    def todense(self) -> np.ndarray:
        return self.basis_left @ self.core @ self.basis_right.T

    def to_lowrank(self) -> LowRankMatrix:
        u, s, v = _factored_svd(self.basis_left, self.core, self.basis_right)
        return LowRankMatrix(u, np.diag(s), v, is_svd=True)


def _apply_dense_or_lowrank(g, x: np.ndarray, transpose: bool = False) -> np.ndarray:
    """g @ x (or g.T @ x) for a dense array or LowRankMatrix g."""
    if isinstance(g, LowRankMatrix):
        if transpose:
            return g.v @ (g.s.T @ (g.u.T @ x))
        return g.u @ (g.s @ (g.v.T @ x))
    if transpose:
        return g.T @ x
    return g @ x


def tangent_project(y: LowRankMatrix, g) -> TangentMatrix:
    """Project ``g`` onto the tangent space at ``y``, fully factored.

    ``g`` may be dense or a LowRankMatrix; the cost is O((m+n) r^2) plus the
    cost of 2r applications of ``g`` / ``g.T``, never O(mn).
    """
    if g.shape != y.shape:
        raise DimensionMismatchError(f"operand {g.shape} vs footpoint {y.shape}")
    u, v = y.u, y.v
    r = y.rank
    gv = _apply_dense_or_lowrank(g, v)              # m x r
    gtu = _apply_dense_or_lowrank(g, u, transpose=True)  # n x r
    utgv = u.T @ gv                                  # r x r

    u1, ku = orthonormalize(gv - u @ utgv, against=u)
    v1, kv = orthonormalize(gtu - v @ utgv.T, against=v)

    core = np.zeros((r + ku, r + kv))
    core[:r, :r] = utgv
    if kv:
        core[:r, r:] = u.T @ _apply_dense_or_lowrank(g, v1)
    if ku:
        core[r:, :r] = u1.T @ gv
    bl = np.hstack([u, u1]) if ku else u
    br = np.hstack([v, v1]) if kv else v
    return TangentMatrix(bl, core, br, footpoint=y)


def modeling_error(y: LowRankMatrix, g) -> float:
    """Frobenius norm of the component of ``g`` normal to the manifold at ``y``.

    Computed as ||(I - U U^T) G (I - V V^T)||_F in factored form.  The naive
    sqrt(||G||^2 - ||P G||^2) loses half the significant digits when the
    tangential part dominates, so it is avoided.
    """
    if g.shape != y.shape:
        raise DimensionMismatchError(f"operand {g.shape} vs footpoint {y.shape}")
    u, v = y.u, y.v
    if isinstance(g, LowRankMatrix):
        left = g.u - u @ (u.T @ g.u)       # (I - UU^T) Gu
        right = g.v - v @ (v.T @ g.v)      # (I - VV^T) Gv
        ql, rl = np.linalg.qr(left)
        qr_, rr = np.linalg.qr(right)
        return float(np.linalg.norm(rl @ g.s @ rr.T))
    res = g - u @ (u.T @ g)
    res = res - (res @ v) @ v.T
    return float(np.linalg.norm(res))


def rel_error(approx, reference) -> float:
    """||approx - reference||_F / ||reference||_F, factor-aware.

    Both operands may be dense or LowRankMatrix.  When both are factored the
    difference is formed in factored arithmetic so no dense matrix is built.
    """
    if approx.shape != reference.shape:
        raise DimensionMismatchError(f"{approx.shape} vs {reference.shape}")
    if isinstance(approx, LowRankMatrix) and isinstance(reference, LowRankMatrix):
        lu = np.hstack([approx.u, reference.u])
        lv = np.hstack([approx.v, reference.v])
        ra, rb = approx.rank, reference.rank
        core = np.zeros((ra + rb, ra + rb))
        core[:ra, :ra] = approx.s
        core[ra:, ra:] = -reference.s
        _, sig, _ = _factored_svd(lu, core, lv)
        num = float(np.linalg.norm(sig))
        den = reference.norm()
    else:
        a = approx.todense() if isinstance(approx, LowRankMatrix) else np.asarray(approx)
        b = reference.todense() if isinstance(reference, LowRankMatrix) else np.asarray(reference)
        num = float(np.linalg.norm(a - b))
        den = float(np.linalg.norm(b))
    if den == 0.0:
        return num
    return num / den
