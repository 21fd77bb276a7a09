"""Rank-r projection bases on the Grassmannian and their geodesic updates.

A basis ``S`` is an ``m x r`` matrix with orthonormal columns, where ``m``
is the smaller dimension of the gradient. Gradients with more rows than
columns are handled as their transpose; :class:`SubspaceBasis` records that
orientation so callers can flip the final update back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .linalg import (
    as_matrix,
    check_finite,
    coeffs_orthonormal,
    expm,
    orthonormality_error,
    thin_svd,
    top_singular_triplet,
)

__all__ = [
    "SubspaceBasis",
    "TangentRank1",
    "geodesic_step",
    "grassmann_exp_oracle",
    "init_from_gradient",
    "project",
    "project_back",
    "projector_distance",
    "residual_and_coeffs",
    "subspace_cost",
    "tangent_rank1",
]

# Drift above this (times r) triggers a QR repair after a geodesic step.
REORTHO_TOL = 1e-10


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal ``m x r`` basis plus orientation metadata."""

    B: np.ndarray
    transposed: bool = False
    last_update_step: int = 0

    @property
    def m(self) -> int:
        return self.B.shape[0]

    @property
    def rank(self) -> int:
        return self.B.shape[1]

    def orient(self, X: np.ndarray) -> np.ndarray:
        """Bring a matrix in the parameter's layout into tracker layout."""
        return X.T if self.transposed else X


@dataclass(frozen=True)
class TangentRank1:
    """Top singular triplet ``(u, sigma, v)`` of the Grassmann gradient."""

    u: np.ndarray
    sigma: float
    v: np.ndarray
    converged: bool = True


def init_from_gradient(G, r: int, step: int = 0) -> SubspaceBasis:
    """Initial basis from the top-``r`` singular vectors of ``G``.

    Left singular vectors are used when ``G`` has no more rows than columns,
    right singular vectors (i.e. the left ones of ``G^T``) otherwise.
    """
    G = as_matrix(G, "G")
    check_finite(G, "G")
    if not 1 <= r <= min(G.shape):
        raise ValueError(f"rank must be in [1, {min(G.shape)}], got {r}")
    transposed = G.shape[0] > G.shape[1]
    svd = thin_svd(G.T if transposed else G)
    B = np.ascontiguousarray(svd.U[:, :r])
    return SubspaceBasis(B=B, transposed=transposed, last_update_step=step)


def _check_rows(S: SubspaceBasis, X: np.ndarray, what: str) -> None:
    if X.shape[0] != S.m:
        raise ValueError(f"{what} has {X.shape[0]} rows, basis has {S.m}")


def project(S: SubspaceBasis, G) -> np.ndarray:
    """Low-rank coordinates ``S^T G`` of an already-oriented gradient."""
    G = as_matrix(G, "G")
    _check_rows(S, G, "G")
    return S.B.T @ G


def project_back(S: SubspaceBasis, X) -> np.ndarray:
    """Lift ``r x n`` coordinates back to the ambient space: ``S X``."""
    X = as_matrix(X, "X")
    if X.shape[0] != S.rank:
        raise ValueError(f"X has {X.shape[0]} rows, basis rank is {S.rank}")
    return S.B @ X


def residual_and_coeffs(S: SubspaceBasis, G):
    """Best-fit coefficients and the residual outside ``span(S)``.

    Returns:
        ``(A, R)`` with ``A = S^T G`` and ``R = G - S A``.
    """
    G = as_matrix(G, "G")
    _check_rows(S, G, "G")
    A = coeffs_orthonormal(S.B, G)
    R = G - S.B @ A
    return A, R


def subspace_cost(S: SubspaceBasis | np.ndarray, G) -> float:
    """Fit cost ``min_A ||S A - G||_F^2`` for an orthonormal basis."""
    B = S.B if isinstance(S, SubspaceBasis) else np.asarray(S, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    R = G - B @ (B.T @ G)
    return float(np.einsum("ij,ij->", R, R))


def tangent_rank1(R, A, method: str = "svd", tol: float = 1e-10, max_iter: int = 500) -> TangentRank1:
    """Rank-1 approximation of the Grassmann gradient ``-2 R A^T``.

    The gradient is only ``m x r``, so the default ``method="svd"`` takes the
    leading triplet of a thin LAPACK SVD at ``O(m r^2)`` cost. ``"power"``
    uses :func:`~subtrack.linalg.top_singular_triplet` instead; it avoids the
    full factorization but can need many sweeps when the top two singular
    values are close.

    A zero ``sigma`` means the basis already fits the gradient (or the
    gradient has no in-span energy) and the geodesic step is a no-op.
    """
    R = as_matrix(R, "R")
    A = as_matrix(A, "A")
    if R.shape[1] != A.shape[1]:
        raise ValueError(f"R is {R.shape} but A is {A.shape}")
    grad = -2.0 * (R @ A.T)
    if method == "svd":
        res = thin_svd(grad)
        return TangentRank1(u=res.U[:, 0].copy(), sigma=float(res.s[0]), v=res.V[:, 0].copy())
    if method == "power":
        u, sigma, v, converged = top_singular_triplet(grad, tol=tol, max_iter=max_iter)
        return TangentRank1(u=u, sigma=sigma, v=v, converged=converged)
    raise ValueError(f"method must be 'svd' or 'power', got {method!r}")


def _repair(B: np.ndarray) -> np.ndarray:
    Q, Rf = np.linalg.qr(B)
    # Positive diagonal of R keeps Q as close to B as possible.
    signs = np.sign(np.diag(Rf))
    signs[signs == 0] = 1.0
    return Q * signs


def geodesic_step(S: SubspaceBasis, T: TangentRank1, eta: float, step: int | None = None) -> SubspaceBasis:
    """Move ``S`` along the Grassmann geodesic in the descent direction ``-u sigma v^T``.

    Implements ``S' = (S v | u) [cos(sigma eta); -sin(sigma eta)] v^T + S (I - v v^T)``
    as the equivalent rank-1 update ``S + (S v (cos - 1) - u sin) v^T``,
    which costs ``O(m r)``. Columns of the result stay orthonormal; if
    floating-point drift exceeds ``1e-10 * r`` a sign-fixed QR repair is
    applied.
    """
    if eta < 0 or not math.isfinite(eta):
        raise ValueError(f"eta must be a finite non-negative number, got {eta}")
    new_step = S.last_update_step if step is None else step
    theta = T.sigma * eta
    c = math.cos(theta)
    s = math.sin(theta)
    if s == 0.0 and c == 1.0:
        return replace(S, last_update_step=new_step)

    B = S.B
    Sv = B @ T.v
    B_new = B + np.outer(Sv * (c - 1.0) - T.u * s, T.v)
    r = B_new.shape[1]
    if orthonormality_error(B_new) > REORTHO_TOL * r:
        B_new = _repair(B_new)
    return SubspaceBasis(B=B_new, transposed=S.transposed, last_update_step=new_step)


def grassmann_exp_oracle(S: SubspaceBasis, Delta, t: float) -> SubspaceBasis:
    """Grassmann exponential via a block skew-symmetric matrix exponential.

    Builds ``Q = (S | S_perp)`` and ``K = S_perp^T Delta``, then returns the
    first ``r`` columns of ``Q expm(t [[0, -K^T], [K, 0]])``. Dense and
    ``O(m^3)``; intended as an independent reference for
    :func:`geodesic_step`, not for production use.
    """
    Delta = as_matrix(Delta, "Delta")
    B = S.B
    m, r = B.shape
    if Delta.shape != (m, r):
        raise ValueError(f"Delta must be {(m, r)}, got {Delta.shape}")
    horiz = float(np.linalg.norm(B.T @ Delta))
    if horiz > 1e-6 * max(1.0, float(np.linalg.norm(Delta))):
        raise ValueError(f"Delta is not horizontal: ||S^T Delta||_F = {horiz:.3e}")
    Qfull, _ = np.linalg.qr(B, mode="complete")
    S_perp = Qfull[:, r:]
    Q = np.hstack([B, S_perp])
    K = S_perp.T @ Delta
    X = np.zeros((m, m))
    X[r:, :r] = K
    X[:r, r:] = -K.T
    moved = (Q @ expm(t * X))[:, :r]
    return SubspaceBasis(B=moved, transposed=S.transposed, last_update_step=S.last_update_step)


def projector_distance(S1, S2) -> float:
    """``||S1 S1^T - S2 S2^T||_F`` for two orthonormal bases."""
    B1 = S1.B if isinstance(S1, SubspaceBasis) else np.asarray(S1)
    B2 = S2.B if isinstance(S2, SubspaceBasis) else np.asarray(S2)
    return float(np.linalg.norm(B1 @ B1.T - B2 @ B2.T))
