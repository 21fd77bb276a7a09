"""Dense real-matrix kernel used by the rest of the package.

All matrices are ``numpy.ndarray`` objects of dtype float64 (C order).
Every public routine rejects non-finite input up front so that failures
surface at the call that introduced them rather than several steps later.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "SvdResult",
    "as_matrix",
    "check_finite",
    "coeffs_orthonormal",
    "expm",
    "orthonormality_error",
    "thin_svd",
    "top_singular_triplet",
]

ORTHONORMAL_TOL = 1e-8


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``M = U @ diag(s) @ V.T`` with ``p = min(m, n)`` columns."""

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array, rejecting empty shapes."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and column, got {arr.shape}")
    return arr


def check_finite(x: np.ndarray, name: str = "matrix") -> None:
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise ValueError(f"{name} contains {bad} non-finite element(s)")


def orthonormality_error(B: np.ndarray) -> float:
    """Return ``||B^T B - I||_F``."""
    r = B.shape[1]
    return float(np.linalg.norm(B.T @ B - np.eye(r)))


def _fix_signs(U: np.ndarray, V: np.ndarray) -> None:
    # First nonzero entry of every U column is made positive; V follows.
    for j in range(U.shape[1]):
        nz = np.flatnonzero(U[:, j])
        if nz.size and U[nz[0], j] < 0:
            U[:, j] *= -1.0
            V[:, j] *= -1.0


def thin_svd(M) -> SvdResult:
    """Thin singular value decomposition with a deterministic sign convention.

    Singular values are returned in descending order. For each column of
    ``U`` the first nonzero element is positive, and the matching column
    of ``V`` is flipped with it so the product is unchanged.

    Raises:
        ValueError: if ``M`` is not a finite 2-D matrix.
    """
    M = as_matrix(M)
    check_finite(M)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    U = np.ascontiguousarray(U)
    V = np.ascontiguousarray(Vt.T)
    _fix_signs(U, V)
    return SvdResult(U=U, s=s, V=V)


def top_singular_triplet(M, tol: float = 1e-10, max_iter: int = 500):
    """Dominant singular triplet by power iteration on the smaller Gram matrix.

    The iteration runs on ``M^T M`` (or ``M M^T`` when that one is smaller),
    so each sweep costs ``O(min(m, n)^2)`` after an ``O(m n min(m, n))``
    setup. The start vector is the coordinate axis of the largest column
    (or row) norm, which makes the result deterministic.

    Returns:
        ``(u, sigma, v, converged)`` with ``M v ~= sigma u``. ``converged`` is
        False when ``max_iter`` sweeps did not bring ``||M^T u - sigma v||``
        below ``tol * max(1, sigma)``, which happens when the top two singular
        values (nearly) coincide. The best iterate is still returned.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    M = as_matrix(M)
    check_finite(M)
    m, n = M.shape

    if not np.any(M):
        u = np.zeros(m)
        v = np.zeros(n)
        u[0] = 1.0
        v[0] = 1.0
        return u, 0.0, v, True

    # Iterate on the right vector when n <= m, otherwise on the left one.
    swap = n > m
    A = M.T if swap else M
    gram = A.T @ A
    x = np.zeros(A.shape[1])
    x[int(np.argmax(np.einsum("ij,ij->j", A, A)))] = 1.0

    converged = False
    u = sigma = None
    for _ in range(max_iter):
        y = gram @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            break
        x = y / ny
        Ax = A @ x
        sigma = float(np.linalg.norm(Ax))
        u = Ax / sigma
        if np.linalg.norm(A.T @ u - sigma * x) <= tol * max(1.0, sigma):
            converged = True
            break

    if u is None:
        # Start vector landed in the null space of a nonzero matrix (cannot
        # happen for the largest-norm axis, kept as a guard).
        Ax = A @ x
        sigma = float(np.linalg.norm(Ax))
        u = Ax / sigma if sigma > 0 else np.eye(A.shape[0])[0]

    if swap:
        return x, sigma, u, converged
    return u, sigma, x, converged


def coeffs_orthonormal(S, G) -> np.ndarray:
    """Least-squares coefficients ``argmin_A ||S A - G||_F`` for orthonormal ``S``.

    With ``S^T S = I`` the normal equations collapse to ``A = S^T G``.
    The orthonormality precondition is checked because the closed form is
    wrong otherwise.
    """
    S = as_matrix(S, "S")
    G = as_matrix(G, "G")
    if S.shape[0] != G.shape[0]:
        raise ValueError(f"row mismatch: S is {S.shape}, G is {G.shape}")
    check_finite(S, "S")
    check_finite(G, "G")
    r = S.shape[1]
    err = orthonormality_error(S)
    if err > ORTHONORMAL_TOL * r:
        raise ValueError(f"S is not orthonormal: ||S^T S - I||_F = {err:.3e}")
    return S.T @ G


def expm(X) -> np.ndarray:
    """Matrix exponential (scaling and squaring with Pade approximants)."""
    X = as_matrix(X)
    if X.shape[0] != X.shape[1]:
        raise ValueError(f"expm needs a square matrix, got {X.shape}")
    check_finite(X)
    return scipy.linalg.expm(X)
