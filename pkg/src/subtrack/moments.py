"""Adam first/second moments kept in the projected ``r x n`` coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .subspace import SubspaceBasis

__all__ = [
    "LowRankMoments",
    "VARIANCE_MODES",
    "plain_update",
    "projection_aware_update",
    "regularized_direction",
    "zero_moments",
]

VARIANCE_MODES = ("abs", "clip")


@dataclass(frozen=True)
class LowRankMoments:
    """First moment ``M``, second moment ``V`` (element-wise >= 0), update count ``t``."""

    M: np.ndarray
    V: np.ndarray
    t: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.M.shape


def zero_moments(rows: int, cols: int) -> LowRankMoments:
    return LowRankMoments(M=np.zeros((rows, cols)), V=np.zeros((rows, cols)), t=0)


def _check_betas(beta1: float, beta2: float) -> None:
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError(f"decay rates must lie in [0, 1), got beta1={beta1}, beta2={beta2}")


def _check_shape(state: LowRankMoments, Gt: np.ndarray) -> np.ndarray:
    Gt = np.asarray(Gt, dtype=np.float64)
    if Gt.shape != state.shape:
        raise ValueError(f"gradient shape {Gt.shape} does not match moments {state.shape}")
    return Gt


def plain_update(state: LowRankMoments, Gt, beta1: float, beta2: float) -> LowRankMoments:
    """Standard Adam moment recurrences on the projected gradient."""
    _check_betas(beta1, beta2)
    Gt = _check_shape(state, Gt)
    M = beta1 * state.M + (1.0 - beta1) * Gt
    V = beta2 * state.V + (1.0 - beta2) * Gt**2
    return LowRankMoments(M=M, V=V, t=state.t + 1)


def projection_aware_update(
    state: LowRankMoments,
    S_new: SubspaceBasis,
    S_old: SubspaceBasis,
    Gt,
    beta1: float,
    beta2: float,
    variance_mode: str = "abs",
    t: int | None = None,
) -> LowRankMoments:
    """Moment update that first rotates the statistics into the new basis.

    With ``Q = S_new^T S_old``::

        M <- beta1 * (Q M) + (1 - beta1) * Gt
        V <- beta2 * [(1 - beta2^(t-1)) * h(Q^2 (V - M^2) + (Q M)^2)] + (1 - beta2) * Gt^2

    where ``Q^2`` squares the entries of ``Q`` before the matrix product and
    ``h`` is ``abs`` or a clamp at zero depending on ``variance_mode``.

    ``Gt`` must already be projected with ``S_new``. ``t`` is the 1-based
    index of the update being performed and defaults to ``state.t + 1``.
    The ``(1 - beta2^(t-1))`` factor is kept as written even though it means
    ``Q = I`` does not reproduce the plain second-moment recurrence.
    """
    _check_betas(beta1, beta2)
    if variance_mode not in VARIANCE_MODES:
        raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}, got {variance_mode!r}")
    if t is None:
        t = state.t + 1
    if t < 1:
        raise ValueError(f"step index must be >= 1 for the projection-aware update, got {t}")
    Gt = _check_shape(state, Gt)
    if S_new.B.shape != S_old.B.shape:
        raise ValueError(f"basis shapes differ: {S_new.B.shape} vs {S_old.B.shape}")
    if S_new.rank != state.shape[0]:
        raise ValueError(f"basis rank {S_new.rank} does not match moments {state.shape}")

    Q = S_new.B.T @ S_old.B
    Q2 = Q * Q
    QM = Q @ state.M
    M = beta1 * QM + (1.0 - beta1) * Gt
    # Q2 (V - M^2) + (QM)^2 regrouped so that Q = I returns V bit-for-bit.
    rotated = Q2 @ state.V + (QM**2 - Q2 @ state.M**2)
    if variance_mode == "abs":
        rotated = np.abs(rotated)
    else:
        rotated = np.maximum(rotated, 0.0)
    V = beta2 * ((1.0 - beta2 ** (t - 1)) * rotated) + (1.0 - beta2) * Gt**2
    return LowRankMoments(M=M, V=V, t=state.t + 1)


def regularized_direction(state: LowRankMoments, eps: float) -> np.ndarray:
    """Adam output ``M / sqrt(V + eps)`` (element-wise, eps inside the root)."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return state.M / np.sqrt(state.V + eps)
