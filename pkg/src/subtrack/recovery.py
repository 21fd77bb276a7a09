"""Recovery scaling: reuse the gradient mass that the projection throws away.

The discarded residual ``G - S S^T G`` is rescaled column by column with the
ratio between the optimizer's low-rank output and the low-rank gradient,
then passed through a growth limiter that caps the Frobenius norm at
``zeta`` times the previous step's applied norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .subspace import SubspaceBasis

__all__ = ["RecoveryState", "apply_limiter", "correction_term", "scaling_factors"]


@dataclass(frozen=True)
class RecoveryState:
    """Frobenius norm of the last applied correction (None before the first step)."""

    prev_lambda_norm: float | None = None


def scaling_factors(Gt_low, Gt_opt, eps_phi: float = 1e-12) -> np.ndarray:
    """Per-column ratio ``||Gt_opt[:, i]|| / ||Gt_low[:, i]||``.

    Columns whose low-rank norm is below ``eps_phi`` get a factor of 0.
    """
    Gt_low = np.asarray(Gt_low, dtype=np.float64)
    Gt_opt = np.asarray(Gt_opt, dtype=np.float64)
    if Gt_low.shape != Gt_opt.shape:
        raise ValueError(f"shape mismatch: {Gt_low.shape} vs {Gt_opt.shape}")
    if eps_phi <= 0:
        raise ValueError(f"eps_phi must be positive, got {eps_phi}")
    low = np.linalg.norm(Gt_low, axis=0)
    opt = np.linalg.norm(Gt_opt, axis=0)
    phi = np.zeros_like(low)
    ok = low >= eps_phi
    phi[ok] = opt[ok] / low[ok]
    return phi


def correction_term(G, S: SubspaceBasis, Gt_low, phi) -> np.ndarray:
    """Column-scaled residual ``(G - S Gt_low) * phi``; orthogonal to ``span(S)``."""
    G = np.asarray(G, dtype=np.float64)
    Gt_low = np.asarray(Gt_low, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if G.shape[0] != S.m or Gt_low.shape != (S.rank, G.shape[1]) or phi.shape != (G.shape[1],):
        raise ValueError(
            f"incompatible shapes: G {G.shape}, basis {S.B.shape}, "
            f"Gt_low {Gt_low.shape}, phi {phi.shape}"
        )
    return (G - S.B @ Gt_low) * phi


def apply_limiter(Lambda, state: RecoveryState, zeta: float):
    """Cap the growth of the correction norm between consecutive steps.

    If the previous applied norm exists and ``||Lambda|| / prev > zeta``,
    ``Lambda`` is rescaled to norm ``zeta * prev``. A previous norm of zero
    therefore forces the correction to zero. The returned state stores the
    norm of what was actually applied.
    """
    if zeta <= 0:
        raise ValueError(f"zeta must be positive, got {zeta}")
    Lambda = np.asarray(Lambda, dtype=np.float64)
    norm = float(np.linalg.norm(Lambda))
    prev = state.prev_lambda_norm
    if prev is not None and norm > zeta * prev:
        if prev == 0.0:
            Lambda = np.zeros_like(Lambda)
        else:
            cap = zeta * prev
            Lambda = Lambda * (cap / norm)
            # Rounding in the rescale can overshoot the cap by an ulp or two;
            # shave it off so the bound holds exactly as computed.
            while float(np.linalg.norm(Lambda)) > cap:
                Lambda = Lambda * (1.0 - 2.0**-52)
        norm = float(np.linalg.norm(Lambda))
    return Lambda, RecoveryState(prev_lambda_norm=norm)
