"""Analytic test functions for the optimizer benchmarks."""

from __future__ import annotations

import numpy as np

__all__ = ["ackley", "ackley_grad"]

_A, _B, _C = 20.0, 0.2, 2.0 * np.pi


def _as_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 1:
        raise ValueError("ackley needs at least one coordinate")
    return x


def ackley(x) -> float:
    """Ackley function ``-20 exp(-0.2 rms(x)) - exp(mean cos(2 pi x)) + 20 + e``.

    Accepts any array shape; the input is flattened. The global minimum is
    ``f(0) = 0``.
    """
    x = _as_vector(x)
    rms = np.sqrt(np.mean(x * x))
    return float(-_A * np.exp(-_B * rms) - np.exp(np.mean(np.cos(_C * x))) + _A + np.e)


def ackley_grad(x) -> np.ndarray:
    """Analytic gradient of :func:`ackley`, shaped like the input.

    The norm term has a removable singularity at the origin, where the
    gradient is defined as zero.
    """
    arr = np.asarray(x, dtype=np.float64)
    x = _as_vector(arr)
    d = x.size
    rms = np.sqrt(np.mean(x * x))
    if rms == 0.0:
        g_norm = np.zeros(d)
    else:
        g_norm = _A * _B * np.exp(-_B * rms) * x / (d * rms)
    g_cos = np.exp(np.mean(np.cos(_C * x))) * _C * np.sin(_C * x) / d
    return (g_norm + g_cos).reshape(arr.shape)
