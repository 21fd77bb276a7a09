"""Per-parameter SubTrack++ steps and the two baselines.

The step functions are pure: they take a weight matrix, its gradient and the
current :class:`ParamState`, and return the new weights and a new state.
:class:`Optimizer` wraps them for a dictionary of named parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Mapping

import numpy as np

from .linalg import check_finite
from .moments import (
    VARIANCE_MODES,
    LowRankMoments,
    plain_update,
    projection_aware_update,
    regularized_direction,
    zero_moments,
)
from .recovery import RecoveryState, apply_limiter, correction_term, scaling_factors
from .subspace import (
    SubspaceBasis,
    geodesic_step,
    init_from_gradient,
    project,
    project_back,
    residual_and_coeffs,
    tangent_rank1,
)

__all__ = [
    "METHODS",
    "Optimizer",
    "ParamState",
    "StepRecord",
    "SubTrackConfig",
    "full_adam_step",
    "galore_like_step",
    "init_param_state",
    "subtrack_step",
]

logger = logging.getLogger(__name__)

METHODS = ("subtrack", "galore_like", "full_adam")


@dataclass(frozen=True)
class SubTrackConfig:
    """Hyperparameters shared by all three methods.

    ``scale`` multiplies only the projected-back low-rank update; the
    recovery correction uses the raw learning rate. ``bias_correction``
    applies textbook Adam bias correction and is honoured only by the dense
    Adam path (the full-Adam baseline and small-parameter fallback).
    """

    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eta: float = 10000.0
    rank: int = 4
    update_interval: int = 200
    zeta: float = 1.01
    scale: float = 0.25
    variance_mode: str = "abs"
    recovery_enabled: bool = True
    pao_enabled: bool = True
    min_matrix_dim: int = 2
    eps_phi: float = 1e-12
    bias_correction: bool = False

    def __post_init__(self):
        checks = [
            (self.alpha > 0, f"alpha must be > 0, got {self.alpha}"),
            (0.0 <= self.beta1 < 1.0, f"beta1 must be in [0, 1), got {self.beta1}"),
            (0.0 <= self.beta2 < 1.0, f"beta2 must be in [0, 1), got {self.beta2}"),
            (self.eps > 0, f"eps must be > 0, got {self.eps}"),
            (self.eta >= 0 and math.isfinite(self.eta), f"eta must be finite and >= 0, got {self.eta}"),
            (self.rank >= 1, f"rank must be >= 1, got {self.rank}"),
            (self.update_interval >= 1, f"update_interval must be >= 1, got {self.update_interval}"),
            (self.zeta > 0, f"zeta must be > 0, got {self.zeta}"),
            (self.scale > 0, f"scale must be > 0, got {self.scale}"),
            (self.variance_mode in VARIANCE_MODES, f"variance_mode must be one of {VARIANCE_MODES}"),
            (self.min_matrix_dim >= 1, f"min_matrix_dim must be >= 1, got {self.min_matrix_dim}"),
            (self.eps_phi > 0, f"eps_phi must be > 0, got {self.eps_phi}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "SubTrackConfig":
        """Build a config from string or typed values, ignoring nothing silently."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, type(getattr(cls(), key)))
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(raw, kind):
    if not isinstance(raw, str):
        return kind(raw)
    text = raw.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


@dataclass(frozen=True)
class ParamState:
    """Optimizer state for one parameter matrix.

    Low-rank parameters carry a basis, ``r x n`` moments and recovery
    history. Parameters too small for projection (``subspace is None``)
    carry dense moments of the parameter's own shape.
    """

    subspace: SubspaceBasis | None
    moments: LowRankMoments
    recovery: RecoveryState = field(default_factory=RecoveryState)
    step: int = 0

    @property
    def lowrank(self) -> bool:
        return self.subspace is not None


@dataclass(frozen=True)
class StepRecord:
    """Per-step diagnostics emitted to an optional sink."""

    step: int
    name: str
    update_norm: float
    lowrank_norm: float
    lambda_norm: float
    sigma: float
    subspace_updated: bool


Sink = Callable[[StepRecord], None]


def _as_param(W, G, name: str):
    W = np.asarray(W, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    label = name or "<param>"
    if W.ndim != 2 or W.shape != G.shape:
        raise ValueError(f"{label}: weight {W.shape} and gradient {G.shape} must be matching 2-D arrays")
    try:
        check_finite(G, "gradient")
        check_finite(W, "weight")
    except ValueError as exc:
        raise ValueError(f"{label}: {exc}") from None
    return W, G


def _uses_lowrank(shape, cfg: SubTrackConfig) -> bool:
    return min(shape) >= cfg.min_matrix_dim


def init_param_state(G0, cfg: SubTrackConfig) -> ParamState:
    """Fresh state: SVD basis of ``G0``, zero moments, no recovery history."""
    G0 = np.asarray(G0, dtype=np.float64)
    if G0.ndim != 2:
        raise ValueError(f"gradient must be 2-D, got shape {G0.shape}")
    check_finite(G0, "G0")
    if not _uses_lowrank(G0.shape, cfg):
        return ParamState(subspace=None, moments=zero_moments(*G0.shape))
    if cfg.rank > min(G0.shape):
        raise ValueError(f"rank {cfg.rank} exceeds min dimension of {G0.shape}")
    S = init_from_gradient(G0, cfg.rank)
    n = max(G0.shape)
    return ParamState(subspace=S, moments=zero_moments(cfg.rank, n))


def _dense_adam(W, G, state: ParamState, cfg: SubTrackConfig, bias_correction: bool):
    moments = plain_update(state.moments, G, cfg.beta1, cfg.beta2)
    if bias_correction:
        t = moments.t
        m_hat = moments.M / (1.0 - cfg.beta1**t)
        v_hat = moments.V / (1.0 - cfg.beta2**t)
        direction = m_hat / np.sqrt(v_hat + cfg.eps)
    else:
        direction = regularized_direction(moments, cfg.eps)
    update = cfg.alpha * direction
    new_state = ParamState(subspace=None, moments=moments, recovery=state.recovery, step=state.step + 1)
    return W - update, new_state, update


def _emit(sink, step, name, update, lowrank_norm, lambda_norm, sigma, updated):
    if sink is None:
        return
    sink(
        StepRecord(
            step=step,
            name=name,
            update_norm=float(np.linalg.norm(update)),
            lowrank_norm=lowrank_norm,
            lambda_norm=lambda_norm,
            sigma=sigma,
            subspace_updated=updated,
        )
    )


def subtrack_step(W, G, state: ParamState | None, cfg: SubTrackConfig, name: str = "", sink: Sink | None = None):
    """One SubTrack++ step for a single parameter.

    Every ``update_interval`` steps (starting at step 0) the basis moves one
    rank-1 geodesic step and the moments are rotated into it (or plainly
    updated with ``pao_enabled=False``). Otherwise the basis is kept and
    the plain Adam recurrences run. The weight update is
    ``alpha * scale * S (M / sqrt(V + eps)) + alpha * Lambda`` where
    ``Lambda`` is the limited recovery correction.

    Returns:
        ``(W_new, state_new)``.
    """
    W, G = _as_param(W, G, name)
    if state is None:
        state = init_param_state(G, cfg)
    t = state.step

    if not state.lowrank:
        W_new, new_state, update = _dense_adam(W, G, state, cfg, cfg.bias_correction)
        _emit(sink, t, name, update, float(np.linalg.norm(update)), 0.0, math.nan, False)
        return W_new, new_state

    S_old = state.subspace
    Go = S_old.orient(G)
    if Go.shape[0] != S_old.m or Go.shape[1] != state.moments.shape[1]:
        raise ValueError(f"{name or '<param>'}: gradient {G.shape} does not match state")

    updated = t % cfg.update_interval == 0
    sigma = math.nan
    if updated:
        A, R = residual_and_coeffs(S_old, Go)
        T = tangent_rank1(R, A)
        if not T.converged:
            logger.debug("%s: tangent power iteration hit max_iter at step %d", name, t)
        sigma = T.sigma
        S = geodesic_step(S_old, T, cfg.eta, step=t)
        Gt = project(S, Go)
        if cfg.pao_enabled:
            moments = projection_aware_update(
                state.moments, S, S_old, Gt, cfg.beta1, cfg.beta2, cfg.variance_mode, t=t + 1
            )
        else:
            moments = plain_update(state.moments, Gt, cfg.beta1, cfg.beta2)
    else:
        S = S_old
        Gt = project(S, Go)
        moments = plain_update(state.moments, Gt, cfg.beta1, cfg.beta2)

    Gt_opt = regularized_direction(moments, cfg.eps)
    G_hat = project_back(S, Gt_opt)
    lowrank_update = (cfg.alpha * cfg.scale) * G_hat
    recovery = state.recovery
    lambda_norm = 0.0
    if cfg.recovery_enabled:
        phi = scaling_factors(Gt, Gt_opt, cfg.eps_phi)
        Lam = correction_term(Go, S, Gt, phi)
        Lam, recovery = apply_limiter(Lam, recovery, cfg.zeta)
        lambda_norm = recovery.prev_lambda_norm
        update = lowrank_update + cfg.alpha * Lam
    else:
        update = lowrank_update

    if S.transposed:
        update = update.T
    new_state = ParamState(subspace=S, moments=moments, recovery=recovery, step=t + 1)
    _emit(sink, t, name, update, float(np.linalg.norm(lowrank_update)), lambda_norm, sigma, updated)
    return W - update, new_state


def galore_like_step(W, G, state: ParamState | None, cfg: SubTrackConfig, name: str = "", sink: Sink | None = None):
    """Periodic-SVD baseline.

    Every ``update_interval`` steps the basis is replaced by the top-``rank``
    singular vectors of the current gradient. Moments are carried over
    without rotation and recovery scaling is off; otherwise the plumbing
    matches :func:`subtrack_step`.
    """
    W, G = _as_param(W, G, name)
    if state is None:
        state = init_param_state(G, cfg)
    t = state.step

    if not state.lowrank:
        W_new, new_state, update = _dense_adam(W, G, state, cfg, cfg.bias_correction)
        _emit(sink, t, name, update, float(np.linalg.norm(update)), 0.0, math.nan, False)
        return W_new, new_state

    S = state.subspace
    Go = S.orient(G)
    if Go.shape[0] != S.m or Go.shape[1] != state.moments.shape[1]:
        raise ValueError(f"{name or '<param>'}: gradient {G.shape} does not match state")
    updated = t % cfg.update_interval == 0
    if updated:
        fresh = init_from_gradient(Go, S.rank, step=t)
        S = SubspaceBasis(B=fresh.B, transposed=S.transposed, last_update_step=t)
    Gt = project(S, Go)
    moments = plain_update(state.moments, Gt, cfg.beta1, cfg.beta2)
    G_hat = project_back(S, regularized_direction(moments, cfg.eps))
    update = (cfg.alpha * cfg.scale) * G_hat
    if S.transposed:
        update = update.T
    new_state = ParamState(subspace=S, moments=moments, recovery=state.recovery, step=t + 1)
    _emit(sink, t, name, update, float(np.linalg.norm(update)), 0.0, math.nan, updated)
    return W - update, new_state


def full_adam_step(W, G, adam_state: ParamState | None, cfg: SubTrackConfig, name: str = "", sink: Sink | None = None):
    """Dense Adam on the whole matrix, eps inside the square root.

    Bias correction follows ``cfg.bias_correction``.
    """
    W, G = _as_param(W, G, name)
    if adam_state is None:
        adam_state = ParamState(subspace=None, moments=zero_moments(*G.shape))
    if adam_state.lowrank or adam_state.moments.shape != G.shape:
        raise ValueError(f"{name or '<param>'}: state is not a dense Adam state for shape {G.shape}")
    t = adam_state.step
    W_new, new_state, update = _dense_adam(W, G, adam_state, cfg, cfg.bias_correction)
    _emit(sink, t, name, update, float(np.linalg.norm(update)), 0.0, math.nan, False)
    return W_new, new_state


_STEP_FUNCS = {
    "subtrack": subtrack_step,
    "galore_like": galore_like_step,
    "full_adam": full_adam_step,
}


class Optimizer:
    """Steps a dictionary of named 2-D parameters with one of :data:`METHODS`.

    Vectors (1-D arrays) are treated as single-row matrices and therefore
    fall back to dense Adam under the default ``min_matrix_dim``.
    """

    def __init__(self, cfg: SubTrackConfig, method: str = "subtrack", sink: Sink | None = None):
        if method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {method!r}")
        self.cfg = cfg
        self.method = method
        self.sink = sink
        self.states: dict[str, ParamState] = {}
        self._step_fn = _STEP_FUNCS[method]

    def step(
        self,
        params: Mapping[str, np.ndarray],
        grads: Mapping[str, np.ndarray],
        alpha: float | None = None,
    ) -> dict[str, np.ndarray]:
        """Apply one step to every parameter.

        ``alpha`` overrides the configured learning rate for this step only,
        which is how schedules such as warmup are driven from outside.
        """
        cfg = self.cfg if alpha is None else replace(self.cfg, alpha=alpha)
        out = {}
        for name, W in params.items():
            if name not in grads:
                raise KeyError(f"missing gradient for parameter {name!r}")
            W = np.asarray(W, dtype=np.float64)
            G = np.asarray(grads[name], dtype=np.float64)
            shape = W.shape
            if W.ndim == 1:
                W, G = W[None, :], G[None, :]
            W_new, self.states[name] = self._step_fn(W, G, self.states.get(name), cfg, name=name, sink=self.sink)
            out[name] = W_new.reshape(shape)
        return out

    def state_dict(self) -> dict[str, ParamState]:
        return dict(self.states)

    def load_state_dict(self, states: Mapping[str, ParamState]) -> None:
        self.states = dict(states)
