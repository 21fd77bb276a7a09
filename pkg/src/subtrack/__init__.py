"""SubTrack++: low-rank gradient projection with Grassmannian subspace tracking."""

from .engine import (
    METHODS,
    Optimizer,
    ParamState,
    StepRecord,
    SubTrackConfig,
    full_adam_step,
    galore_like_step,
    init_param_state,
    subtrack_step,
)
from .subspace import SubspaceBasis, TangentRank1

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "Optimizer",
    "ParamState",
    "StepRecord",
    "SubTrackConfig",
    "SubspaceBasis",
    "TangentRank1",
    "full_adam_step",
    "galore_like_step",
    "init_param_state",
    "subtrack_step",
]
