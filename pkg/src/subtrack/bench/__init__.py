"""Benchmark harness: test functions, experiments and the CLI."""

from .experiments import (
    run_ablation_experiment,
    run_ackley_experiment,
    run_complexity_smoke,
    run_contraction_experiment,
    run_experiment,
    run_mlp_experiment,
)
from .functions import ackley, ackley_grad
from .spec import ExperimentSpec, build_spec

__all__ = [
    "ExperimentSpec",
    "ackley",
    "ackley_grad",
    "build_spec",
    "run_ablation_experiment",
    "run_ackley_experiment",
    "run_complexity_smoke",
    "run_contraction_experiment",
    "run_experiment",
    "run_mlp_experiment",
]
