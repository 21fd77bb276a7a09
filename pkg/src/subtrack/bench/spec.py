"""Experiment specification and the flat ``key = value`` config format.

Config file grammar, one entry per line::

    # comment
    key = value

Blank lines and lines starting with ``#`` are ignored, surrounding
whitespace is stripped and a key may appear only once. Keys are either
:class:`~subtrack.engine.SubTrackConfig` fields (``alpha``, ``rank``,
``update_interval``, ...) or the bench options listed in
:data:`OPTION_TYPES`. Booleans accept ``true/false``, ``yes/no``, ``on/off``
and ``1/0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from ..engine import METHODS, SubTrackConfig

__all__ = [
    "EXPERIMENTS",
    "OPTION_TYPES",
    "ExperimentSpec",
    "build_spec",
    "parse_config_text",
    "read_config_file",
]

EXPERIMENTS = ("ackley", "contraction", "ablation", "mlp", "complexity")

CONFIG_KEYS = frozenset(f.name for f in fields(SubTrackConfig))


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(raw).split(",") if v.strip())


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(raw).split(",") if v.strip())


def _optional_float(raw):
    if raw is None or str(raw).strip().lower() in ("", "auto", "none"):
        return None
    return float(raw)


# Bench-level options (not optimizer hyperparameters) and their parsers.
OPTION_TYPES = {
    "seeds": int,  # number of consecutive seeds starting at --seed
    "workers": int,  # processes for independent seeds; 1 = serial
    "warmup": int,  # linear learning-rate warmup steps; 0 = off
    "start": _float_list,  # ackley start point, flattened
    "shape": _int_list,  # ackley parameter shape, e.g. "2,2"
    "scale_factors": _float_list,  # ackley scale-factor sweep
    "noise": float,  # ackley gradient noise std
    "samples": int,  # mlp training-set size
    "rows": int,  # contraction / complexity: m
    "cols": int,  # contraction: n
    "mu": _optional_float,  # contraction step size; auto = 0.01 / kappa
    "offset": lambda raw: _parse_bool(raw),  # contraction: use a nonzero A
    "burn_in": int,  # contraction burn-in steps before monotonicity is checked
    "sizes": _int_list,  # complexity: n sweep
    "ranks": _int_list,  # complexity: rank sweep
}

DEFAULT_OPTIONS = {
    "seeds": 1,
    "workers": 1,
    "warmup": 0,
    "start": (3.0, 3.0, 3.0, 3.0),
    "shape": (2, 2),
    "scale_factors": (1.0, 3.0),
    "noise": 0.0,
    "samples": 2048,
    "rows": 16,
    "cols": 24,
    "mu": None,
    "offset": False,
    "burn_in": 5,
    "sizes": (256, 512, 1024, 2048),
    "ranks": (4, 8),
}

_MLP_CFG = {"alpha": 0.003, "rank": 4, "update_interval": 50, "eta": 1.0, "scale": 1.0}

# Per-experiment defaults: (steps, optimizer hyperparameters, bench options).
EXPERIMENT_DEFAULTS: dict[str, tuple[int, dict, dict]] = {
    "ackley": (100, {"alpha": 0.1, "rank": 1, "update_interval": 10, "eta": 0.1, "scale": 1.0}, {}),
    "contraction": (2000, {"rank": 4}, {}),
    "mlp": (400, dict(_MLP_CFG), {}),
    "ablation": (400, dict(_MLP_CFG), {"seeds": 5}),
    "complexity": (20, {}, {"rows": 256}),
}


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse the flat config grammar into raw string values.

    Raises:
        ValueError: on malformed lines, duplicate keys or unknown keys.
    """
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        if key not in CONFIG_KEYS and key not in OPTION_TYPES and key not in ("steps", "seed"):
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one benchmark run.

    ``optimizer`` may be None, meaning "the experiment's full comparison"
    (for example both tracking and periodic-SVD runs for ``ackley``).
    """

    experiment: str
    optimizer: str | None = None
    steps: int = 100
    seed: int = 0
    cfg: SubTrackConfig = field(default_factory=SubTrackConfig)
    output_path: Path | None = None
    options: Mapping[str, object] = field(default_factory=lambda: dict(DEFAULT_OPTIONS))

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.optimizer is not None and self.optimizer not in METHODS:
            raise ValueError(f"optimizer must be one of {METHODS}, got {self.optimizer!r}")
        if int(self.steps) < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        unknown = set(self.options) - set(OPTION_TYPES)
        if unknown:
            raise ValueError(f"unknown options: {sorted(unknown)}")

    def option(self, key: str):
        return self.options.get(key, DEFAULT_OPTIONS[key])


def build_spec(
    experiment: str,
    optimizer: str | None = None,
    steps: int | None = None,
    seed: int | None = None,
    output_path=None,
    file_values: Mapping[str, str] | None = None,
    overrides: Mapping[str, object] | None = None,
) -> ExperimentSpec:
    """Merge defaults, config-file values and explicit overrides (in that order).

    ``overrides`` may hold both optimizer fields and bench options; explicit
    ``steps``/``seed`` arguments win over the file.
    """
    if experiment not in EXPERIMENTS:
        raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    default_steps, cfg_defaults, opt_defaults = EXPERIMENT_DEFAULTS[experiment]
    cfg_values: dict[str, object] = dict(cfg_defaults)
    options: dict[str, object] = {**DEFAULT_OPTIONS, **opt_defaults}
    file_values = dict(file_values or {})

    if steps is None:
        steps = int(file_values.pop("steps", default_steps))
    else:
        file_values.pop("steps", None)
    if seed is None:
        seed = int(file_values.pop("seed", 0))
    else:
        file_values.pop("seed", None)

    for source in (file_values, dict(overrides or {})):
        for key, raw in source.items():
            if key in CONFIG_KEYS:
                cfg_values[key] = raw
            elif key in OPTION_TYPES:
                options[key] = OPTION_TYPES[key](raw) if isinstance(raw, str) else raw
            else:
                raise ValueError(f"unknown key {key!r}")

    cfg = SubTrackConfig.from_mapping(cfg_values)
    if options["seeds"] < 1:
        raise ValueError(f"seeds must be >= 1, got {options['seeds']}")
    if options["workers"] < 1:
        raise ValueError(f"workers must be >= 1, got {options['workers']}")
    if options["warmup"] < 0:
        raise ValueError(f"warmup must be >= 0, got {options['warmup']}")
    n_start, n_shape = len(options["start"]), 1
    for d in options["shape"]:
        n_shape *= int(d)
    if experiment == "ackley" and n_start != n_shape:
        raise ValueError(f"start has {n_start} values but shape {tuple(options['shape'])} needs {n_shape}")
    if experiment == "contraction" and cfg.rank > min(options["rows"], options["cols"]):
        raise ValueError(f"rank {cfg.rank} exceeds min(rows, cols)")
    return ExperimentSpec(
        experiment=experiment,
        optimizer=optimizer,
        steps=int(steps),
        seed=int(seed),
        cfg=cfg,
        output_path=Path(output_path) if output_path is not None else None,
        options=options,
    )


def warmup_alpha(alpha: float, step: int, warmup: int) -> float:
    """Linear warmup: ``alpha * (step + 1) / warmup`` for the first ``warmup`` steps."""
    if warmup <= 0 or step >= warmup:
        return alpha
    return alpha * (step + 1) / warmup
